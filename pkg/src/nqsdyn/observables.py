"""Physical diagnostics: magnetizations, two-point correlations, and the
Loschmidt rate function, on either sampled NQS or dense states."""

from __future__ import annotations

from typing import Optional, Union

import numpy as np

from .ansatz import Ansatz, ParameterVector
from .estimators import ScalarEstimate, expectation
from .model import PauliOperator, pauli_string
from .oracle import DenseState, apply_operator, nqs_to_dense
from .sampler import SampleSet

LOSCHMIDT_RATE_CAP = 100.0

AXIS_NAMES = ("x", "y", "z")


def magnetization_operator(axis: str, n_sites: int, site: Optional[int] = None) -> PauliOperator:
    """sigma^axis at one site, or the site average."""
    axis = axis.upper()
    if site is not None:
        return PauliOperator([pauli_string(1.0, (site, axis))], n_sites)
    return PauliOperator(
        [pauli_string(1.0 / n_sites, (i, axis)) for i in range(n_sites)], n_sites
    )


def correlation_operator(axis: str, i: int, j: int, n_sites: int) -> PauliOperator:
    """sigma^axis_i sigma^axis_j two-point operator."""
    if i == j:
        raise ValueError("correlation needs two distinct sites")
    axis = axis.upper()
    return PauliOperator([pauli_string(1.0, (i, axis), (j, axis))], n_sites)


def _dense_estimate(op: PauliOperator, state: DenseState) -> ScalarEstimate:
    applied = apply_operator(op, state)
    norm = np.vdot(state.amplitudes, state.amplitudes).real
    mean = complex(np.vdot(state.amplitudes, applied.amplitudes) / norm)
    second = np.vdot(applied.amplitudes, applied.amplitudes).real / norm
    variance = max(second - abs(mean) ** 2, 0.0)
    return ScalarEstimate(mean, variance, 0.0, float("inf"))


def _estimate(op, state, theta, samples) -> ScalarEstimate:
    if isinstance(state, DenseState):
        return _dense_estimate(op, state)
    if theta is None or samples is None:
        raise ValueError("estimating on an ansatz needs theta and samples")
    return expectation(op, state, theta, samples)


def magnetization(
    axis: str,
    state: Union[Ansatz, DenseState],
    site: Optional[int] = None,
    theta: Optional[ParameterVector] = None,
    samples: Optional[SampleSet] = None,
) -> ScalarEstimate:
    """<sigma^axis_site> or the site-averaged magnetization."""
    n = state.n_sites
    return _estimate(magnetization_operator(axis, n, site), state, theta, samples)


def correlation(
    axis: str,
    i: int,
    j: int,
    state: Union[Ansatz, DenseState],
    theta: Optional[ParameterVector] = None,
    samples: Optional[SampleSet] = None,
) -> ScalarEstimate:
    """<sigma^axis_i sigma^axis_j>."""
    return _estimate(correlation_operator(axis, i, j, state.n_sites), state, theta, samples)


def loschmidt_rate(
    psi0: DenseState,
    state: Union[Ansatz, DenseState],
    theta: Optional[ParameterVector] = None,
    cap: float = LOSCHMIDT_RATE_CAP,
) -> float:
    """Rate function -log F(psi0, psi) / N; orthogonal states cap at ``cap``.

    The overlap is taken against the dense initial state, so the system must
    fit the oracle cap.
    """
    from .oracle import fidelity

    if isinstance(state, DenseState):
        current = state
    else:
        if theta is None:
            raise ValueError("loschmidt_rate on an ansatz needs theta")
        current = nqs_to_dense(state, theta)
    f = fidelity(psi0, current)
    if f <= 0.0:
        return cap
    return float(min(-np.log(f) / psi0.n_sites, cap))


def parse_observable_specs(specs: list, n_sites: int) -> dict[str, PauliOperator]:
    """Observable config entries -> named Pauli operators.

    Supported kinds: ``magnetization`` (axis, optional site) and
    ``correlation`` (axis, i, j).  The ``loschmidt`` kind is handled by the
    run driver (it is an overlap, not an operator expectation).
    """
    out = {}
    for spec in specs:
        kind = spec.get("kind")
        if kind == "magnetization":
            axis = spec["axis"].lower()
            site = spec.get("site")
            if axis not in AXIS_NAMES:
                raise ValueError(f"unknown axis {axis!r}")
            name = f"magnetization_{axis}" + ("" if site is None else f"_site{site}")
            out[name] = magnetization_operator(axis, n_sites, site)
        elif kind == "correlation":
            axis = spec["axis"].lower()
            i, j = int(spec["i"]), int(spec["j"])
            if axis not in AXIS_NAMES:
                raise ValueError(f"unknown axis {axis!r}")
            out[f"correlation_{axis}{axis}_{i}_{j}"] = correlation_operator(
                axis, i, j, n_sites
            )
        elif kind == "loschmidt":
            continue
        else:
            raise ValueError(f"unknown observable kind {kind!r}")
    return out


def wants_loschmidt(specs: list) -> bool:
    return any(spec.get("kind") == "loschmidt" for spec in specs)
