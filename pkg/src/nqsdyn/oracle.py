"""Dense exact state-vector reference for small systems.

This is the ground-truth side of every derived fixture: dense operators,
exact time evolution, fidelities and two-time correlators.  Evolution uses
matrix-free fixed-step RK4 with an internal step-halving convergence check,
so no dense matrix exponential is required; a spectral propagator is still
provided for operator-level comparisons in tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import PauliOperator, all_configurations

STATE_CAP = 16  # largest n_sites for dense state vectors by default
MATRIX_CAP = 12  # largest n_sites for explicit dense matrices by default


@dataclass
class DenseState:
    """State vector over the full computational basis; norm not forced to 1."""

    amplitudes: np.ndarray
    n_sites: int

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (1 << self.n_sites,):
            raise ValueError("amplitude vector length must be 2**n_sites")
        if not np.all(np.isfinite(self.amplitudes)):
            raise ValueError("amplitudes must be finite")

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "DenseState":
        return DenseState(self.amplitudes / self.norm, self.n_sites)


def _check_cap(n_sites: int, cap: int, what: str):
    if n_sites > cap:
        mem = (1 << n_sites) * 16 if what == "state" else (1 << (2 * n_sites)) * 16
        raise ValueError(
            f"{what} for n_sites={n_sites} exceeds cap {cap} "
            f"(would need {mem / 1e6:.0f} MB)"
        )


class _OperatorKernel:
    """Precompiled matrix-free action of an operator on full state vectors."""

    def __init__(self, op: PauliOperator):
        bits = all_configurations(op.n_sites)
        indices = np.arange(1 << op.n_sites)
        self.rows = []
        for group in op.connected_groups:
            values = group.matrix_elements(bits)
            self.rows.append((indices ^ group.flip_mask, values))

    def apply(self, psi: np.ndarray) -> np.ndarray:
        out = np.zeros_like(psi)
        for source, values in self.rows:
            out += values * psi[source]
        return out


def apply_operator(op: PauliOperator, psi: DenseState) -> DenseState:
    """Dense action op|psi>."""
    _check_cap(op.n_sites, STATE_CAP, "state")
    if psi.n_sites != op.n_sites:
        raise ValueError("operator and state size mismatch")
    return DenseState(_OperatorKernel(op).apply(psi.amplitudes), psi.n_sites)


def dense_matrix(op: PauliOperator, cap: int = MATRIX_CAP) -> np.ndarray:
    """Explicit dense matrix of a Pauli operator (small systems only)."""
    _check_cap(op.n_sites, cap, "matrix")
    dim = 1 << op.n_sites
    bits = all_configurations(op.n_sites)
    rows = np.arange(dim)
    out = np.zeros((dim, dim), dtype=np.complex128)
    for group in op.connected_groups:
        out[rows, rows ^ group.flip_mask] += group.matrix_elements(bits)
    return out


def dense_propagator(op: PauliOperator, tau: float, cap: int = MATRIX_CAP) -> np.ndarray:
    """exp(-i op tau) for a Hermitian operator, via eigendecomposition."""
    if not op.is_hermitian:
        raise ValueError("propagator requires a Hermitian generator")
    evals, evecs = np.linalg.eigh(dense_matrix(op, cap))
    return (evecs * np.exp(-1j * evals * tau)) @ evecs.conj().T


def _rk4_evolve(kernel: _OperatorKernel, psi: np.ndarray, t: float, n_steps: int):
    dt = t / n_steps
    for _ in range(n_steps):
        k1 = -1j * kernel.apply(psi)
        k2 = -1j * kernel.apply(psi + 0.5 * dt * k1)
        k3 = -1j * kernel.apply(psi + 0.5 * dt * k2)
        k4 = -1j * kernel.apply(psi + dt * k3)
        psi = psi + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return psi


def exact_evolve(
    psi0: DenseState,
    hamiltonian: PauliOperator,
    t: float,
    dt_ref: float = 0.02,
    cap: int = STATE_CAP,
    tol: float = 1e-10,
) -> DenseState:
    """Integrate i d/dt |psi> = H |psi> to time t.

    Fixed-step RK4, self-validating: the step is halved until two successive
    resolutions agree to ``tol`` (relative max amplitude deviation).
    """
    _check_cap(hamiltonian.n_sites, cap, "state")
    if psi0.n_sites != hamiltonian.n_sites:
        raise ValueError("state and Hamiltonian size mismatch")
    if t == 0.0:
        return DenseState(psi0.amplitudes.copy(), psi0.n_sites)

    kernel = _OperatorKernel(hamiltonian)
    scale = psi0.norm
    n_steps = max(1, int(np.ceil(abs(t) / dt_ref)))
    current = _rk4_evolve(kernel, psi0.amplitudes, t, n_steps)
    for _ in range(40):
        n_steps *= 2
        finer = _rk4_evolve(kernel, psi0.amplitudes, t, n_steps)
        if np.max(np.abs(finer - current)) < tol * scale:
            return DenseState(finer, psi0.n_sites)
        current = finer
    raise RuntimeError("exact_evolve failed to converge under step halving")


def fidelity(a: DenseState, b: DenseState) -> float:
    """|<a|b>|^2 / (<a|a><b|b>), clipped into [0, 1]."""
    overlap = np.vdot(a.amplitudes, b.amplitudes)
    value = (overlap.real**2 + overlap.imag**2) / (
        np.vdot(a.amplitudes, a.amplitudes).real
        * np.vdot(b.amplitudes, b.amplitudes).real
    )
    return float(min(max(value, 0.0), 1.0))


def expectation_dense(op: PauliOperator, psi: DenseState) -> complex:
    """<psi| op |psi> / <psi|psi>."""
    applied = apply_operator(op, psi)
    return complex(
        np.vdot(psi.amplitudes, applied.amplitudes)
        / np.vdot(psi.amplitudes, psi.amplitudes)
    )


def nqs_to_dense(ansatz, theta, n_sites: int | None = None) -> DenseState:
    """Dense amplitudes exp(chi(x)); minus-infinity sentinels map to 0."""
    n = ansatz.n_sites if n_sites is None else n_sites
    if n != ansatz.n_sites:
        raise ValueError("n_sites disagrees with the ansatz")
    _check_cap(n, STATE_CAP, "state")
    log_amps = ansatz.log_amplitude_batch(theta, all_configurations(n))
    amplitudes = np.zeros(1 << n, dtype=np.complex128)
    finite = ~np.isneginf(log_amps.real)
    amplitudes[finite] = np.exp(log_amps[finite])
    return DenseState(amplitudes, n)


def two_time_correlator(
    psi0: DenseState,
    hamiltonian: PauliOperator,
    op_a: PauliOperator,
    op_b: PauliOperator,
    t: float,
) -> complex:
    """<psi0| B(t) A |psi0> for diagonal A, via two evolved states."""
    if not op_a.is_diagonal:
        raise ValueError("A must be diagonal in the computational basis")
    u = exact_evolve(psi0, hamiltonian, t)
    w = exact_evolve(apply_operator(op_a, psi0), hamiltonian, t)
    bw = apply_operator(op_b, w)
    return complex(np.vdot(u.amplitudes, bw.amplitudes))
