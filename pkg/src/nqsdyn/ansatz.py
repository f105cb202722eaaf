"""Parametrized log-amplitude maps chi_theta(x) with psi = exp(chi).

All architectures evaluate in batch over a (n, N) uint8 bit matrix.  Complex
network parameters are stored as interleaved real/imaginary slots in a flat
real ParameterVector; for holomorphic architectures the log-derivative of an
imaginary slot is i times that of its real partner, which the estimator
kernels exploit.

A vanishing amplitude is signalled by the distinguished log-amplitude value
``LOG_ZERO`` (real part -inf), never by an exception from evaluation itself.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .model import PauliOperator, PauliString, SpinConfiguration

LOG_ZERO = complex(float("-inf"), 0.0)


def is_log_zero(value: complex) -> bool:
    return value.real == float("-inf")


@dataclass(frozen=True)
class ParamBlock:
    """One named block of the flat real parameter vector."""

    name: str
    kind: str  # "complex": interleaved re/im pairs; "real": plain slots
    offset: int
    size: int  # number of real slots
    shape: tuple[int, ...]  # logical (complex or real) shape

    def __post_init__(self):
        if self.kind not in ("complex", "real"):
            raise ValueError(f"unknown block kind {self.kind!r}")
        if self.kind == "complex" and self.size % 2:
            raise ValueError("complex block needs an even number of real slots")


@dataclass(frozen=True)
class ParameterVector:
    """Flat real parameter values plus the layout that interprets them."""

    values: np.ndarray
    layout: tuple[ParamBlock, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)  # own copy, frozen below
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter values must be finite")
        expected = 0
        for block in self.layout:
            if block.offset != expected:
                raise ValueError("layout blocks must tile the vector exhaustively")
            expected += block.size
        if expected != values.size:
            raise ValueError(
                f"layout covers {expected} slots but vector has {values.size}"
            )

    def __len__(self):
        return self.values.size

    def block(self, name: str) -> np.ndarray:
        for b in self.layout:
            if b.name == name:
                raw = self.values[b.offset : b.offset + b.size]
                if b.kind == "complex":
                    return (raw[0::2] + 1j * raw[1::2]).reshape(b.shape)
                return raw.reshape(b.shape)
        raise KeyError(name)

    def replace(self, values: np.ndarray) -> "ParameterVector":
        return ParameterVector(np.array(values, dtype=np.float64), self.layout)


def pack_complex(blocks: list[tuple[ParamBlock, np.ndarray]]) -> np.ndarray:
    """Flatten logical block values into the interleaved real vector."""
    total = sum(b.size for b, _ in blocks)
    values = np.empty(total, dtype=np.float64)
    for block, data in blocks:
        flat = np.asarray(data).reshape(-1)
        if block.kind == "complex":
            values[block.offset : block.offset + block.size : 2] = flat.real
            values[block.offset + 1 : block.offset + block.size : 2] = flat.imag
        else:
            values[block.offset : block.offset + block.size] = flat.real
    return values


@dataclass(frozen=True)
class LogDerivatives:
    """Gamma_k(x) = d chi / d theta_k at one configuration."""

    gamma: np.ndarray


def _stable_log_cosh(z: np.ndarray) -> np.ndarray:
    # log cosh(z) without overflow for large |Re z|
    sign = np.where(z.real >= 0, 1.0, -1.0)
    zs = sign * z
    return zs - math.log(2.0) + np.log1p(np.exp(-2.0 * zs))


class Ansatz:
    """Base class: evaluation, gradient, and diagonal-factor composition."""

    architecture: str = "abstract"
    holomorphic: bool = False

    def __init__(self, n_sites: int, diagonal_factors: tuple[PauliOperator, ...] = ()):
        self.n_sites = n_sites
        self.diagonal_factors = tuple(diagonal_factors)

    # --- subclass surface -------------------------------------------------
    @property
    def layout(self) -> tuple[ParamBlock, ...]:
        raise NotImplementedError

    @property
    def shape_metadata(self) -> dict:
        raise NotImplementedError

    def _core_log_amplitude_batch(self, theta, bits) -> np.ndarray:
        raise NotImplementedError

    def _core_log_derivatives_batch(self, theta, bits) -> np.ndarray:
        """(n, P) complex for generic architectures; holomorphic ones
        implement _complex_log_derivatives_batch instead."""
        if self.holomorphic:
            gc = self._complex_log_derivatives_batch(theta, bits)
            out = np.empty((gc.shape[0], 2 * gc.shape[1]), dtype=np.complex128)
            out[:, 0::2] = gc
            out[:, 1::2] = 1j * gc
            return out
        raise NotImplementedError

    def _complex_log_derivatives_batch(self, theta, bits) -> np.ndarray:
        raise NotImplementedError

    def _replace_factors(self, factors) -> "Ansatz":
        raise NotImplementedError

    # --- shared machinery ---------------------------------------------------
    @property
    def n_parameters(self) -> int:
        return sum(b.size for b in self.layout)

    def _check_theta(self, theta: ParameterVector):
        if len(theta) != self.n_parameters:
            raise ValueError(
                f"expected {self.n_parameters} parameters, got {len(theta)}"
            )

    def log_amplitude_batch(self, theta: ParameterVector, bits: np.ndarray) -> np.ndarray:
        self._check_theta(theta)
        chi = self._core_log_amplitude_batch(theta, bits)
        for factor in self.diagonal_factors:
            values = factor.diagonal_values(bits)
            zero = values == 0.0
            logs = np.empty_like(values)
            logs[~zero] = np.log(values[~zero])
            logs[zero] = LOG_ZERO
            chi = chi + logs
        return chi

    def log_derivatives_batch(self, theta: ParameterVector, bits: np.ndarray) -> np.ndarray:
        # diagonal factors are parameter free: no gradient contribution
        self._check_theta(theta)
        return self._core_log_derivatives_batch(theta, bits)

    def complex_log_derivatives_batch(self, theta, bits) -> np.ndarray:
        if not self.holomorphic:
            raise ValueError("complex-pair fast path requires a holomorphic ansatz")
        self._check_theta(theta)
        return self._complex_log_derivatives_batch(theta, bits)

    def log_amplitude(self, theta: ParameterVector, x: SpinConfiguration) -> complex:
        return complex(self.log_amplitude_batch(theta, x.to_array()[None, :])[0])

    def log_derivatives(self, theta: ParameterVector, x: SpinConfiguration) -> LogDerivatives:
        return LogDerivatives(self.log_derivatives_batch(theta, x.to_array()[None, :])[0])

    def initial_parameters(self, seed: int | None = None, scale: float = 1e-2) -> ParameterVector:
        """Small random complex (or real) values, reproducible from the seed."""
        rng = np.random.default_rng(seed)
        values = scale * rng.standard_normal(self.n_parameters)
        return ParameterVector(values, self.layout)


def attach_diagonal(ansatz: Ansatz, op: PauliOperator) -> Ansatz:
    """New ansatz with chi(x) += log O_x for a diagonal operator O."""
    if op.n_sites != ansatz.n_sites:
        raise ValueError("operator and ansatz size mismatch")
    if not op.is_diagonal:
        raise ValueError("attach_diagonal requires a diagonal operator")
    return ansatz._replace_factors(ansatz.diagonal_factors + (op,))


def _spins(bits: np.ndarray) -> np.ndarray:
    return 1.0 - 2.0 * bits.astype(np.float64)


class FullParametrization(Ansatz):
    """One independent complex parameter per basis amplitude: chi(x) = theta_x.

    The variational manifold is the whole Hilbert space, which makes TDVP
    exact; used as a method oracle at small sizes.
    """

    architecture = "full-parametrization"
    holomorphic = True

    def __init__(self, n_sites: int, diagonal_factors=()):
        if n_sites > 12:
            raise ValueError("full parametrization is capped at 12 sites")
        super().__init__(n_sites, diagonal_factors)
        dim = 1 << n_sites
        self._layout = (ParamBlock("log_amplitudes", "complex", 0, 2 * dim, (dim,)),)

    @property
    def layout(self):
        return self._layout

    @property
    def shape_metadata(self):
        return {}

    def _labels(self, bits):
        weights = 1 << np.arange(self.n_sites, dtype=np.int64)
        return bits.astype(np.int64) @ weights

    def _core_log_amplitude_batch(self, theta, bits):
        return theta.block("log_amplitudes")[self._labels(bits)]

    def _complex_log_derivatives_batch(self, theta, bits):
        dim = 1 << self.n_sites
        gc = np.zeros((bits.shape[0], dim), dtype=np.complex128)
        gc[np.arange(bits.shape[0]), self._labels(bits)] = 1.0
        return gc

    def _replace_factors(self, factors):
        return FullParametrization(self.n_sites, factors)

    def parameters_from_amplitudes(self, amplitudes: np.ndarray) -> ParameterVector:
        """theta with chi(x) = log amplitudes[x]; amplitudes must be nonzero."""
        amplitudes = np.asarray(amplitudes, dtype=np.complex128)
        if np.any(amplitudes == 0.0):
            raise ValueError("full parametrization cannot encode exact zeros")
        return ParameterVector(
            pack_complex([(self._layout[0], np.log(amplitudes))]), self._layout
        )


class RestrictedBoltzmann(Ansatz):
    """Complex RBM in log-cosh form.

    chi(x) = sum_i a_i s_i + sum_j log cosh(b_j + sum_i W_ji s_i),
    with s_i = +1 for spin up and -1 for spin down.
    """

    architecture = "rbm"
    holomorphic = True

    def __init__(self, n_sites: int, alpha: float = 1.0, diagonal_factors=()):
        super().__init__(n_sites, diagonal_factors)
        self.alpha = alpha
        self.n_hidden = max(1, int(round(alpha * n_sites)))
        n, m = n_sites, self.n_hidden
        self._layout = (
            ParamBlock("visible_bias", "complex", 0, 2 * n, (n,)),
            ParamBlock("hidden_bias", "complex", 2 * n, 2 * m, (m,)),
            ParamBlock("weights", "complex", 2 * (n + m), 2 * m * n, (m, n)),
        )

    @property
    def layout(self):
        return self._layout

    @property
    def shape_metadata(self):
        return {"alpha": self.alpha}

    def _core_log_amplitude_batch(self, theta, bits):
        s = _spins(bits)
        a = theta.block("visible_bias")
        b = theta.block("hidden_bias")
        w = theta.block("weights")
        pre = s @ w.T + b
        return s @ a + _stable_log_cosh(pre).sum(axis=1)

    def _complex_log_derivatives_batch(self, theta, bits):
        s = _spins(bits)
        b = theta.block("hidden_bias")
        w = theta.block("weights")
        th = np.tanh(s @ w.T + b)  # (n, M)
        n_cfg = bits.shape[0]
        gc = np.empty((n_cfg, self.n_sites + self.n_hidden * (1 + self.n_sites)),
                      dtype=np.complex128)
        gc[:, : self.n_sites] = s
        gc[:, self.n_sites : self.n_sites + self.n_hidden] = th
        outer = th[:, :, None] * s[:, None, :]
        gc[:, self.n_sites + self.n_hidden :] = outer.reshape(n_cfg, -1)
        return gc

    def _replace_factors(self, factors):
        return RestrictedBoltzmann(self.n_sites, self.alpha, factors)


class Jastrow(Ansatz):
    """Diagonal polynomial in the spin variables s_i = +/-1.

    chi(x) = sum_k c_k prod_{i in term_k} s_i with complex coefficients c_k.
    The default term set is constant + one-body + two-body; higher-order
    terms arise from the analytic short-time construction.
    """

    architecture = "jastrow"
    holomorphic = True

    def __init__(self, n_sites: int, terms: tuple[tuple[int, ...], ...] | None = None,
                 diagonal_factors=()):
        super().__init__(n_sites, diagonal_factors)
        if terms is None:
            terms = ((),)
            terms += tuple((i,) for i in range(n_sites))
            terms += tuple(combinations(range(n_sites), 2))
        seen = set()
        for term in terms:
            if tuple(term) != tuple(sorted(set(term))):
                raise ValueError(f"term {term} must list distinct increasing sites")
            if any(i >= n_sites for i in term):
                raise ValueError(f"term {term} references a site outside the lattice")
            if term in seen:
                raise ValueError(f"duplicate term {term}")
            seen.add(term)
        self.terms = tuple(tuple(t) for t in terms)
        k = len(self.terms)
        self._layout = (ParamBlock("coefficients", "complex", 0, 2 * k, (k,)),)
        mask = np.zeros((n_sites, k), dtype=np.uint8)
        for idx, term in enumerate(self.terms):
            for site in term:
                mask[site, idx] = 1
        self._site_mask = mask

    @property
    def layout(self):
        return self._layout

    @property
    def shape_metadata(self):
        return {"terms": [list(t) for t in self.terms]}

    def _monomials(self, bits):
        parity = (bits.astype(np.int64) @ self._site_mask) & 1
        return 1.0 - 2.0 * parity

    def _core_log_amplitude_batch(self, theta, bits):
        return self._monomials(bits) @ theta.block("coefficients")

    def _complex_log_derivatives_batch(self, theta, bits):
        return self._monomials(bits).astype(np.complex128)

    def _replace_factors(self, factors):
        out = Jastrow(self.n_sites, self.terms, factors)
        return out

    def parameters_from_coefficients(self, coefficients: np.ndarray) -> ParameterVector:
        return ParameterVector(
            pack_complex([(self._layout[0], coefficients)]), self._layout
        )


class FeedForward(Ansatz):
    """Real-parameter multilayer perceptron with amplitude and phase heads.

    tanh activations on real pre-activations; the two linear heads give
    chi(x) = amplitude(x) + i * phase(x).
    """

    architecture = "feedforward"
    holomorphic = False

    def __init__(self, n_sites: int, hidden: tuple[int, ...] = (8,), diagonal_factors=()):
        super().__init__(n_sites, diagonal_factors)
        if not hidden:
            raise ValueError("at least one hidden layer is required")
        self.hidden = tuple(int(h) for h in hidden)
        blocks = []
        offset = 0
        previous = n_sites
        for l_idx, width in enumerate(self.hidden):
            for name, shape in ((f"w{l_idx}", (width, previous)), (f"b{l_idx}", (width,))):
                size = int(np.prod(shape))
                blocks.append(ParamBlock(name, "real", offset, size, shape))
                offset += size
            previous = width
        for head in ("amp", "phase"):
            blocks.append(ParamBlock(f"w_{head}", "real", offset, previous, (previous,)))
            offset += previous
            blocks.append(ParamBlock(f"b_{head}", "real", offset, 1, (1,)))
            offset += 1
        self._layout = tuple(blocks)

    @property
    def layout(self):
        return self._layout

    @property
    def shape_metadata(self):
        return {"hidden": list(self.hidden)}

    def _forward(self, theta, bits):
        activations = [_spins(bits)]
        for l_idx in range(len(self.hidden)):
            w = theta.block(f"w{l_idx}")
            b = theta.block(f"b{l_idx}")
            activations.append(np.tanh(activations[-1] @ w.T + b))
        return activations

    def _core_log_amplitude_batch(self, theta, bits):
        top = self._forward(theta, bits)[-1]
        amp = top @ theta.block("w_amp") + theta.block("b_amp")[0]
        phase = top @ theta.block("w_phase") + theta.block("b_phase")[0]
        return amp + 1j * phase

    def _core_log_derivatives_batch(self, theta, bits):
        activations = self._forward(theta, bits)
        top = activations[-1]
        n_cfg = bits.shape[0]
        gamma = np.empty((n_cfg, self.n_parameters), dtype=np.complex128)

        heads = {"amp": 1.0, "phase": 1j}
        delta = np.zeros((n_cfg, top.shape[1]), dtype=np.complex128)
        for head, unit in heads.items():
            w_block = next(b for b in self._layout if b.name == f"w_{head}")
            b_block = next(b for b in self._layout if b.name == f"b_{head}")
            gamma[:, w_block.offset : w_block.offset + w_block.size] = unit * top
            gamma[:, b_block.offset] = unit
            delta += unit * theta.block(f"w_{head}")[None, :]

        for l_idx in range(len(self.hidden) - 1, -1, -1):
            delta = delta * (1.0 - activations[l_idx + 1] ** 2)
            w_block = next(b for b in self._layout if b.name == f"w{l_idx}")
            b_block = next(b for b in self._layout if b.name == f"b{l_idx}")
            grad_w = delta[:, :, None] * activations[l_idx][:, None, :]
            gamma[:, w_block.offset : w_block.offset + w_block.size] = grad_w.reshape(
                n_cfg, -1
            )
            gamma[:, b_block.offset : b_block.offset + b_block.size] = delta
            delta = delta @ theta.block(f"w{l_idx}")

        return gamma

    def _replace_factors(self, factors):
        return FeedForward(self.n_sites, self.hidden, factors)


@dataclass(frozen=True)
class ProductState:
    """Per-site (up, down) amplitudes of an unentangled reference state."""

    site_amplitudes: tuple[tuple[complex, complex], ...]

    @property
    def n_sites(self) -> int:
        return len(self.site_amplitudes)

    @staticmethod
    def plus_x(n_sites: int) -> "ProductState":
        a = 1.0 / math.sqrt(2.0)
        return ProductState(((a, a),) * n_sites)

    @staticmethod
    def uniform(n_sites: int) -> "ProductState":
        return ProductState(((1.0, 1.0),) * n_sites)

    def dense_amplitudes(self) -> np.ndarray:
        psi = np.ones(1, dtype=np.complex128)
        for up, down in self.site_amplitudes:
            psi = np.kron(np.array([up, down], dtype=np.complex128), psi)
        return psi


class _Poly:
    """Polynomial over s_i = +/-1 variables: monomial set -> coefficient."""

    def __init__(self, data: dict[frozenset, complex] | None = None):
        self.data = dict(data or {})

    @staticmethod
    def constant(c: complex) -> "_Poly":
        return _Poly({frozenset(): complex(c)})

    def add(self, other: "_Poly") -> "_Poly":
        out = dict(self.data)
        for key, c in other.data.items():
            out[key] = out.get(key, 0.0) + c
        return _Poly(out)

    def scale(self, c: complex) -> "_Poly":
        return _Poly({k: c * v for k, v in self.data.items()})

    def mul(self, other: "_Poly") -> "_Poly":
        out: dict[frozenset, complex] = {}
        for k1, c1 in self.data.items():
            for k2, c2 in other.data.items():
                key = k1 ^ k2  # s_i^2 = 1
                out[key] = out.get(key, 0.0) + c1 * c2
        return _Poly(out)

    def flipped(self, flip_sites: frozenset) -> "_Poly":
        """Substitute s_i -> -s_i on the given sites."""
        return _Poly(
            {k: c * (-1.0) ** len(k & flip_sites) for k, c in self.data.items()}
        )


def _affine_flip_ratio(up: complex, down: complex, site: int) -> _Poly:
    """psi0(flip_i x)/psi0(x) as an affine polynomial in s_i."""
    r_up = down / up  # value when s_i = +1
    r_down = up / down  # value when s_i = -1
    return _Poly(
        {
            frozenset(): 0.5 * (r_up + r_down),
            frozenset({site}): 0.5 * (r_up - r_down),
        }
    )


def _local_estimator_poly(psi0: ProductState, op: PauliOperator) -> dict:
    """Per-term polynomials m_T(x) * psi0(x^f_T)/psi0(x), keyed by flip set."""
    polys = {}
    for t_idx, term in enumerate(op.terms):
        poly = _Poly.constant(term.coefficient)
        flip = set()
        for site, axis in term.factors:
            if axis == "Z":
                poly = poly.mul(_Poly({frozenset({site}): 1.0}))
            else:
                if axis == "Y":
                    poly = poly.mul(_Poly({frozenset({site}): -1j}))
                up, down = psi0.site_amplitudes[site]
                poly = poly.mul(_affine_flip_ratio(up, down, site))
                flip.add(site)
        polys[t_idx] = (frozenset(flip), poly)
    return polys


def cumulant_init(psi0: ProductState, hamiltonian: PauliOperator, t: float) -> tuple[Jastrow, ParameterVector]:
    """Analytic short-time state from the second-order local cumulants.

    Returns a Jastrow ansatz (with the higher-order terms the construction
    needs) whose amplitudes equal

        psi0(x) * exp(-i t E_loc(x) - t^2/2 (H2_loc(x) - E_loc(x)^2)),

    exact per configuration; the deviation from the true evolved state is
    O(t^3) per amplitude.  Requires nonzero single-site amplitudes.
    """
    if psi0.n_sites != hamiltonian.n_sites:
        raise ValueError("state and Hamiltonian size mismatch")
    for up, down in psi0.site_amplitudes:
        if up == 0 or down == 0:
            raise ValueError(
                "cumulant initialization needs a product state with full support"
            )

    log_psi0 = _Poly()
    for site, (up, down) in enumerate(psi0.site_amplitudes):
        lu, ld = np.log(complex(up)), np.log(complex(down))
        log_psi0 = log_psi0.add(
            _Poly({frozenset(): 0.5 * (lu + ld), frozenset({site}): 0.5 * (lu - ld)})
        )

    term_polys = _local_estimator_poly(psi0, hamiltonian)
    e_loc = _Poly()
    for flip, poly in term_polys.values():
        e_loc = e_loc.add(poly)

    # H2_loc(x) = sum_T m_T(x) r_T(x) E_loc(x ^ f_T)
    h2_loc = _Poly()
    for flip, poly in term_polys.values():
        h2_loc = h2_loc.add(poly.mul(e_loc.flipped(flip)))

    total = log_psi0
    if t != 0.0:
        variance = h2_loc.add(e_loc.mul(e_loc).scale(-1.0))
        total = total.add(e_loc.scale(-1j * t)).add(variance.scale(-0.5 * t * t))

    terms = sorted(tuple(sorted(k)) for k in total.data)
    ansatz = Jastrow(psi0.n_sites, tuple(terms))
    coefficients = np.array(
        [total.data[frozenset(term)] for term in ansatz.terms], dtype=np.complex128
    )
    return ansatz, ansatz.parameters_from_coefficients(coefficients)


# --- checkpointing ----------------------------------------------------------

_ARCHITECTURES = {
    "full-parametrization": lambda n, meta: FullParametrization(n),
    "rbm": lambda n, meta: RestrictedBoltzmann(n, meta["alpha"]),
    "jastrow": lambda n, meta: Jastrow(
        n, tuple(tuple(t) for t in meta["terms"]) if "terms" in meta else None
    ),
    "feedforward": lambda n, meta: FeedForward(n, tuple(meta["hidden"])),
}


def build_ansatz(architecture: str, n_sites: int, metadata: dict | None = None) -> Ansatz:
    if architecture not in _ARCHITECTURES:
        raise ValueError(f"unknown architecture {architecture!r}")
    return _ARCHITECTURES[architecture](n_sites, metadata or {})


def _operator_to_json(op: PauliOperator) -> dict:
    return {
        "n_sites": op.n_sites,
        "terms": [
            {
                "coefficient": [t.coefficient.real, t.coefficient.imag],
                "factors": [[site, axis] for site, axis in t.factors],
            }
            for t in op.terms
        ],
    }


def _operator_from_json(data: dict) -> PauliOperator:
    terms = [
        PauliString(
            complex(t["coefficient"][0], t["coefficient"][1]),
            tuple((int(s), str(a)) for s, a in t["factors"]),
        )
        for t in data["terms"]
    ]
    return PauliOperator(terms, int(data["n_sites"]))


def save_checkpoint(
    path,
    ansatz: Ansatz,
    theta: ParameterVector,
    seed: int | None = None,
    t: float = 0.0,
    phase: complex = 0.0,
):
    """Write a bit-exact restorable snapshot (values as full-precision text)."""
    payload = {
        "format": "nqsdyn-checkpoint-1",
        "architecture": ansatz.architecture,
        "n_sites": ansatz.n_sites,
        "shape_metadata": ansatz.shape_metadata,
        "diagonal_factors": [_operator_to_json(f) for f in ansatz.diagonal_factors],
        "seed": seed,
        "t": t,
        "phase": [phase.real, phase.imag],
        "parameters": [repr(float(v)) for v in theta.values],
    }
    Path(path).write_text(json.dumps(payload, indent=1))


def load_checkpoint(path) -> dict:
    """Load a checkpoint; returns ansatz, theta and bookkeeping fields."""
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != "nqsdyn-checkpoint-1":
        raise ValueError("not an nqsdyn checkpoint")
    ansatz = build_ansatz(
        payload["architecture"], payload["n_sites"], payload["shape_metadata"]
    )
    for factor in payload["diagonal_factors"]:
        ansatz = attach_diagonal(ansatz, _operator_from_json(factor))
    values = np.array([float(v) for v in payload["parameters"]], dtype=np.float64)
    theta = ParameterVector(values, ansatz.layout)
    return {
        "ansatz": ansatz,
        "theta": theta,
        "seed": payload["seed"],
        "t": float(payload["t"]),
        "phase": complex(payload["phase"][0], payload["phase"][1]),
    }
