"""Monte-Carlo estimators: local estimators, observables, quantum geometric
tensor, force vector, TDVP residual and local infidelity.

All estimators are centered covariances over the Born weights of a
SampleSet, so they are insensitive to normalization and global phase by
construction.  Full-summation sample sets yield exact values with zero
statistical error.  Zero-amplitude configurations are handled in two ways:
a sentinel at a *sampled* configuration makes the estimator ill-defined
(error), a sentinel at a *connected* configuration biases it (warning with
a count, never a silent correction).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .sampler import SampleSet, integrated_autocorrelation


class IllDefinedEstimatorError(RuntimeError):
    """A sampled configuration has zero amplitude: the estimator acquires
    unknown bias and is not evaluated."""


class BiasedEstimatorWarning(UserWarning):
    """Connected configurations with zero amplitude were skipped; the
    estimate is biased by their excluded contributions."""


@dataclass(frozen=True)
class ScalarEstimate:
    mean: complex
    variance: float
    std_error: float
    n_effective: float

    @property
    def real(self) -> float:
        return self.mean.real


@dataclass
class QgtEstimate:
    """Quantum geometric tensor S over the real parameter layout.

    For holomorphic complex-pair ansaetze the (half-size) complex tensor is
    kept alongside; the real-layout matrix is its exact expansion.
    """

    matrix: np.ndarray
    n_effective: float
    n_samples: int
    complex_pair: Optional[np.ndarray] = None

    @property
    def n_parameters(self) -> int:
        return self.matrix.shape[0]


@dataclass
class ForceEstimate:
    """TDVP force vector with per-component errors for SNR filtering.

    ``covariance`` is the error covariance of the mean over the real
    parameter layout (None under exact summation).  ``cov_re``/``cov_im``
    are the covariances of its real and imaginary parts, used to filter the
    distance- and action-variant right-hand sides; for complex-pair
    ansaetze the half-size complex forms are carried instead.
    """

    vector: np.ndarray
    std_errors: np.ndarray
    covariance: Optional[np.ndarray]
    n_effective: float
    complex_pair: Optional[np.ndarray] = None
    complex_covariance: Optional[np.ndarray] = None
    cov_re: Optional[np.ndarray] = None
    cov_im: Optional[np.ndarray] = None


def _n_effective(samples: SampleSet, series: np.ndarray) -> float:
    if samples.is_exact:
        return float("inf")
    tau = integrated_autocorrelation(samples.chain_view(series))
    return samples.n_samples / tau


def _check_support(samples: SampleSet):
    sampled = samples.weights > 0
    if np.any(np.isneginf(samples.log_amplitudes.real[sampled])):
        raise IllDefinedEstimatorError(
            "zero amplitude at a sampled configuration: the resulting "
            "estimators acquire unknown biases"
        )


def local_estimator_batch(op, ansatz, theta, samples: SampleSet) -> np.ndarray:
    """O_loc(x) = sum_x' <x|O|x'> psi(x')/psi(x) for every sample row."""
    if op.n_sites != ansatz.n_sites:
        raise ValueError("operator and ansatz size mismatch")
    _check_support(samples)
    bits = samples.bits
    chi = samples.log_amplitudes
    live = ~np.isneginf(chi.real)  # zero-weight dead rows stay at value 0
    values = np.zeros(bits.shape[0], dtype=np.complex128)
    n_biased = 0
    for group in op.connected_groups:
        m = group.matrix_elements(bits)
        if group.flip_mask == 0:
            values[live] += m[live]
            continue
        chi_conn = ansatz.log_amplitude_batch(theta, bits ^ group.flip_sites)
        dead_conn = np.isneginf(chi_conn.real)
        n_biased += int(np.count_nonzero(dead_conn & live & (m != 0.0)))
        ratio = np.zeros_like(values)
        ok = live & ~dead_conn
        ratio[ok] = np.exp(chi_conn[ok] - chi[ok])
        values += m * ratio
    if n_biased:
        warnings.warn(
            f"{n_biased} connected configurations with zero amplitude were "
            "skipped; estimate is biased",
            BiasedEstimatorWarning,
            stacklevel=2,
        )
    return values


def local_estimator(op, ansatz, theta, x) -> complex:
    """Single-configuration local estimator of an operator."""
    from .model import connected_configurations

    chi_x = ansatz.log_amplitude(theta, x)
    if np.isneginf(chi_x.real):
        raise IllDefinedEstimatorError(
            "zero amplitude at the queried configuration"
        )
    total = 0.0 + 0.0j
    n_biased = 0
    for xp, m in connected_configurations(op, x):
        chi_p = ansatz.log_amplitude(theta, xp)
        if np.isneginf(chi_p.real):
            n_biased += 1
            continue
        total += m * np.exp(chi_p - chi_x)
    if n_biased:
        warnings.warn(
            f"{n_biased} connected configurations with zero amplitude were "
            "skipped; estimate is biased",
            BiasedEstimatorWarning,
            stacklevel=2,
        )
    return complex(total)


def _weighted_scalar(samples: SampleSet, values: np.ndarray) -> ScalarEstimate:
    w = samples.weights
    if samples.is_exact:
        # zero-weight configurations must not contribute, whatever their value
        keep = w > 0
        w, values = w[keep], values[keep]
    mean = complex(w @ values)
    variance = float(w @ np.abs(values - mean) ** 2)
    n_eff = _n_effective(samples, values.real) if not samples.is_exact else float("inf")
    std_error = float(np.sqrt(variance / n_eff)) if np.isfinite(n_eff) else 0.0
    return ScalarEstimate(mean, variance, std_error, n_eff)


def expectation(op, ansatz, theta, samples: SampleSet) -> ScalarEstimate:
    """Born-weighted mean of the local estimator, with MC error bar."""
    return _weighted_scalar(samples, local_estimator_batch(op, ansatz, theta, samples))


def energy_variance(hamiltonian, ansatz, theta, samples: SampleSet) -> ScalarEstimate:
    """Var(H) = <|H_loc|^2> - |<H_loc>|^2 with an error bar on the estimate."""
    h_loc = local_estimator_batch(hamiltonian, ansatz, theta, samples)
    w = samples.weights
    mean = w @ h_loc
    centered_sq = np.abs(h_loc - mean) ** 2
    variance = float(w @ centered_sq)
    spread = float(w @ (centered_sq - variance) ** 2)
    n_eff = _n_effective(samples, h_loc.real)
    std_error = float(np.sqrt(spread / n_eff)) if np.isfinite(n_eff) else 0.0
    return ScalarEstimate(complex(variance), spread, std_error, n_eff)


# --- jacobian-based estimators ------------------------------------------------

_CHUNK = 1 << 14


def _expand_matrix(mc: np.ndarray, sign: float) -> np.ndarray:
    """Real-layout (2Pc x 2Pc) expansion of a complex-pair matrix.

    ``sign`` is +1 for covariance-of-rows matrices like the QGT
    (S[re, im] = +i Sc) and -1 for error covariances (C[re, im] = -i Cc).
    """
    pc = mc.shape[0]
    out = np.empty((2 * pc, 2 * pc), dtype=np.complex128)
    out[0::2, 0::2] = mc
    out[0::2, 1::2] = sign * 1j * mc
    out[1::2, 0::2] = -sign * 1j * mc
    out[1::2, 1::2] = mc
    return out


def _jacobian_moments(ansatz, theta, samples: SampleSet, h_loc: Optional[np.ndarray]):
    """One pass over the (possibly complex-pair) log-derivative Jacobian.

    Returns a dict with the weighted moments every downstream estimator
    needs; chunked so the full Jacobian never has to be materialized.
    """
    _check_support(samples)
    w = samples.weights
    bits = samples.bits
    n = bits.shape[0]
    holomorphic = ansatz.holomorphic
    if holomorphic:
        p_eff = ansatz.n_parameters // 2
        jac = lambda rows: ansatz.complex_log_derivatives_batch(theta, bits[rows])
    else:
        p_eff = ansatz.n_parameters
        jac = lambda rows: ansatz.log_derivatives_batch(theta, bits[rows])

    g_mean = np.zeros(p_eff, dtype=np.complex128)
    gg = np.zeros((p_eff, p_eff), dtype=np.complex128)
    gh = np.zeros(p_eff, dtype=np.complex128) if h_loc is not None else None
    for start in range(0, n, _CHUNK):
        rows = np.arange(start, min(start + _CHUNK, n))
        g = jac(rows)
        gw = g.conj() * w[rows, None]
        g_mean += w[rows] @ g
        gg += gw.T @ g
        if h_loc is not None:
            gh += gw.T @ h_loc[rows]
    return {
        "holomorphic": holomorphic,
        "p_eff": p_eff,
        "g_mean": g_mean,
        "gg": gg,
        "gh": gh,
        "jacobian": jac,
    }


def _qgt_from_moments(mom, n_eff: float, n_samples: int) -> QgtEstimate:
    sc = mom["gg"] - np.outer(mom["g_mean"].conj(), mom["g_mean"])
    sc = 0.5 * (sc + sc.conj().T)
    if mom["holomorphic"]:
        return QgtEstimate(_expand_matrix(sc, +1.0), n_eff, n_samples, complex_pair=sc)
    return QgtEstimate(sc, n_eff, n_samples)


def estimate_qgt(ansatz, theta, samples: SampleSet) -> QgtEstimate:
    """S_kk' = <conj(G_k) G_k'> - <conj(G_k)><G_k'>, Hermitian-symmetrized."""
    mom = _jacobian_moments(ansatz, theta, samples, None)
    n_eff = (
        float("inf")
        if samples.is_exact
        else samples.n_samples / samples.diagnostics.get("autocorr_time", 1.0)
    )
    return _qgt_from_moments(mom, n_eff, samples.n_samples)


def _expand_pair_vector(fc: np.ndarray) -> np.ndarray:
    vec = np.empty(2 * fc.size, dtype=np.complex128)
    vec[0::2] = fc
    vec[1::2] = -1j * fc
    return vec


def _force_from_moments(
    ansatz, theta, samples: SampleSet, mom, h_loc, e_mean, with_covariance=True
) -> ForceEstimate:
    fc = -1j * (mom["gh"] - mom["g_mean"].conj() * e_mean)
    n_eff = _n_effective(samples, h_loc.real)
    holo = mom["holomorphic"]

    if samples.is_exact:
        vec = _expand_pair_vector(fc) if holo else fc
        return ForceEstimate(
            vec, np.zeros(vec.size), None, n_eff,
            complex_pair=fc if holo else None,
        )

    # spread of the per-sample covariance terms f_k = -i conj(dG_k) dH
    w = samples.weights
    dh = h_loc - e_mean
    p_eff = mom["p_eff"]
    var_c = np.zeros(p_eff)
    cov_c = np.zeros((p_eff, p_eff), dtype=np.complex128) if with_covariance else None
    cov_rr = np.zeros((p_eff, p_eff)) if (with_covariance and not holo) else None
    cov_ii = np.zeros((p_eff, p_eff)) if (with_covariance and not holo) else None
    bits = samples.bits
    for start in range(0, bits.shape[0], _CHUNK):
        rows = np.arange(start, min(start + _CHUNK, bits.shape[0]))
        g = mom["jacobian"](rows)
        f = -1j * (g.conj() - mom["g_mean"].conj()[None, :]) * dh[rows, None]
        var_c += w[rows] @ np.abs(f) ** 2
        if with_covariance:
            fw = f.conj() * w[rows, None]
            cov_c += fw.T @ f
            if not holo:
                cov_rr += (f.real * w[rows, None]).T @ f.real
                cov_ii += (f.imag * w[rows, None]).T @ f.imag
    var_c = np.maximum(var_c - np.abs(fc) ** 2, 0.0)
    err_c = np.sqrt(var_c / n_eff)

    if holo:
        vec = _expand_pair_vector(fc)
        errors = np.empty(vec.size)
        errors[0::2] = err_c
        errors[1::2] = err_c
        cov = cc = None
        if with_covariance:
            cc = (cov_c - np.outer(fc.conj(), fc)) / n_eff
            cov = _expand_matrix(cc, -1.0)
        return ForceEstimate(
            vec, errors, cov, n_eff, complex_pair=fc, complex_covariance=cc
        )

    cov = cov_re = cov_im = None
    if with_covariance:
        cov = (cov_c - np.outer(fc.conj(), fc)) / n_eff
        cov_re = (cov_rr - np.outer(fc.real, fc.real)) / n_eff
        cov_im = (cov_ii - np.outer(fc.imag, fc.imag)) / n_eff
    return ForceEstimate(fc, err_c, cov, n_eff, cov_re=cov_re, cov_im=cov_im)


def estimate_force(hamiltonian, ansatz, theta, samples: SampleSet,
                   with_covariance: bool = True) -> ForceEstimate:
    """F_k = -i (<conj(G_k) H_loc> - <conj(G_k)><H_loc>)."""
    h_loc = local_estimator_batch(hamiltonian, ansatz, theta, samples)
    mom = _jacobian_moments(ansatz, theta, samples, h_loc)
    e_mean = complex(samples.weights @ h_loc)
    return _force_from_moments(ansatz, theta, samples, mom, h_loc, e_mean,
                               with_covariance)


@dataclass
class TdvpExpectations:
    """Everything one TDVP stage needs, from a single Jacobian pass."""

    qgt: QgtEstimate
    force: ForceEstimate
    energy: ScalarEstimate
    variance: ScalarEstimate
    gamma_mean: np.ndarray  # <G_k> over the real parameter layout


def tdvp_expectations(hamiltonian, ansatz, theta, samples: SampleSet,
                      with_covariance: bool = True) -> TdvpExpectations:
    h_loc = local_estimator_batch(hamiltonian, ansatz, theta, samples)
    energy = _weighted_scalar(samples, h_loc)
    mom = _jacobian_moments(ansatz, theta, samples, h_loc)
    qgt = _qgt_from_moments(mom, energy.n_effective, samples.n_samples)
    force = _force_from_moments(
        ansatz, theta, samples, mom, h_loc, energy.mean, with_covariance
    )

    w = samples.weights
    centered_sq = np.abs(h_loc - energy.mean) ** 2
    var_value = float(w @ centered_sq)
    spread = float(w @ (centered_sq - var_value) ** 2)
    std_error = (
        float(np.sqrt(spread / energy.n_effective))
        if np.isfinite(energy.n_effective)
        else 0.0
    )
    variance = ScalarEstimate(complex(var_value), spread, std_error, energy.n_effective)

    if mom["holomorphic"]:
        gamma_mean = np.empty(ansatz.n_parameters, dtype=np.complex128)
        gamma_mean[0::2] = mom["g_mean"]
        gamma_mean[1::2] = 1j * mom["g_mean"]
    else:
        gamma_mean = mom["g_mean"]
    return TdvpExpectations(qgt, force, energy, variance, gamma_mean)


def tdvp_residual(qgt, force, theta_dot: np.ndarray, var_h: float, tau: float) -> float:
    """Squared distance rate of the projected step, scaled by tau^2.

    r^2 = tau^2 (theta_dot^T Re[S] theta_dot - 2 Re[F].theta_dot + Var(H)),
    clipped to zero from slightly negative numerical values.
    """
    s = qgt.matrix if isinstance(qgt, QgtEstimate) else np.asarray(qgt)
    f = force.vector if isinstance(force, ForceEstimate) else np.asarray(force)
    quad = float(theta_dot @ s.real @ theta_dot)
    lin = float(f.real @ theta_dot)
    r2 = tau * tau * (quad - 2.0 * lin + float(var_h))
    if r2 < -1e-10:
        return r2  # genuinely negative: caller sees the inconsistency
    return max(r2, 0.0)


# --- infidelity --------------------------------------------------------------


def local_infidelity(phi, ansatz_old, theta_old, ansatz_new, theta_new, x, y) -> complex:
    """Per-pair estimator of the infidelity between phi|psi_old> and |psi_new>.

    I_loc(x, y) = 1 - [<x|phi|psi_old>/<x|psi_new>] [<y|phi^dag|psi_new>/<y|psi_old>]
    where x is Born-sampled from the new state and y from the old one.
    """
    chi_new_x = ansatz_new.log_amplitude(theta_new, x)
    chi_old_y = ansatz_old.log_amplitude(theta_old, y)
    if np.isneginf(chi_new_x.real) or np.isneginf(chi_old_y.real):
        raise IllDefinedEstimatorError("zero amplitude in an infidelity denominator")
    a = phi.amplitude(ansatz_old, theta_old, x) / np.exp(chi_new_x)
    b = phi.adjoint().amplitude(ansatz_new, theta_new, y) / np.exp(chi_old_y)
    return 1.0 - complex(a * b)


def _ratio_means(phi, source_ansatz, source_theta, denom_samples: SampleSet):
    """Weighted mean of <x|phi|psi_source>/<x|psi_denom> over denom samples."""
    _check_support(denom_samples)
    num = phi.amplitude_batch(source_ansatz, source_theta, denom_samples.bits)
    ratios = num * np.exp(-denom_samples.log_amplitudes)
    return ratios


def infidelity_estimate(
    phi,
    ansatz_old,
    theta_old,
    ansatz_new,
    theta_new,
    samples_new: SampleSet,
    samples_old: SampleSet,
) -> ScalarEstimate:
    """Factorized infidelity estimate over a product of Born samples.

    Exact for unitary propagators under full summation; equal to
    1 - <A><B> with A, B the two amplitude-ratio estimators.
    """
    a = _ratio_means(phi, ansatz_old, theta_old, samples_new)
    b = _ratio_means(phi.adjoint(), ansatz_new, theta_new, samples_old)
    ea = _weighted_scalar(samples_new, a)
    eb = _weighted_scalar(samples_old, b)
    mean = 1.0 - ea.mean * eb.mean
    # first-order error propagation through the product
    std_error = float(
        np.hypot(abs(eb.mean) * ea.std_error, abs(ea.mean) * eb.std_error)
    )
    variance = ea.variance * abs(eb.mean) ** 2 + eb.variance * abs(ea.mean) ** 2
    n_eff = min(ea.n_effective, eb.n_effective)
    return ScalarEstimate(mean, float(variance), std_error, n_eff)
