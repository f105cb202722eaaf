"""Global per-step optimization: propagator approximations (second-order
Trotter splitting, low-order Taylor) and minimization of the sampled
infidelity over new parameters.

The shared primitive is the bra decomposition <x| Phi = sum_z c_z(x) <z|,
kept as a dictionary from XOR masks to per-row coefficient arrays: every
amplitude, infidelity and gradient estimator assembles from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import numpy as np

from .ansatz import Ansatz, ParameterVector
from .estimators import (
    ForceEstimate,
    QgtEstimate,
    ScalarEstimate,
    estimate_qgt,
    expectation,
    _weighted_scalar,
)
from .model import PauliOperator, PauliString, SpinConfiguration
from .sampler import SamplerSettings, SampleSet, derive_seed
from .tdvp import EvolutionRecord, TdvpConfig, solve_tdvp_system

DEFAULT_BRANCH_BUDGET = 1 << 14


class BranchBudgetError(RuntimeError):
    """Backward expansion through the propagator grew past the configured
    budget; use a smaller circuit depth or a Taylor propagator."""


class OptimizationDivergedError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


def _string_elements(factors: tuple, bits: np.ndarray) -> np.ndarray:
    """<z|P|z^flip> for a coefficient-1 Pauli string, batched over rows."""
    n = bits.shape[0]
    phase = 1.0 + 0.0j
    sign_sites = []
    for site, axis in factors:
        if axis in ("Z", "Y"):
            sign_sites.append(site)
        if axis == "Y":
            phase *= -1j
    if not sign_sites:
        return np.full(n, phase)
    parity = bits[:, sign_sites].sum(axis=1) & 1
    return phase * (1.0 - 2.0 * parity)


def _flip_mask(factors: tuple) -> int:
    mask = 0
    for site, axis in factors:
        if axis in ("X", "Y"):
            mask |= 1 << site
    return mask


def _mask_to_sites(mask: int, n_sites: int) -> np.ndarray:
    return np.array([(mask >> i) & 1 for i in range(n_sites)], dtype=np.uint8)


@dataclass(frozen=True)
class LocalUnitary:
    """exp(-i angle P) for one K-local Pauli string P (coefficient 1)."""

    angle: float
    factors: tuple

    @property
    def is_diagonal(self) -> bool:
        return all(axis == "Z" for _, axis in self.factors)


@dataclass(frozen=True)
class PropagatorApplication:
    """Approximation of exp(-i H tau) applicable to bra configurations.

    kind "trotter2" carries an ordered product of K-local unitaries; kind
    "taylor" a truncation of the exponential series at order p.
    """

    kind: str
    tau: float
    n_sites: int
    factors: tuple = ()  # trotter2
    generator: Optional[PauliOperator] = None  # taylor
    order: int = 0  # taylor
    branch_budget: int = DEFAULT_BRANCH_BUDGET

    def __post_init__(self):
        if self.kind not in ("trotter2", "taylor"):
            raise ValueError(f"unknown propagator kind {self.kind!r}")
        if self.kind == "taylor" and self.order not in (1, 2):
            raise ValueError("taylor propagator supports orders 1 and 2")

    def adjoint(self) -> "PropagatorApplication":
        if self.kind == "trotter2":
            flipped = tuple(
                LocalUnitary(-f.angle, f.factors) for f in reversed(self.factors)
            )
            return replace(self, factors=flipped)
        return replace(self, tau=-self.tau)

    # --- bra decomposition ------------------------------------------------
    def bra_decomposition(self, bits: np.ndarray) -> dict[int, np.ndarray]:
        """<x| Phi = sum_masks coeff(x) <x ^ mask| over a bit-matrix batch."""
        n = bits.shape[0]
        if self.kind == "trotter2":
            branches: dict[int, np.ndarray] = {0: np.ones(n, dtype=np.complex128)}
            for factor in self.factors:
                branches = self._apply_unitary(branches, factor, bits)
            return branches
        return self._taylor_decomposition(bits)

    def _apply_unitary(self, branches, factor: LocalUnitary, bits):
        cos_a = math.cos(factor.angle)
        sin_a = math.sin(factor.angle)
        flip = _flip_mask(factor.factors)
        if factor.is_diagonal:
            for mask, coeff in branches.items():
                m = _string_elements(factor.factors, bits ^ _mask_to_sites(mask, self.n_sites))
                coeff *= cos_a - 1j * sin_a * m
            return branches
        out: dict[int, np.ndarray] = {}
        for mask, coeff in branches.items():
            m = _string_elements(factor.factors, bits ^ _mask_to_sites(mask, self.n_sites))
            _accumulate(out, mask, cos_a * coeff)
            _accumulate(out, mask ^ flip, -1j * sin_a * m * coeff)
        if len(out) > self.branch_budget:
            raise BranchBudgetError(
                f"bra expansion grew to {len(out)} branches (budget "
                f"{self.branch_budget}); reduce the circuit depth or branching"
            )
        return out

    def _apply_generator(self, branches, bits):
        """<x| (sum_b c_b <x^m_b|) H, merged by mask."""
        out: dict[int, np.ndarray] = {}
        for mask, coeff in branches.items():
            shifted = bits ^ _mask_to_sites(mask, self.n_sites)
            for group in self.generator.connected_groups:
                values = group.matrix_elements(shifted)
                _accumulate(out, mask ^ group.flip_mask, values * coeff)
        if len(out) > self.branch_budget:
            raise BranchBudgetError(
                f"bra expansion grew to {len(out)} branches (budget "
                f"{self.branch_budget})"
            )
        return out

    def _taylor_decomposition(self, bits):
        n = bits.shape[0]
        total: dict[int, np.ndarray] = {0: np.ones(n, dtype=np.complex128)}
        power = {0: np.ones(n, dtype=np.complex128)}
        prefactor = 1.0 + 0.0j
        for order in range(1, self.order + 1):
            power = self._apply_generator(power, bits)
            prefactor *= -1j * self.tau / order
            for mask, coeff in power.items():
                _accumulate(total, mask, prefactor * coeff)
        return total

    # --- amplitudes ---------------------------------------------------------
    def amplitude_batch(self, ansatz: Ansatz, theta: ParameterVector, bits: np.ndarray,
                        chunk: int = 4096) -> np.ndarray:
        """<x| Phi |psi_theta> for every row of the bit matrix."""
        out = np.empty(bits.shape[0], dtype=np.complex128)
        for start in range(0, bits.shape[0], chunk):
            rows = slice(start, min(start + chunk, bits.shape[0]))
            block = bits[rows]
            acc = np.zeros(block.shape[0], dtype=np.complex128)
            for mask, coeff in self.bra_decomposition(block).items():
                chi = ansatz.log_amplitude_batch(theta, block ^ _mask_to_sites(mask, self.n_sites))
                alive = ~np.isneginf(chi.real)
                term = np.zeros_like(acc)
                term[alive] = np.exp(chi[alive])
                acc += coeff * term
            out[rows] = acc
        return out

    def amplitude(self, ansatz: Ansatz, theta: ParameterVector, x: SpinConfiguration) -> complex:
        return complex(self.amplitude_batch(ansatz, theta, x.to_array()[None, :])[0])

    def dense(self, cap: int = 12) -> np.ndarray:
        """Explicit matrix of the propagator (small systems, tests)."""
        from .oracle import dense_matrix

        dim = 1 << self.n_sites
        if self.n_sites > cap:
            raise ValueError("dense propagator exceeds the size cap")
        if self.kind == "trotter2":
            out = np.eye(dim, dtype=np.complex128)
            for factor in self.factors:
                p = dense_matrix(PauliOperator([PauliString(1.0, factor.factors)], self.n_sites))
                u = math.cos(factor.angle) * np.eye(dim) - 1j * math.sin(factor.angle) * p
                out = out @ u
            return out
        h = dense_matrix(self.generator)
        out = np.eye(dim, dtype=np.complex128)
        term = np.eye(dim, dtype=np.complex128)
        for order in range(1, self.order + 1):
            term = term @ h * (-1j * self.tau / order)
            out = out + term
        return out


def _accumulate(branches: dict, mask: int, coeff: np.ndarray):
    if mask in branches:
        branches[mask] = branches[mask] + coeff
    else:
        branches[mask] = coeff


def trotter_factorize(hamiltonian: PauliOperator, tau: float, order: int = 2,
                      branch_budget: int = DEFAULT_BRANCH_BUDGET) -> PropagatorApplication:
    """Symmetric second-order splitting of exp(-i H tau) into K-local
    unitaries; requires a Hermitian Hamiltonian with at most 2-local terms."""
    if order != 2:
        raise ValueError("only the symmetric second-order splitting is implemented")
    if hamiltonian.max_locality > 2:
        raise ValueError("Trotter factorization requires 1- and 2-local terms")
    if not hamiltonian.is_hermitian:
        raise ValueError("Trotter factorization requires a Hermitian generator")
    half = [
        LocalUnitary(0.5 * tau * t.coefficient.real, t.factors)
        for t in hamiltonian.terms
    ]
    factors = tuple(half) + tuple(reversed(half))
    return PropagatorApplication(
        "trotter2", tau, hamiltonian.n_sites, factors=factors,
        branch_budget=branch_budget,
    )


def taylor_propagator(hamiltonian: PauliOperator, tau: float, order: int,
                      branch_budget: int = DEFAULT_BRANCH_BUDGET) -> PropagatorApplication:
    """Series truncation 1 + (-i tau H) [+ (-i tau H)^2 / 2] of the propagator."""
    return PropagatorApplication(
        "taylor", tau, hamiltonian.n_sites, generator=hamiltonian, order=order,
        branch_budget=branch_budget,
    )


def apply_propagator_amplitude(phi: PropagatorApplication, ansatz, theta, x) -> complex:
    """<x| Phi |psi_theta> via backward expansion through the factors."""
    return phi.amplitude(ansatz, theta, x)


# --- infidelity optimization --------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "natural_gradient"  # | "plain_gradient"
    learning_rate: float = 1.0
    max_iterations: int = 200
    infidelity_target: float = 1e-7
    svd_cutoff: float = 1e-8
    diagonal_shift: float = 0.0
    snr_threshold: float = 0.0
    restart_patience: int = 3
    max_step_rms: float = 0.2  # trust region on parameter moves

    def __post_init__(self):
        if self.method not in ("natural_gradient", "plain_gradient"):
            raise ValueError(f"unknown optimizer method {self.method!r}")


@dataclass
class OptStep:
    theta_new: ParameterVector
    infidelity: ScalarEstimate
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)


def _cost_and_gradient(phi, ansatz, theta_old, theta_new, samples_x, samples_y):
    """Infidelity estimate and its gradient w.r.t. the new parameters.

    x-samples follow the new state's Born distribution, y-samples the old
    one; the cost factorizes as 1 - <A>_x <B>_y.
    """
    phi_dag = phi.adjoint()
    bits_x = samples_x.bits
    # A(x) = <x|Phi|psi_old> / psi_new(x); zero-weight dead rows stay zero
    a_num = phi.amplitude_batch(ansatz, theta_old, bits_x)
    a = np.zeros(bits_x.shape[0], dtype=np.complex128)
    live_x = ~np.isneginf(samples_x.log_amplitudes.real)
    a[live_x] = a_num[live_x] * np.exp(-samples_x.log_amplitudes[live_x])
    ea = _weighted_scalar(samples_x, a)

    # B(y) and the propagated-gradient term B'_k(y)
    bits_y = samples_y.bits
    wy = samples_y.weights
    decomp = phi_dag.bra_decomposition(bits_y)
    b = np.zeros(bits_y.shape[0], dtype=np.complex128)
    db = np.zeros((bits_y.shape[0], ansatz.n_parameters), dtype=np.complex128)
    for mask, coeff in decomp.items():
        shifted = bits_y ^ _mask_to_sites(mask, phi.n_sites)
        chi = ansatz.log_amplitude_batch(theta_new, shifted)
        gamma = ansatz.log_derivatives_batch(theta_new, shifted)
        psi = np.exp(chi)
        b += coeff * psi
        db += (coeff * psi)[:, None] * gamma
    live_y = ~np.isneginf(samples_y.log_amplitudes.real)
    denom = np.zeros(bits_y.shape[0], dtype=np.complex128)
    denom[live_y] = np.exp(-samples_y.log_amplitudes[live_y])
    b *= denom
    eb = _weighted_scalar(samples_y, b)
    db_mean = (wy * denom) @ db

    # gradient of <A>_x: both the weights and A itself depend on theta_new
    wx = samples_x.weights
    gamma_x = ansatz.log_derivatives_batch(theta_new, bits_x)
    g_mean = wx @ gamma_x
    ga_mean = (wx * a) @ gamma_x.conj()
    da = ga_mean - ea.mean * (g_mean + g_mean.conj())
    gradient = -(da * eb.mean + ea.mean * db_mean)

    # numpy arithmetic here: huge intermediate values become inf, not raises
    abs_a, abs_b = np.abs(np.complex128(ea.mean)), np.abs(np.complex128(eb.mean))
    mean = 1.0 - ea.mean * eb.mean
    std_error = float(np.hypot(abs_b * ea.std_error, abs_a * eb.std_error))
    variance = float(ea.variance * abs_b**2 + eb.variance * abs_a**2)
    n_eff = min(ea.n_effective, eb.n_effective)
    return ScalarEstimate(mean, variance, std_error, n_eff), gradient


def infidelity_and_gradient(phi, ansatz, theta_old, theta_new, sampler: SamplerSettings,
                            seed: int = 0, samples_y: Optional[SampleSet] = None):
    """Convenience wrapper drawing the two Born samples."""
    samples_x = sampler.draw(ansatz, theta_new, derive_seed(seed, 0))
    if samples_y is None:
        samples_y = sampler.draw(ansatz, theta_old, derive_seed(seed, 1))
    return _cost_and_gradient(phi, ansatz, theta_old, theta_new, samples_x, samples_y)


def _descent_direction(ansatz, theta_new, samples_x, gradient, cfg: OptimizerConfig):
    grad_real = gradient.real
    if cfg.method == "plain_gradient":
        return grad_real
    qgt = estimate_qgt(ansatz, theta_new, samples_x)
    if qgt.complex_pair is not None:
        force = ForceEstimate(
            grad_real.astype(np.complex128), np.zeros(grad_real.size), None,
            qgt.n_effective,
            complex_pair=grad_real[0::2] + 1j * grad_real[1::2],
        )
    else:
        force = ForceEstimate(
            grad_real.astype(np.complex128), np.zeros(grad_real.size), None,
            qgt.n_effective,
        )
    solve_cfg = TdvpConfig(
        variant="distance", svd_cutoff=cfg.svd_cutoff,
        diagonal_shift=cfg.diagonal_shift, snr_threshold=0.0,
    )
    direction, _ = solve_tdvp_system(qgt, force, solve_cfg)
    return direction


def optimize_step(
    ansatz: Ansatz,
    theta_old: ParameterVector,
    phi: PropagatorApplication,
    opt_cfg: OptimizerConfig,
    sampler: SamplerSettings,
    master_seed: int = 0,
) -> OptStep:
    """Minimize the sampled infidelity between phi|psi_old> and |psi_new>.

    Warm start from the old parameters; y-samples are drawn once per step,
    x-samples refreshed every iteration.  Restarts from the best point with
    a halved learning rate on a sustained increase.
    """
    theta = theta_old
    samples_y = sampler.draw(ansatz, theta_old, derive_seed(master_seed, 0))
    lr = opt_cfg.learning_rate
    best = (np.inf, theta)
    trace = []
    n_bad = 0
    n_divergent = 0
    estimate = None
    previous = np.inf

    for iteration in range(opt_cfg.max_iterations + 1):
        samples_x = sampler.draw(ansatz, theta, derive_seed(master_seed, 1, iteration))
        estimate, gradient = _cost_and_gradient(
            phi, ansatz, theta_old, theta, samples_x, samples_y
        )
        value = estimate.mean.real
        trace.append((iteration, value, estimate.std_error))
        if not np.isfinite(value):
            # bad region of parameter space: back off to the best point
            theta = best[1]
            lr *= 0.5
            n_bad = 0
            continue
        if value < best[0]:
            best = (value, theta)
        if value <= opt_cfg.infidelity_target + estimate.std_error:
            return OptStep(theta, estimate, iteration, True, trace)
        if value > 1.0 + 5.0 * estimate.std_error:
            n_divergent += 1
            if n_divergent >= 3:
                raise OptimizationDivergedError(
                    f"infidelity estimate {value:.3e} stayed above 1",
                    trace=trace,
                )
        # sustained increase: well above the best point so far, beyond both
        # the error bars and a relative slack (descent may wiggle slightly)
        if value > 1.5 * best[0] + 3.0 * estimate.std_error + 1e-14:
            n_bad += 1
            if n_bad >= opt_cfg.restart_patience:
                theta = best[1]
                lr *= 0.5
                n_bad = 0
                continue
        else:
            n_bad = 0
        if iteration == opt_cfg.max_iterations:
            break
        # damp a ping-pong descent: overshooting shows up as an increase
        # beyond the error bars
        if value > previous + estimate.std_error:
            lr *= 0.7
        elif lr < opt_cfg.learning_rate:
            lr = min(lr * 1.05, opt_cfg.learning_rate)
        previous = value
        direction = _descent_direction(ansatz, theta, samples_x, gradient, opt_cfg)
        move = lr * direction
        rms = float(np.linalg.norm(move)) / np.sqrt(move.size)
        if rms > opt_cfg.max_step_rms:
            move *= opt_cfg.max_step_rms / rms
        theta = theta.replace(theta.values - move)

    return OptStep(best[1], estimate, opt_cfg.max_iterations, False, trace)


@dataclass(frozen=True)
class GlobalConfig:
    propagator: str = "trotter2"  # "trotter2" | "taylor1" | "taylor2"
    tau: float = 0.05
    max_time: float = 1.0
    branch_budget: int = DEFAULT_BRANCH_BUDGET

    def build_propagator(self, hamiltonian: PauliOperator) -> PropagatorApplication:
        if self.propagator == "trotter2":
            return trotter_factorize(hamiltonian, self.tau, branch_budget=self.branch_budget)
        if self.propagator in ("taylor1", "taylor2"):
            order = int(self.propagator[-1])
            return taylor_propagator(hamiltonian, self.tau, order, self.branch_budget)
        raise ValueError(f"unknown propagator {self.propagator!r}")


def evolve_global(
    ansatz: Ansatz,
    theta0: ParameterVector,
    hamiltonian: PauliOperator,
    cfg: GlobalConfig,
    opt_cfg: OptimizerConfig,
    sampler: SamplerSettings,
    observables: Optional[dict] = None,
    master_seed: int = 0,
) -> Iterator[EvolutionRecord]:
    """Repeated global steps: factorize the propagator once, then optimize
    the infidelity at every step.  Global phase is not tracked."""
    observables = observables or {}
    phi = cfg.build_propagator(hamiltonian)
    theta = theta0
    t = 0.0
    step_index = 0
    last_opt = None
    while True:
        seed = derive_seed(master_seed, step_index, 2)
        samples = sampler.draw(ansatz, theta, seed)
        obs_values = {
            name: expectation(op, ansatz, theta, samples)
            for name, op in observables.items()
        }
        energy = expectation(hamiltonian, ansatz, theta, samples)
        yield EvolutionRecord(
            step=step_index,
            t=t,
            energy=energy,
            variance=float("nan"),
            phase=None,
            observables=obs_values,
            sampler_diagnostics=dict(samples.diagnostics),
            theta=theta,
            tau=None if step_index == 0 else cfg.tau,
            optimization=last_opt,
        )
        if t >= cfg.max_time - 1e-12:
            return
        result = optimize_step(
            ansatz, theta, phi, opt_cfg, sampler,
            master_seed=derive_seed(master_seed, step_index, 3),
        )
        theta = result.theta_new
        t += cfg.tau
        step_index += 1
        last_opt = {
            "iterations": result.iterations,
            "converged": result.converged,
            "infidelity": result.infidelity.mean.real,
            "infidelity_error": result.infidelity.std_error,
            "trace": result.trace[-5:],
        }
