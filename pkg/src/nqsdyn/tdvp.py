"""TDVP integration: regularized linear solves for theta-dot, adaptive Heun
stepping with embedded error control, and the phase/normalization ODE.

Two equation variants are supported: ``distance`` solves
Re[S] theta_dot = Re[F] (projected Schroedinger flow) and ``action`` solves
Im[S] theta_dot = Im[F] (stationary action; conserves energy).  For
holomorphic complex-pair ansaetze the distance variant is solved in the
half-size complex form S_c w = F_c, which is algebraically identical to the
real-layout equation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import numpy as np

from .ansatz import Ansatz, ParameterVector
from .estimators import (
    ForceEstimate,
    QgtEstimate,
    ScalarEstimate,
    TdvpExpectations,
    _expand_matrix,
    expectation,
    tdvp_expectations,
    tdvp_residual,
)
from .model import PauliOperator
from .sampler import SamplerSettings, derive_seed


class RankZeroError(RuntimeError):
    """All geometric-tensor eigenvalues fell below the cutoff."""


class TauUnderflowError(RuntimeError):
    """The step size collapsed below tau_min without meeting the error
    target; a possible nonanalyticity (DQPT) signature."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class TdvpConfig:
    variant: str = "distance"  # "distance" | "action"
    # regularization
    svd_cutoff: float = 1e-8  # relative eigenvalue cutoff
    diagonal_shift: float = 0.0
    snr_threshold: float = 2.0
    # step control; local_error_target bounds the embedded per-step estimate
    tau0: float = 1e-3
    tau_min: float = 1e-9
    tau_max: float = 0.1
    local_error_target: float = 1e-6
    max_time: float = 1.0
    adaptive_samples: bool = False
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.variant not in ("distance", "action"):
            raise ValueError(f"unknown TDVP variant {self.variant!r}")
        if self.svd_cutoff < 0 or self.diagonal_shift < 0 or self.snr_threshold < 0:
            raise ValueError("regularization cutoffs must be nonnegative")
        if not (0 < self.tau_min <= self.tau0 <= self.tau_max):
            raise ValueError("need 0 < tau_min <= tau0 <= tau_max")


@dataclass
class SolverDiagnostics:
    condition: float
    truncated_rank: int
    n_filtered: int
    dimension: int
    variant: str


@dataclass
class TdvpStep:
    theta_new: ParameterVector
    theta_dot: np.ndarray
    residual: float
    phase_increment: complex
    tau_used: float
    tau_next: float
    n_rejected: int
    solver: SolverDiagnostics
    energy: ScalarEstimate
    variance: float


@dataclass
class EvolutionState:
    ansatz: Ansatz
    theta: ParameterVector
    t: float = 0.0
    phase: complex = 0.0
    tau: Optional[float] = None
    step_index: int = 0
    # bookkeeping from the step that produced this state
    last_tau_used: Optional[float] = None
    last_residual: Optional[float] = None
    last_solver: Optional[SolverDiagnostics] = None
    last_rejects: int = 0


@dataclass
class EvolutionRecord:
    """One accepted step (or the initial state) of a propagation run."""

    step: int
    t: float
    energy: ScalarEstimate
    variance: float
    phase: complex
    observables: dict
    sampler_diagnostics: dict
    theta: ParameterVector
    tau: Optional[float] = None
    residual: Optional[float] = None
    solver: Optional[SolverDiagnostics] = None
    n_rejected: int = 0
    optimization: Optional[dict] = None


def _filtered_inverse(eigenvalues, coefficients, errors, cfg):
    """Cutoff + SNR filtering of eigenbasis coefficients; returns the
    rescaled coefficients and (kept, filtered) counts."""
    magnitude = np.abs(eigenvalues)
    lam_max = magnitude.max()
    if lam_max <= 0 or not np.isfinite(lam_max):
        raise RankZeroError("geometric tensor has no usable spectrum")
    keep = magnitude > cfg.svd_cutoff * lam_max
    if not np.any(keep):
        raise RankZeroError(
            f"all {eigenvalues.size} eigenvalues below cutoff "
            f"{cfg.svd_cutoff:.1e} * {lam_max:.3e}"
        )
    n_filtered = 0
    if errors is not None and cfg.snr_threshold > 0:
        with np.errstate(divide="ignore", invalid="ignore"):
            snr = np.abs(coefficients) / errors
        noisy = keep & ~(snr >= cfg.snr_threshold) & (errors > 0)
        n_filtered = int(noisy.sum())
        keep = keep & ~noisy
        if not np.any(keep):
            raise RankZeroError("SNR filter removed every retained component")
    out = np.zeros_like(coefficients)
    out[keep] = coefficients[keep] / eigenvalues[keep]
    condition = float(lam_max / magnitude[keep].min())
    return out, int(keep.sum()), n_filtered, condition


def _rotated_errors(u, cov):
    if cov is None:
        return None
    diag = np.einsum("ij,ij->j", u.conj(), cov @ u)
    return np.sqrt(np.maximum(diag.real, 0.0))


def solve_tdvp_system(qgt: QgtEstimate, force: ForceEstimate, cfg: TdvpConfig):
    """Regularized pseudo-inverse solution of the TDVP linear system.

    Returns (theta_dot, diagnostics).  Eigencomponents below the relative
    cutoff are truncated; retained components whose force signal lies below
    ``snr_threshold`` times its Monte-Carlo error are zeroed.
    """
    if qgt.matrix.shape[0] != force.vector.size:
        raise ValueError("geometric tensor and force dimensions disagree")
    dim = force.vector.size

    if cfg.variant == "distance" and qgt.complex_pair is not None:
        herm = qgt.complex_pair
        if cfg.diagonal_shift:
            herm = herm + cfg.diagonal_shift * np.eye(herm.shape[0])
        evals, evecs = np.linalg.eigh(herm)
        coeff = evecs.conj().T @ force.complex_pair
        errors = _rotated_errors(evecs, force.complex_covariance)
        coeff, rank, n_filtered, condition = _filtered_inverse(
            evals, coeff, errors, cfg
        )
        w = evecs @ coeff
        theta_dot = np.empty(dim)
        theta_dot[0::2] = w.real
        theta_dot[1::2] = w.imag
        return theta_dot, SolverDiagnostics(condition, rank, n_filtered, dim, cfg.variant)

    if cfg.variant == "distance":
        herm = qgt.matrix.real
        rhs = force.vector.real
        cov = force.cov_re
    else:
        # Im[S] is real antisymmetric; i Im[S] is Hermitian with the same
        # invariant subspaces, so the filtered pseudo-inverse runs there
        herm = 1j * qgt.matrix.imag
        rhs = force.vector.imag
        if force.cov_im is not None:
            cov = force.cov_im
        elif force.complex_covariance is not None:
            # complex-pair path: magnitude-level approximation of the error
            cov = _expand_matrix(force.complex_covariance, -1.0)
        else:
            cov = None
    if cfg.diagonal_shift:
        herm = herm + cfg.diagonal_shift * np.eye(dim)
    evals, evecs = np.linalg.eigh(herm)
    target = rhs if cfg.variant == "distance" else 1j * rhs
    coeff = evecs.conj().T @ target
    errors = _rotated_errors(evecs, cov)
    coeff, rank, n_filtered, condition = _filtered_inverse(evals, coeff, errors, cfg)
    theta_dot = np.real(evecs @ coeff)
    return theta_dot, SolverDiagnostics(condition, rank, n_filtered, dim, cfg.variant)


def _phase_velocity(theta_dot: np.ndarray, est: TdvpExpectations) -> complex:
    return -1j * est.energy.mean - complex(theta_dot @ est.gamma_mean)


def _stage(ansatz, theta, hamiltonian, cfg, sampler, seed):
    samples = sampler.draw(ansatz, theta, seed)
    est = tdvp_expectations(
        hamiltonian, ansatz, theta, samples,
        with_covariance=(cfg.snr_threshold > 0 and not samples.is_exact),
    )
    theta_dot, diag = solve_tdvp_system(est.qgt, est.force, cfg)
    return samples, est, theta_dot, diag


def heun_step(
    state: EvolutionState,
    hamiltonian: PauliOperator,
    cfg: TdvpConfig,
    sampler: SamplerSettings,
    master_seed: int = 0,
    stage1=None,
    tau_cap: Optional[float] = None,
) -> TdvpStep:
    """One adaptive predictor-corrector step from the current state.

    Fresh samples are drawn at both evaluation points; the embedded error
    estimate is the RMS difference (corrector - predictor)/2 and the step
    is accepted once it meets ``local_error_target``.
    """
    theta = state.theta
    values = theta.values
    step = state.step_index
    if stage1 is None:
        _, est1, theta_dot1, diag1 = _stage(
            state.ansatz, theta, hamiltonian, cfg, sampler,
            derive_seed(master_seed, step, 0),
        )
    else:
        est1 = stage1
        theta_dot1, diag1 = solve_tdvp_system(est1.qgt, est1.force, cfg)
    phase_dot1 = _phase_velocity(theta_dot1, est1)

    tau = cfg.tau0 if state.tau is None else state.tau
    tau = float(np.clip(tau, cfg.tau_min, cfg.tau_max))
    if tau_cap is not None:
        tau = min(tau, tau_cap)
    scale = np.sqrt(values.size)

    n_rejected = 0
    while True:
        predictor = theta.replace(values + tau * theta_dot1)
        _, est2, theta_dot2, _ = _stage(
            state.ansatz, predictor, hamiltonian, cfg, sampler,
            derive_seed(master_seed, step, 1, n_rejected),
        )
        corrector_values = values + 0.5 * tau * (theta_dot1 + theta_dot2)
        err = float(
            np.linalg.norm(corrector_values - predictor.values) / (2.0 * scale)
        )
        if err <= cfg.local_error_target:
            break
        if tau <= cfg.tau_min * (1 + 1e-12):
            raise TauUnderflowError(
                f"step error {err:.3e} exceeds target "
                f"{cfg.local_error_target:.3e} at tau_min={cfg.tau_min:.3e}; "
                "possible nonanalytic point of the variational flow",
                diagnostics={"t": state.t, "error": err, "solver": diag1},
            )
        shrink = max(0.9 * np.sqrt(cfg.local_error_target / err), 0.25)
        tau = max(tau * min(shrink, 0.95), cfg.tau_min)
        n_rejected += 1

    grow = 2.0 if err == 0.0 else min(0.9 * np.sqrt(cfg.local_error_target / err), 2.0)
    tau_next = float(np.clip(tau * max(grow, 0.5), cfg.tau_min, cfg.tau_max))
    phase_dot2 = _phase_velocity(theta_dot2, est2)
    r2 = tdvp_residual(
        est1.qgt, est1.force, theta_dot1, est1.variance.mean.real, tau
    )
    return TdvpStep(
        theta_new=theta.replace(corrector_values),
        theta_dot=theta_dot1,
        residual=float(np.sqrt(max(r2, 0.0))),
        phase_increment=0.5 * tau * (phase_dot1 + phase_dot2),
        tau_used=tau,
        tau_next=tau_next,
        n_rejected=n_rejected,
        solver=diag1,
        energy=est1.energy,
        variance=est1.variance.mean.real,
    )


def evolve(
    ansatz: Ansatz,
    theta0: ParameterVector,
    hamiltonian: PauliOperator,
    cfg: TdvpConfig,
    sampler: SamplerSettings,
    observables: Optional[dict] = None,
    master_seed: int = 0,
    initial_state: Optional[EvolutionState] = None,
) -> Iterator[EvolutionRecord]:
    """Drive the TDVP integration, yielding one record per accepted step.

    The first record is the initial state; each record's estimates are
    computed from fresh samples at the recorded parameters, which the next
    step then reuses as its first stage.
    """
    observables = observables or {}
    state = initial_state or EvolutionState(ansatz, theta0)
    current_sampler = sampler
    max_samples = sampler.n_samples * 8

    while True:
        seed1 = derive_seed(master_seed, state.step_index, 0)
        samples = current_sampler.draw(state.ansatz, state.theta, seed1)
        est = tdvp_expectations(
            hamiltonian, state.ansatz, state.theta, samples,
            with_covariance=(cfg.snr_threshold > 0 and not samples.is_exact),
        )
        obs_values = {
            name: expectation(op, state.ansatz, state.theta, samples)
            for name, op in observables.items()
        }
        yield EvolutionRecord(
            step=state.step_index,
            t=state.t,
            energy=est.energy,
            variance=est.variance.mean.real,
            phase=state.phase,
            observables=obs_values,
            sampler_diagnostics=dict(samples.diagnostics),
            theta=state.theta,
            tau=state.last_tau_used,
            residual=state.last_residual,
            solver=state.last_solver,
            n_rejected=state.last_rejects,
        )
        remaining = cfg.max_time - state.t
        if remaining <= 1e-12 or state.step_index >= cfg.max_steps:
            return

        step = heun_step(
            state, hamiltonian, cfg, current_sampler,
            master_seed=master_seed, stage1=est, tau_cap=remaining,
        )
        if cfg.adaptive_samples and current_sampler.kind == "mcmc":
            if step.solver.n_filtered > 0.5 * step.solver.truncated_rank:
                new_n = min(2 * current_sampler.n_samples, max_samples)
                current_sampler = current_sampler.with_samples(new_n)

        state = EvolutionState(
            ansatz=state.ansatz,
            theta=step.theta_new,
            t=state.t + step.tau_used,
            phase=state.phase + step.phase_increment,
            tau=step.tau_next,
            step_index=state.step_index + 1,
            last_tau_used=step.tau_used,
            last_residual=step.residual,
            last_solver=step.solver,
            last_rejects=step.n_rejected,
        )


def evolve_collect(*args, **kwargs) -> list[EvolutionRecord]:
    """Run :func:`evolve` to completion and return the record list."""
    return list(evolve(*args, **kwargs))
