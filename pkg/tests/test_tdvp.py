import numpy as np
import pytest

from nqsdyn.ansatz import (
    FullParametrization,
    RestrictedBoltzmann,
    attach_diagonal,
)
from nqsdyn.estimators import ForceEstimate, QgtEstimate, tdvp_expectations, tdvp_residual
from nqsdyn.model import (
    Lattice,
    PauliOperator,
    build_tfim,
    chain,
    pauli_string,
    single_site,
)
from nqsdyn.oracle import (
    DenseState,
    dense_matrix,
    exact_evolve,
    fidelity,
    nqs_to_dense,
    two_time_correlator,
)
from nqsdyn.sampler import SamplerSettings, sample_exact, sample_mcmc, ChainConfig
from nqsdyn.tdvp import (
    EvolutionState,
    RankZeroError,
    TauUnderflowError,
    TdvpConfig,
    evolve_collect,
    heun_step,
    solve_tdvp_system,
)

import oracles


def random_full_param(n, seed, scale=0.3):
    rng = np.random.default_rng(seed)
    amps = np.exp(scale * (rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)))
    ansatz = FullParametrization(n)
    return ansatz, ansatz.parameters_from_amplitudes(amps), amps


def make_estimates(hamiltonian, ansatz, theta):
    samples = sample_exact(ansatz, theta)
    return tdvp_expectations(hamiltonian, ansatz, theta, samples)


class TestSolve:
    def test_identity_qgt_returns_real_force(self):
        rng = np.random.default_rng(0)
        p = 6
        f = rng.normal(size=p) + 1j * rng.normal(size=p)
        qgt = QgtEstimate(np.eye(p, dtype=complex), float("inf"), 0)
        force = ForceEstimate(f, np.zeros(p), None, float("inf"))
        cfg = TdvpConfig()
        theta_dot, diag = solve_tdvp_system(qgt, force, cfg)
        assert np.allclose(theta_dot, f.real)
        assert diag.truncated_rank == p and diag.n_filtered == 0

    def test_rank_zero_raises(self):
        qgt = QgtEstimate(np.zeros((3, 3), dtype=complex), float("inf"), 0)
        force = ForceEstimate(np.ones(3, dtype=complex), np.zeros(3), None, float("inf"))
        with pytest.raises(RankZeroError):
            solve_tdvp_system(qgt, force, TdvpConfig())

    def test_exact_schroedinger_flow_full_parametrization(self):
        n = 5
        lat = chain(n, "periodic")
        h = build_tfim(lat, 1.0, 0.9, 0.2)
        ansatz, theta, amps = random_full_param(n, 1)
        est = make_estimates(h, ansatz, theta)
        cfg = TdvpConfig()
        theta_dot, _ = solve_tdvp_system(est.qgt, est.force, cfg)
        phase_dot = -1j * est.energy.mean - complex(theta_dot @ est.gamma_mean)
        gamma = ansatz.log_derivatives_batch(
            theta, __import__("nqsdyn.model", fromlist=["all_configurations"]).all_configurations(n)
        )
        psi_dot = (phase_dot + gamma @ theta_dot) * amps
        expected = -1j * (oracles.dense_tfim(n, lat.bonds, 1.0, 0.9, 0.2) @ amps)
        assert np.max(np.abs(psi_dot - expected)) < 1e-10 * np.max(np.abs(expected))

    def test_action_equals_distance_on_holomorphic_manifold(self):
        # Kaehler property: both variants coincide for complex-pair ansaetze
        n = 4
        h = build_tfim(chain(n, "periodic"), 1.0, 1.1)
        ansatz = RestrictedBoltzmann(n, alpha=1.0)
        theta = ansatz.initial_parameters(seed=3, scale=0.3)
        est = make_estimates(h, ansatz, theta)
        dot_d, _ = solve_tdvp_system(est.qgt, est.force, TdvpConfig(variant="distance", svd_cutoff=1e-10))
        dot_a, _ = solve_tdvp_system(est.qgt, est.force, TdvpConfig(variant="action", svd_cutoff=1e-10))
        scale = np.max(np.abs(dot_d))
        assert np.max(np.abs(dot_d - dot_a)) < 1e-8 * scale

    def test_snr_filter_monotone(self):
        n = 4
        h = build_tfim(chain(n, "periodic"), 1.0, 1.0)
        ansatz = RestrictedBoltzmann(n, alpha=1.5)
        theta = ansatz.initial_parameters(seed=4, scale=0.4)
        samples = sample_mcmc(ansatz, theta, 3000, ChainConfig(n_chains=4, seed=5))
        est = tdvp_expectations(h, ansatz, theta, samples)
        kept = []
        for threshold in (0.0, 1.0, 2.0, 4.0, 8.0, 16.0):
            cfg = TdvpConfig(snr_threshold=threshold, svd_cutoff=1e-12)
            _, diag = solve_tdvp_system(est.qgt, est.force, cfg)
            kept.append(diag.truncated_rank - diag.n_filtered)
        assert all(a >= b for a, b in zip(kept, kept[1:]))
        assert kept[-1] < kept[0]  # high threshold actually filters something

    def test_condition_error_amplification_trend(self):
        # synthetic system: solution error grows ~ kappa at fixed noise
        rng = np.random.default_rng(6)
        p = 40
        q, _ = np.linalg.qr(rng.normal(size=(p, p)))
        errors = []
        kappas = [1e1, 1e2, 1e3]
        for kappa in kappas:
            lam = np.geomspace(1.0, 1.0 / kappa, p)
            s = (q * lam) @ q.T
            x_true = rng.normal(size=p)
            trials = []
            for _ in range(12):
                noise = 1e-6 * rng.normal(size=p)
                b = s @ x_true + noise
                qgt = QgtEstimate(s.astype(complex), float("inf"), 0)
                force = ForceEstimate(b.astype(complex), np.zeros(p), None, float("inf"))
                sol, _ = solve_tdvp_system(qgt, force, TdvpConfig(svd_cutoff=1e-16, snr_threshold=0.0))
                trials.append(np.linalg.norm(sol - x_true))
            errors.append(np.mean(trials))
        assert errors[2] > errors[1] > errors[0]
        slope = np.polyfit(np.log(kappas), np.log(errors), 1)[0]
        assert 0.7 <= slope <= 1.3


class TestHeunStep:
    def test_zero_hamiltonian_keeps_state(self):
        n = 3
        ansatz, theta, _ = random_full_param(n, 7)
        h0 = PauliOperator([], n)
        cfg = TdvpConfig(tau0=0.01, tau_max=0.08, local_error_target=1e-9, max_time=1.0)
        state = EvolutionState(ansatz, theta)
        step = heun_step(state, h0, cfg, SamplerSettings(kind="exact"))
        assert np.allclose(step.theta_new.values, theta.values)
        assert step.phase_increment == 0.0
        assert step.tau_next == 2 * cfg.tau0  # error-free step doubles tau
        assert step.residual == pytest.approx(0.0, abs=1e-12)
        # over a run the step size saturates at tau_max and nothing moves
        records = evolve_collect(ansatz, theta, h0, cfg, SamplerSettings(kind="exact"))
        assert max(r.tau for r in records[1:]) == cfg.tau_max
        assert records[-1].t == pytest.approx(cfg.max_time, abs=1e-12)
        assert np.allclose(records[-1].theta.values, theta.values)
        assert records[-1].phase == 0.0

    def test_full_param_residual_is_zero(self):
        n = 4
        h = build_tfim(chain(n, "periodic"), 1.0, 1.0)
        ansatz, theta, _ = random_full_param(n, 8)
        est = make_estimates(h, ansatz, theta)
        theta_dot, _ = solve_tdvp_system(est.qgt, est.force, TdvpConfig())
        r2 = tdvp_residual(est.qgt, est.force, theta_dot, est.variance.mean.real, 0.01)
        assert abs(r2) < 1e-10

    def test_tau_underflow_aborts_with_diagnostics(self):
        n = 3
        h = build_tfim(chain(n, "periodic"), 1.0, 1.0)
        ansatz, theta, _ = random_full_param(n, 9)
        cfg = TdvpConfig(tau0=0.1, tau_min=0.05, tau_max=0.1,
                         local_error_target=1e-14, max_time=1.0)
        with pytest.raises(TauUnderflowError) as err:
            heun_step(EvolutionState(ansatz, theta), h, cfg, SamplerSettings(kind="exact"))
        assert err.value.diagnostics["error"] > 1e-14

    def test_rabi_trajectory_matches_analytic(self):
        h_field = 1.0
        h = build_tfim(Lattice(1, (1,), "open", ()), J=0.0, hx=h_field)
        c, s = np.cos(np.pi / 8), np.sin(np.pi / 8)
        amps0 = np.array([c, s], dtype=complex)
        ansatz = FullParametrization(1)
        theta0 = ansatz.parameters_from_amplitudes(amps0)
        cfg = TdvpConfig(max_time=1.0, local_error_target=1e-8, tau0=1e-3, tau_max=0.05)
        records = evolve_collect(ansatz, theta0, h, cfg, SamplerSettings(kind="exact"))
        final = records[-1]
        assert final.t == pytest.approx(1.0, abs=1e-12)
        psi = np.exp(final.phase) * nqs_to_dense(ansatz, final.theta).amplitudes
        t = final.t
        rot = np.array(
            [
                [np.cos(h_field * t), 1j * np.sin(h_field * t)],
                [1j * np.sin(h_field * t), np.cos(h_field * t)],
            ]
        )
        assert np.max(np.abs(psi - rot @ amps0)) < 1e-6


class TestEvolve:
    def test_zero_time_single_record(self):
        ansatz, theta, _ = random_full_param(3, 10)
        h = build_tfim(chain(3, "periodic"), 1.0, 1.0)
        cfg = TdvpConfig(max_time=0.0)
        records = evolve_collect(ansatz, theta, h, cfg, SamplerSettings(kind="exact"))
        assert len(records) == 1
        assert records[0].t == 0.0
        assert records[0].tau is None

    def test_deterministic_trajectory_with_mcmc(self):
        n = 3
        h = build_tfim(chain(n, "periodic"), 1.0, 1.0)
        ansatz = RestrictedBoltzmann(n, alpha=1.0)
        theta = ansatz.initial_parameters(seed=11, scale=0.2)
        cfg = TdvpConfig(max_time=0.02, tau0=0.01, tau_min=0.01, tau_max=0.01,
                         local_error_target=1e30)
        sampler = SamplerSettings(kind="mcmc", n_samples=500, n_chains=4)
        runs = [
            evolve_collect(ansatz, theta, h, cfg, sampler, master_seed=99)
            for _ in range(2)
        ]
        for ra, rb in zip(*runs):
            assert np.array_equal(ra.theta.values, rb.theta.values)
            assert ra.energy.mean == rb.energy.mean
        other = evolve_collect(ansatz, theta, h, cfg, sampler, master_seed=100)
        assert not np.array_equal(runs[0][-1].theta.values, other[-1].theta.values)

    def test_energy_conservation_action_variant_short(self):
        n = 4
        h = build_tfim(chain(n, "periodic"), 1.0, 1.2)
        ansatz = RestrictedBoltzmann(n, alpha=1.0)
        theta = ansatz.initial_parameters(seed=12, scale=0.3)
        cfg = TdvpConfig(variant="action", max_time=0.5, local_error_target=1e-6,
                         tau0=1e-3, tau_max=0.02)
        records = evolve_collect(ansatz, theta, h, cfg, SamplerSettings(kind="exact"))
        energies = [r.energy.mean.real for r in records]
        assert abs(energies[-1] - energies[0]) < 10 * cfg.local_error_target * 0.5 + 1e-9

    def test_residual_tracks_expressivity(self):
        # richer network -> smaller residual integral and smaller final error
        n = 6
        h = build_tfim(chain(n, "periodic"), 1.0, 1.0)
        psi0 = oracles.plus_x_state(n)
        outcomes = []
        for alpha in (1.0, 4.0):
            ansatz = RestrictedBoltzmann(n, alpha=alpha)
            theta = ansatz.initial_parameters(seed=13, scale=1e-2)
            cfg = TdvpConfig(max_time=0.5, local_error_target=1e-5, tau0=2e-3,
                             tau_max=0.02)
            records = evolve_collect(ansatz, theta, h, cfg, SamplerSettings(kind="exact"))
            integral = sum(r.residual for r in records if r.residual is not None)
            start = nqs_to_dense(ansatz, theta)
            target = exact_evolve(start, h, records[-1].t)
            infid = 1.0 - fidelity(nqs_to_dense(ansatz, records[-1].theta), target)
            outcomes.append((integral, infid))
        (int_small, err_small), (int_large, err_large) = outcomes
        assert int_large < int_small
        assert err_large < err_small


class TestTwoTimeCorrelatorPipeline:
    def test_diagonal_attachment_reproduces_ed_correlator(self):
        n = 6
        h = build_tfim(chain(n, "periodic"), 1.0, 1.0)
        rng = np.random.default_rng(14)
        amps0 = np.exp(0.2 * (rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)))
        base = FullParametrization(n)
        theta0 = base.parameters_from_amplitudes(amps0)
        op_a = single_site("Z", 1, n, 0.5)  # S^z at site 1
        op_b = single_site("Z", 4, n, 0.5)
        attached = attach_diagonal(base, op_a)

        t_final = 0.2
        cfg = TdvpConfig(max_time=t_final, local_error_target=1e-6, tau0=1e-3, tau_max=0.01)
        rec_plain = evolve_collect(base, theta0, h, cfg, SamplerSettings(kind="exact"))[-1]
        rec_att = evolve_collect(attached, theta0, h, cfg, SamplerSettings(kind="exact"))[-1]

        u = np.exp(rec_plain.phase) * nqs_to_dense(base, rec_plain.theta).amplitudes
        w = np.exp(rec_att.phase) * nqs_to_dense(attached, rec_att.theta).amplitudes
        value = np.vdot(u, dense_matrix(op_b) @ w)

        expected = two_time_correlator(DenseState(amps0, n), h, op_a, op_b, t_final)
        assert abs(value - expected) < 5e-5 * abs(expected)
