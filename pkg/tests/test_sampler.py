import numpy as np
import pytest

from nqsdyn.ansatz import (
    FullParametrization,
    Jastrow,
    ParameterVector,
    RestrictedBoltzmann,
    attach_diagonal,
)
from nqsdyn.model import PauliOperator, all_configurations, bits_matrix_to_ints, pauli_string
from nqsdyn.sampler import (
    ChainConfig,
    StuckChainError,
    integrated_autocorrelation,
    sample_exact,
    sample_mcmc,
)

import oracles


def full_param_state(n, seed):
    rng = np.random.default_rng(seed)
    amps = oracles.random_state(n, rng)
    ansatz = FullParametrization(n)
    return ansatz, ansatz.parameters_from_amplitudes(amps), amps


class TestSampleExact:
    def test_equal_amplitude_weights(self):
        ansatz = RestrictedBoltzmann(2, alpha=1.0)
        theta = ParameterVector(np.zeros(ansatz.n_parameters), ansatz.layout)
        samples = sample_exact(ansatz, theta)
        assert np.allclose(samples.weights, 0.25)
        assert samples.is_exact

    @pytest.mark.parametrize("n", [3, 6, 9, 12])
    def test_weights_normalized(self, n):
        ansatz, theta, _ = full_param_state(n, seed=n)
        samples = sample_exact(ansatz, theta)
        assert abs(samples.weights.sum() - 1.0) < 1e-14

    def test_weights_match_born_probabilities(self):
        ansatz, theta, amps = full_param_state(4, seed=1)
        samples = sample_exact(ansatz, theta)
        p = np.abs(amps) ** 2
        assert np.allclose(samples.weights, p / p.sum(), atol=1e-13)

    def test_cap_rejected_with_memory_report(self):
        ansatz = RestrictedBoltzmann(18, alpha=0.5)
        theta = ansatz.initial_parameters(seed=0)
        with pytest.raises(ValueError, match="MB"):
            sample_exact(ansatz, theta)

    def test_zero_amplitudes_get_zero_weight(self):
        projector = PauliOperator([pauli_string(0.5), pauli_string(0.5, (0, "Z"))], 2)
        ansatz = attach_diagonal(FullParametrization(2), projector)
        theta = FullParametrization(2).initial_parameters(seed=3)
        samples = sample_exact(ansatz, theta)
        assert samples.weights[1] == 0.0 and samples.weights[3] == 0.0


class TestSampleMcmc:
    def test_flat_distribution_accepts_everything(self):
        ansatz = RestrictedBoltzmann(4, alpha=1.0)
        theta = ParameterVector(np.zeros(ansatz.n_parameters), ansatz.layout)
        samples = sample_mcmc(ansatz, theta, 512, ChainConfig(n_chains=4, seed=5))
        assert samples.diagnostics["acceptance_rate"] == 1.0

    def test_born_frequencies_within_multinomial_bound(self):
        n = 4
        ansatz, theta, amps = full_param_state(n, seed=2)
        n_samples = 1_000_000
        samples = sample_mcmc(
            ansatz, theta, n_samples, ChainConfig(n_chains=64, thinning=1, seed=11)
        )
        labels = bits_matrix_to_ints(samples.bits)
        freq = np.bincount(labels, minlength=1 << n) / samples.n_samples
        p = np.abs(amps) ** 2
        p /= p.sum()
        tv = 0.5 * np.abs(freq - p).sum()
        bound = 2.0 * np.sqrt(p * (1 - p) / samples.n_samples).sum()  # 4 sigma, halved
        assert tv < bound

    def test_exchange_conserves_magnetization(self):
        ansatz, theta, _ = full_param_state(4, seed=3)
        cfg = ChainConfig(n_chains=2, proposal="exchange", seed=9)
        samples = sample_mcmc(ansatz, theta, 200, cfg)
        sums = samples.bits.sum(axis=1)
        per_chain = samples.chain_view(sums.astype(float))
        for chain in per_chain:
            assert np.all(chain == chain[0])

    def test_reproducible_bit_for_bit(self):
        ansatz, theta, _ = full_param_state(3, seed=4)
        cfg = ChainConfig(n_chains=3, seed=21)
        a = sample_mcmc(ansatz, theta, 300, cfg)
        b = sample_mcmc(ansatz, theta, 300, cfg)
        assert np.array_equal(a.bits, b.bits)
        assert np.array_equal(a.log_amplitudes, b.log_amplitudes)
        c = sample_mcmc(ansatz, theta, 300, ChainConfig(n_chains=3, seed=22))
        assert not np.array_equal(a.bits, c.bits)

    def test_thread_count_does_not_change_results(self):
        ansatz, theta, _ = full_param_state(3, seed=6)
        cfg = ChainConfig(n_chains=4, seed=33)
        a = sample_mcmc(ansatz, theta, 400, cfg, n_threads=1)
        b = sample_mcmc(ansatz, theta, 400, cfg, n_threads=3)
        assert np.array_equal(a.bits, b.bits)

    def test_zero_amplitude_configs_never_sampled(self):
        projector = PauliOperator([pauli_string(0.5), pauli_string(0.5, (1, "Z"))], 3)
        base = FullParametrization(3)
        ansatz = attach_diagonal(base, projector)
        theta = base.initial_parameters(seed=8)
        samples = sample_mcmc(ansatz, theta, 500, ChainConfig(n_chains=4, seed=13))
        assert np.all(samples.bits[:, 1] == 0)  # bit 1 set would have zero weight

    def test_stuck_chain_raises(self):
        # steep single-peak landscape: every move away from all-up is rejected
        ansatz = Jastrow(4, tuple((i,) for i in range(4)))
        theta = ansatz.parameters_from_coefficients(np.full(4, 25.0 + 0j))
        cfg = ChainConfig(n_chains=4, burn_in_sweeps=8, seed=17)
        with pytest.raises(StuckChainError) as err:
            sample_mcmc(ansatz, theta, 2000, cfg)
        assert err.value.diagnostics["acceptance_rate"] < 1e-3

    def test_chain_major_layout_and_diagnostics(self):
        ansatz, theta, _ = full_param_state(3, seed=5)
        cfg = ChainConfig(n_chains=5, thinning=2, seed=1)
        samples = sample_mcmc(ansatz, theta, 103, cfg)  # rounds up to 105
        assert samples.n_samples == 105
        assert samples.diagnostics["n_chains"] == 5
        assert samples.diagnostics["thinning"] == 2
        assert samples.diagnostics["autocorr_time"] >= 1.0
        chained = samples.chain_view(samples.log_amplitudes.real)
        assert chained.shape == (5, 21)


class TestAutocorrelation:
    def test_uncorrelated_series(self):
        rng = np.random.default_rng(0)
        series = rng.normal(size=(4, 4000))
        assert integrated_autocorrelation(series) == pytest.approx(1.0, abs=0.15)

    def test_ar1_series(self):
        rng = np.random.default_rng(1)
        rho = 0.8
        n = 200_000
        noise = rng.normal(size=n)
        series = np.empty(n)
        series[0] = noise[0]
        for i in range(1, n):
            series[i] = rho * series[i - 1] + noise[i]
        expected = (1 + rho) / (1 - rho)  # = 9 for rho = 0.8
        tau = integrated_autocorrelation(series[None, :])
        assert tau == pytest.approx(expected, rel=0.2)
