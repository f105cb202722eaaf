"""Born-distribution sampling: Metropolis Markov chains and full summation.

Chains carry independent random streams derived from a master seed, advance
in vectorized lockstep, and are merged in chain order, so a run is
bit-for-bit reproducible from (seed, config) alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import all_configurations

EXACT_SUMMATION_CAP = 16
ACCEPTANCE_FLOOR = 1e-3


class StuckChainError(RuntimeError):
    """Raised when the post-burn-in acceptance rate falls below the floor."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class ChainConfig:
    n_chains: int = 16
    burn_in_sweeps: Optional[int] = None  # default: one sweep per site count
    thinning: int = 1  # sweeps between recorded samples
    proposal: str = "single-flip"  # "single-flip" | "exchange"
    seed: int = 0

    def __post_init__(self):
        if self.n_chains < 1 or self.thinning < 1:
            raise ValueError("n_chains and thinning must be >= 1")
        if self.proposal not in ("single-flip", "exchange"):
            raise ValueError(f"unknown proposal {self.proposal!r}")


@dataclass
class SampleSet:
    """Configurations with weights, cached log-amplitudes and diagnostics.

    MCMC samples are chain-major: sample i of chain c sits at row
    c * samples_per_chain + i.  Full-summation sets carry the whole basis
    with normalized Born weights and are flagged ``is_exact``.
    """

    bits: np.ndarray  # (n, N) uint8
    weights: np.ndarray  # (n,) float, >= 0, sums to 1
    log_amplitudes: np.ndarray  # (n,) complex
    is_exact: bool
    n_chains: int
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if abs(float(self.weights.sum()) - 1.0) > 1e-10:
            raise ValueError("weights must sum to 1")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")

    @property
    def n_samples(self) -> int:
        return self.bits.shape[0]

    def chain_view(self, values: np.ndarray) -> np.ndarray:
        """Reshape a per-sample series to (n_chains, samples_per_chain)."""
        if self.is_exact or self.n_chains < 1:
            raise ValueError("chain view only applies to MCMC sample sets")
        return values.reshape(self.n_chains, -1)


def integrated_autocorrelation(series: np.ndarray) -> float:
    """Integrated autocorrelation time of (n_chains, n) real series.

    Geyer initial-positive-sequence truncation on pair sums, averaged over
    chains; returns >= 1 (1 for uncorrelated samples).
    """
    series = np.atleast_2d(np.asarray(series, dtype=np.float64))
    n = series.shape[1]
    if n < 4:
        return 1.0
    taus = []
    for chain in series:
        centered = chain - chain.mean()
        var = centered @ centered / n
        if var <= 0:
            taus.append(1.0)
            continue
        # autocovariance via FFT
        size = 2 * n
        f = np.fft.rfft(centered, size)
        acov = np.fft.irfft(f * f.conj(), size)[:n] / n
        rho = acov / acov[0]
        tau = 1.0
        for m in range(1, n // 2):
            pair = rho[2 * m - 1] + rho[2 * m]
            if pair <= 0:
                break
            tau += 2.0 * pair
        taus.append(max(tau, 1.0))
    return float(np.mean(taus))


def sample_exact(ansatz, theta, n_sites: Optional[int] = None, cap: int = EXACT_SUMMATION_CAP) -> SampleSet:
    """Full-summation sample set: entire basis, normalized Born weights."""
    n = ansatz.n_sites if n_sites is None else n_sites
    if n != ansatz.n_sites:
        raise ValueError("n_sites disagrees with the ansatz")
    if n > cap:
        mem = (1 << n) * (n + 24)
        raise ValueError(
            f"full summation over 2^{n} configurations exceeds cap {cap} "
            f"(would need about {mem / 1e6:.0f} MB)"
        )
    bits = all_configurations(n)
    log_amps = ansatz.log_amplitude_batch(theta, bits)
    re = log_amps.real
    finite = ~np.isneginf(re)
    if not np.any(finite):
        raise ValueError("state has zero amplitude everywhere")
    weights = np.zeros(bits.shape[0])
    shift = re[finite].max()
    weights[finite] = np.exp(2.0 * (re[finite] - shift))
    weights /= weights.sum()
    return SampleSet(
        bits=bits,
        weights=weights,
        log_amplitudes=log_amps,
        is_exact=True,
        n_chains=0,
        diagnostics={"kind": "exact", "n_samples": bits.shape[0]},
    )


@dataclass(frozen=True)
class SamplerSettings:
    """Which sampler a propagation driver should use, and its budget."""

    kind: str = "exact"  # "exact" | "mcmc"
    n_samples: int = 10_000
    n_chains: int = 16
    burn_in_sweeps: Optional[int] = None
    thinning: int = 1
    proposal: str = "single-flip"
    seed: int = 0
    n_threads: int = 1

    def __post_init__(self):
        if self.kind not in ("exact", "mcmc"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")

    def with_samples(self, n_samples: int) -> "SamplerSettings":
        from dataclasses import replace

        return replace(self, n_samples=n_samples)

    def draw(self, ansatz, theta, seed: Optional[int] = None) -> SampleSet:
        if self.kind == "exact":
            return sample_exact(ansatz, theta)
        cfg = ChainConfig(
            n_chains=self.n_chains,
            burn_in_sweeps=self.burn_in_sweeps,
            thinning=self.thinning,
            proposal=self.proposal,
            seed=self.seed if seed is None else seed,
        )
        return sample_mcmc(ansatz, theta, self.n_samples, cfg, self.n_threads)


def derive_seed(master: int, *path: int) -> int:
    """Deterministic child seed for (step, stage, attempt) style paths."""
    return int(np.random.SeedSequence((master,) + path).generate_state(1)[0])


def _propose(bits, chi, site_a, site_b, log_u, ansatz, theta, proposal):
    n_chains = bits.shape[0]
    rows = np.arange(n_chains)
    candidate = bits.copy()
    if proposal == "single-flip":
        candidate[rows, site_a] ^= 1
    else:  # exchange: swap a pair of opposite spins (no-op when equal)
        diff = candidate[rows, site_a] ^ candidate[rows, site_b]
        candidate[rows, site_a] ^= diff
        candidate[rows, site_b] ^= diff
    chi_new = ansatz.log_amplitude_batch(theta, candidate)
    log_ratio = 2.0 * (chi_new.real - chi.real)
    # -inf proposal log-amplitudes are never accepted
    with np.errstate(invalid="ignore"):
        accept = log_u < log_ratio
    accept &= ~np.isneginf(chi_new.real)
    bits[accept] = candidate[accept]
    chi[accept] = chi_new[accept]
    return accept


def sample_mcmc(
    ansatz, theta, n_samples: int, chain_cfg: ChainConfig, n_threads: int = 1
) -> SampleSet:
    """Metropolis sampling of p(x) ~ |psi(x)|^2.

    ``n_samples`` is rounded up to a multiple of ``n_chains``; one sweep is
    one proposal attempt per site.  Chains may advance in ``n_threads``
    parallel groups; the result is identical for any thread count.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    n_sites = ansatz.n_sites
    n_chains = chain_cfg.n_chains
    burn_in = chain_cfg.burn_in_sweeps if chain_cfg.burn_in_sweeps is not None else n_sites
    per_chain = -(-n_samples // n_chains)
    sweeps = burn_in + per_chain * chain_cfg.thinning
    attempts = sweeps * n_sites

    streams = [
        np.random.Generator(np.random.PCG64(ss))
        for ss in np.random.SeedSequence(chain_cfg.seed).spawn(n_chains)
    ]

    # initial configurations, resampled away from zero-amplitude labels
    bits = np.empty((n_chains, n_sites), dtype=np.uint8)
    for c, rng in enumerate(streams):
        for _ in range(100):
            bits[c] = rng.integers(0, 2, size=n_sites, dtype=np.uint8)
            if not np.isneginf(
                ansatz.log_amplitude_batch(theta, bits[c : c + 1]).real[0]
            ):
                break
        else:
            raise ValueError("could not find an initial configuration with support")

    # per-chain random streams, drawn chain by chain in a fixed order
    site_a = np.empty((n_chains, attempts), dtype=np.int64)
    site_b = np.empty((n_chains, attempts), dtype=np.int64)
    log_u = np.empty((n_chains, attempts))
    for c, rng in enumerate(streams):
        site_a[c] = rng.integers(0, n_sites, size=attempts)
        if chain_cfg.proposal == "exchange":
            site_b[c] = rng.integers(0, n_sites, size=attempts)
        with np.errstate(divide="ignore"):
            log_u[c] = np.log(rng.random(attempts))

    chi = ansatz.log_amplitude_batch(theta, bits)
    burn_attempts = burn_in * n_sites
    out_bits = np.empty((n_chains, per_chain, n_sites), dtype=np.uint8)
    out_chi = np.empty((n_chains, per_chain), dtype=np.complex128)

    def run_group(rows: np.ndarray) -> int:
        # advances one block of chains in lockstep; streams were drawn per
        # chain beforehand, so the grouping cannot change the trajectory
        g_bits = bits[rows]
        g_chi = chi[rows]
        accepted = 0
        record = 0
        for step in range(attempts):
            accept = _propose(
                g_bits, g_chi, site_a[rows, step], site_b[rows, step],
                log_u[rows, step], ansatz, theta, chain_cfg.proposal,
            )
            if step >= burn_attempts:
                accepted += int(accept.sum())
                if (step - burn_attempts + 1) % (chain_cfg.thinning * n_sites) == 0:
                    out_bits[rows, record] = g_bits
                    out_chi[rows, record] = g_chi
                    record += 1
        return accepted

    if n_threads > 1 and n_chains > 1:
        from concurrent.futures import ThreadPoolExecutor

        groups = np.array_split(np.arange(n_chains), min(n_threads, n_chains))
        with ThreadPoolExecutor(max_workers=len(groups)) as pool:
            accepted = sum(pool.map(run_group, groups))
    else:
        accepted = run_group(np.arange(n_chains))

    n_total = n_chains * per_chain
    acceptance = accepted / max(1, attempts * n_chains - burn_attempts * n_chains)
    autocorr = integrated_autocorrelation(out_chi.real)
    diagnostics = {
        "kind": "mcmc",
        "acceptance_rate": acceptance,
        "autocorr_time": autocorr,
        "n_chains": n_chains,
        "n_sweeps": sweeps,
        "burn_in_sweeps": burn_in,
        "thinning": chain_cfg.thinning,
        "proposal": chain_cfg.proposal,
        "seed": chain_cfg.seed,
        "n_samples": n_total,
    }
    if acceptance < ACCEPTANCE_FLOOR:
        raise StuckChainError(
            f"acceptance rate {acceptance:.2e} below floor {ACCEPTANCE_FLOOR}",
            diagnostics,
        )
    return SampleSet(
        bits=out_bits.reshape(n_total, n_sites),
        weights=np.full(n_total, 1.0 / n_total),
        log_amplitudes=out_chi.reshape(n_total),
        is_exact=False,
        n_chains=n_chains,
        diagnostics=diagnostics,
    )
