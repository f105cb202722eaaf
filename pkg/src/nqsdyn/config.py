"""Run configuration: strict, versioned TOML with nested sections.

Unknown keys anywhere are rejected, so a typo cannot silently fall back to
a default.  The parsed object carries ready-to-use model, ansatz, sampler
and method settings.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .ansatz import Ansatz, build_ansatz
from .globalopt import GlobalConfig, OptimizerConfig
from .model import Lattice, PauliOperator, build_heisenberg, build_tfim, chain, square
from .sampler import SamplerSettings
from .tdvp import TdvpConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid or unparsable run configuration."""


_SECTIONS = {"model", "ansatz", "sampler", "method", "observables", "output"}

_MODEL_KEYS = {"kind", "dimension", "extent", "boundary", "J", "hx", "hz"}
_ANSATZ_KEYS = {"architecture", "alpha", "hidden", "init_scale", "init_seed"}
_SAMPLER_KEYS = {
    "kind", "n_samples", "n_chains", "burn_in_sweeps", "thinning", "proposal", "seed",
}
_METHOD_KEYS = {
    "kind", "variant", "svd_cutoff", "diagonal_shift", "snr_threshold",
    "tau0", "tau_min", "tau_max", "local_error_target", "max_time",
    "adaptive_samples", "max_steps",
    "propagator", "tau", "optimizer", "learning_rate", "max_iterations",
    "infidelity_target", "branch_budget",
}
_OBSERVABLE_KEYS = {"kind", "axis", "site", "i", "j"}
_OUTPUT_KEYS = {"records", "checkpoint_every"}


def _check_keys(section: str, data: dict, allowed: set):
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}"
        )


@dataclass
class RunConfig:
    lattice: Lattice
    hamiltonian: PauliOperator
    ansatz: Ansatz
    init_scale: float
    init_seed: int
    sampler: SamplerSettings
    method_kind: str  # "tdvp" | "global"
    tdvp: Optional[TdvpConfig]
    global_cfg: Optional[GlobalConfig]
    optimizer: Optional[OptimizerConfig]
    observable_specs: list
    records_name: str
    checkpoint_every: int
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites


def _build_lattice(model: dict) -> Lattice:
    dimension = model.get("dimension", 1)
    extent = model.get("extent")
    boundary = model.get("boundary", "periodic")
    if extent is None:
        raise ConfigError("[model] needs an extent")
    if dimension == 1:
        if len(extent) != 1:
            raise ConfigError("1D extent must be a single length")
        if extent[0] == 1:
            return Lattice(1, (1,), "open", ())
        return chain(extent[0], boundary)
    if dimension == 2:
        if len(extent) != 2:
            raise ConfigError("2D extent must be [lx, ly]")
        return square(extent[0], extent[1], boundary)
    raise ConfigError("dimension must be 1 or 2")


def _build_model(model: dict):
    _check_keys("model", model, _MODEL_KEYS)
    lattice = _build_lattice(model)
    kind = model.get("kind")
    try:
        if kind == "tfim":
            hamiltonian = build_tfim(
                lattice,
                float(model.get("J", 0.0)),
                float(model.get("hx", 0.0)),
                float(model.get("hz", 0.0)),
            )
        elif kind == "heisenberg":
            if "hx" in model or "hz" in model:
                raise ConfigError("heisenberg model takes only J")
            hamiltonian = build_heisenberg(lattice, float(model.get("J", 0.0)))
        else:
            raise ConfigError(f"unknown model kind {kind!r}")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return lattice, hamiltonian


def _build_ansatz(section: dict, n_sites: int) -> tuple[Ansatz, float, int]:
    _check_keys("ansatz", section, _ANSATZ_KEYS)
    architecture = section.get("architecture", "rbm")
    metadata: dict[str, Any] = {}
    if architecture == "rbm":
        metadata["alpha"] = float(section.get("alpha", 1.0))
    elif architecture == "feedforward":
        metadata["hidden"] = [int(w) for w in section.get("hidden", [n_sites])]
    elif architecture in ("jastrow", "full-parametrization"):
        pass
    else:
        raise ConfigError(f"unknown architecture {architecture!r}")
    try:
        ansatz = build_ansatz(architecture, n_sites, metadata)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return (
        ansatz,
        float(section.get("init_scale", 1e-2)),
        int(section.get("init_seed", 0)),
    )


def _build_sampler(section: dict) -> SamplerSettings:
    _check_keys("sampler", section, _SAMPLER_KEYS)
    kind = section.get("kind", "exact")
    try:
        return SamplerSettings(
            kind=kind,
            n_samples=int(section.get("n_samples", 10_000)),
            n_chains=int(section.get("n_chains", 16)),
            burn_in_sweeps=section.get("burn_in_sweeps"),
            thinning=int(section.get("thinning", 1)),
            proposal=section.get("proposal", "single-flip"),
            seed=int(section.get("seed", 0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _build_method(section: dict):
    _check_keys("method", section, _METHOD_KEYS)
    kind = section.get("kind", "tdvp")
    if kind == "tdvp":
        try:
            tdvp = TdvpConfig(
                variant=section.get("variant", "distance"),
                svd_cutoff=float(section.get("svd_cutoff", 1e-8)),
                diagonal_shift=float(section.get("diagonal_shift", 0.0)),
                snr_threshold=float(section.get("snr_threshold", 2.0)),
                tau0=float(section.get("tau0", 1e-3)),
                tau_min=float(section.get("tau_min", 1e-9)),
                tau_max=float(section.get("tau_max", 0.1)),
                local_error_target=float(section.get("local_error_target", 1e-6)),
                max_time=float(section.get("max_time", 1.0)),
                adaptive_samples=bool(section.get("adaptive_samples", False)),
                max_steps=int(section.get("max_steps", 1_000_000)),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return "tdvp", tdvp, None, None
    if kind == "global":
        try:
            global_cfg = GlobalConfig(
                propagator=section.get("propagator", "trotter2"),
                tau=float(section.get("tau", 0.05)),
                max_time=float(section.get("max_time", 1.0)),
                branch_budget=int(section.get("branch_budget", 1 << 14)),
            )
            optimizer = OptimizerConfig(
                method=section.get("optimizer", "natural_gradient"),
                learning_rate=float(section.get("learning_rate", 1.0)),
                max_iterations=int(section.get("max_iterations", 200)),
                infidelity_target=float(section.get("infidelity_target", 1e-7)),
                svd_cutoff=float(section.get("svd_cutoff", 1e-8)),
                diagonal_shift=float(section.get("diagonal_shift", 0.0)),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return "global", None, global_cfg, optimizer
    raise ConfigError(f"unknown method kind {kind!r}")


def parse_config(path) -> RunConfig:
    """Load and validate a run configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc

    version = raw.get("config_version")
    if version != CONFIG_VERSION:
        raise ConfigError(
            f"config_version must be {CONFIG_VERSION}, got {version!r}"
        )
    unknown = set(raw) - _SECTIONS - {"config_version"}
    if unknown:
        raise ConfigError(f"unknown top-level section(s): {', '.join(sorted(unknown))}")
    for required in ("model", "ansatz", "sampler", "method"):
        if required not in raw:
            raise ConfigError(f"missing required section [{required}]")

    lattice, hamiltonian = _build_model(raw["model"])
    ansatz, init_scale, init_seed = _build_ansatz(raw["ansatz"], lattice.n_sites)
    sampler = _build_sampler(raw["sampler"])
    method_kind, tdvp, global_cfg, optimizer = _build_method(raw["method"])

    specs = raw.get("observables", [])
    if not isinstance(specs, list):
        raise ConfigError("observables must be an array of tables")
    for spec in specs:
        _check_keys("observables", spec, _OBSERVABLE_KEYS)

    output = raw.get("output", {})
    _check_keys("output", output, _OUTPUT_KEYS)

    return RunConfig(
        lattice=lattice,
        hamiltonian=hamiltonian,
        ansatz=ansatz,
        init_scale=init_scale,
        init_seed=init_seed,
        sampler=sampler,
        method_kind=method_kind,
        tdvp=tdvp,
        global_cfg=global_cfg,
        optimizer=optimizer,
        observable_specs=specs,
        records_name=output.get("records", "records.jsonl"),
        checkpoint_every=int(output.get("checkpoint_every", 0)),
        raw=raw,
    )
