"""Command-line orchestration: config parsing, run dispatch, output files.

Exit codes: 0 success, 2 configuration error, 3 runtime abort,
4 step-size underflow (possible dynamical quantum phase transition).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .ansatz import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, parse_config
from .estimators import ScalarEstimate
from .globalopt import OptimizationDivergedError, evolve_global
from .io import RecordWriter, read_records, record_to_json, write_metadata
from .model import bits_matrix_to_ints
from .observables import (
    loschmidt_rate,
    parse_observable_specs,
    wants_loschmidt,
)
from .oracle import (
    DenseState,
    apply_operator,
    exact_evolve,
    expectation_dense,
    nqs_to_dense,
)
from .sampler import StuckChainError, sample_exact
from .tdvp import EvolutionState, RankZeroError, TauUnderflowError, evolve

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_DQPT = 4

SUBCOMMANDS = (
    "evolve-tdvp",
    "evolve-global",
    "benchmark-ed",
    "sample-check",
    "validate-config",
)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nqsdyn",
        description="Variational real-time evolution of neural quantum states.",
    )
    parser.add_argument("--version", action="version", version=f"nqsdyn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="run configuration (TOML)")
        cmd.add_argument("--output", default="nqsdyn-out", help="output directory")
        cmd.add_argument("--seed", type=int, default=None, help="override the run seed")
        cmd.add_argument(
            "--threads", type=int, default=None,
            help="sampler worker threads (fallback: NQSDYN_THREADS)",
        )
        cmd.add_argument("--resume", default=None, help="checkpoint file to resume from")
    return parser


def _resolve_threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("NQSDYN_THREADS")
    return max(1, int(env)) if env else 1


def _prepare(cfg: RunConfig, args):
    """Initial parameters, optional resume state, loschmidt reference."""
    from dataclasses import replace

    if args.seed is not None:
        cfg.sampler = replace(cfg.sampler, seed=args.seed)
    cfg.sampler = replace(cfg.sampler, n_threads=_resolve_threads(args))

    resume = None
    if args.resume:
        loaded = load_checkpoint(args.resume)
        if loaded["ansatz"].architecture != cfg.ansatz.architecture:
            raise ConfigError("checkpoint architecture disagrees with config")
        cfg.ansatz = loaded["ansatz"]
        theta0 = loaded["theta"]
        resume = loaded
    else:
        theta0 = cfg.ansatz.initial_parameters(cfg.init_seed, cfg.init_scale)

    observables = parse_observable_specs(cfg.observable_specs, cfg.n_sites)
    psi0_dense = None
    if wants_loschmidt(cfg.observable_specs):
        try:
            psi0_dense = nqs_to_dense(cfg.ansatz, theta0)
        except ValueError as exc:
            raise ConfigError(
                f"loschmidt observable needs a dense reference state: {exc}"
            ) from exc
    return theta0, resume, observables, psi0_dense


def _emit(writer, cfg, record, outdir, psi0_dense, final=False):
    checkpoint = None
    cadence = cfg.checkpoint_every
    if record.theta is not None and (final or (cadence > 0 and record.step % cadence == 0)):
        ckpt_dir = outdir / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)
        name = f"step_{record.step:06d}.json"
        save_checkpoint(
            ckpt_dir / name, cfg.ansatz, record.theta, seed=cfg.sampler.seed,
            t=record.t, phase=record.phase if record.phase is not None else 0.0,
        )
        checkpoint = f"checkpoints/{name}"
    if psi0_dense is not None and record.theta is not None:
        rate = loschmidt_rate(psi0_dense, cfg.ansatz, theta=record.theta)
        record.observables["loschmidt_rate"] = ScalarEstimate(
            complex(rate), 0.0, 0.0, float("inf")
        )
    writer.write(record_to_json(record, checkpoint))


def _cmd_evolve_tdvp(cfg: RunConfig, args, outdir: Path) -> int:
    if cfg.method_kind != "tdvp":
        raise ConfigError("evolve-tdvp needs [method] kind = \"tdvp\"")
    theta0, resume, observables, psi0_dense = _prepare(cfg, args)
    initial_state = None
    if resume is not None:
        initial_state = EvolutionState(
            cfg.ansatz, theta0, t=resume["t"], phase=resume["phase"]
        )
    writer = RecordWriter(outdir / cfg.records_name)
    last = None
    try:
        for record in evolve(
            cfg.ansatz, theta0, cfg.hamiltonian, cfg.tdvp, cfg.sampler,
            observables=observables, master_seed=cfg.sampler.seed,
            initial_state=initial_state,
        ):
            last = record
            _emit(writer, cfg, record, outdir, psi0_dense,
                  final=(record.t >= cfg.tdvp.max_time - 1e-12))
    finally:
        writer.close()
    if last is not None:
        print(f"evolve-tdvp: {last.step} steps to t={last.t:.6g}")
    return EXIT_OK


def _cmd_evolve_global(cfg: RunConfig, args, outdir: Path) -> int:
    if cfg.method_kind != "global":
        raise ConfigError("evolve-global needs [method] kind = \"global\"")
    theta0, resume, observables, psi0_dense = _prepare(cfg, args)
    writer = RecordWriter(outdir / cfg.records_name)
    last = None
    try:
        for record in evolve_global(
            cfg.ansatz, theta0, cfg.hamiltonian, cfg.global_cfg, cfg.optimizer,
            cfg.sampler, observables=observables, master_seed=cfg.sampler.seed,
        ):
            last = record
            _emit(writer, cfg, record, outdir, psi0_dense,
                  final=(record.t >= cfg.global_cfg.max_time - 1e-12))
    finally:
        writer.close()
    if last is not None:
        print(f"evolve-global: {last.step} steps to t={last.t:.6g}")
    return EXIT_OK


def _cmd_benchmark_ed(cfg: RunConfig, args, outdir: Path) -> int:
    theta0, resume, observables, _ = _prepare(cfg, args)
    psi = nqs_to_dense(cfg.ansatz, theta0)
    psi0 = DenseState(psi.amplitudes.copy(), psi.n_sites)
    want_rate = wants_loschmidt(cfg.observable_specs)

    if cfg.method_kind == "tdvp":
        grid = cfg.tdvp.tau_max
        max_time = cfg.tdvp.max_time
    else:
        grid = cfg.global_cfg.tau
        max_time = cfg.global_cfg.max_time

    from .tdvp import EvolutionRecord

    writer = RecordWriter(outdir / cfg.records_name)
    try:
        t = 0.0
        step = 0
        while True:
            h_psi = apply_operator(cfg.hamiltonian, psi)
            norm = np.vdot(psi.amplitudes, psi.amplitudes).real
            e = complex(np.vdot(psi.amplitudes, h_psi.amplitudes) / norm)
            var = float(
                np.vdot(h_psi.amplitudes, h_psi.amplitudes).real / norm - abs(e) ** 2
            )
            obs = {
                name: ScalarEstimate(
                    complex(expectation_dense(op, psi)), 0.0, 0.0, float("inf")
                )
                for name, op in observables.items()
            }
            if want_rate:
                obs["loschmidt_rate"] = ScalarEstimate(
                    complex(loschmidt_rate(psi0, psi)), 0.0, 0.0, float("inf")
                )
            record = EvolutionRecord(
                step=step, t=t,
                energy=ScalarEstimate(e, 0.0, 0.0, float("inf")),
                variance=var, phase=None, observables=obs,
                sampler_diagnostics={"kind": "dense"},
                theta=None, tau=None if step == 0 else grid,
            )
            writer.write(record_to_json(record))
            if t >= max_time - 1e-12:
                break
            dt = min(grid, max_time - t)
            psi = exact_evolve(psi, cfg.hamiltonian, dt)
            t += dt
            step += 1
    finally:
        writer.close()
    print(f"benchmark-ed: {step} steps to t={t:.6g}")
    return EXIT_OK


def _cmd_sample_check(cfg: RunConfig, args, outdir: Path) -> int:
    theta0, _, _, _ = _prepare(cfg, args)
    report = {"sampler": cfg.sampler.kind, "n_sites": cfg.n_sites}
    if cfg.sampler.kind == "exact":
        samples = sample_exact(cfg.ansatz, theta0)
        report["n_samples"] = samples.n_samples
        report["weight_sum_error"] = abs(float(samples.weights.sum()) - 1.0)
    else:
        samples = cfg.sampler.draw(cfg.ansatz, theta0)
        report.update(
            {k: v for k, v in samples.diagnostics.items() if k != "kind"}
        )
        if cfg.n_sites <= 12:
            exact = sample_exact(cfg.ansatz, theta0)
            p = np.zeros(1 << cfg.n_sites)
            p[bits_matrix_to_ints(exact.bits)] = exact.weights
            freq = (
                np.bincount(
                    bits_matrix_to_ints(samples.bits), minlength=1 << cfg.n_sites
                )
                / samples.n_samples
            )
            tv = 0.5 * float(np.abs(freq - p).sum())
            bound = 2.0 * float(np.sqrt(p * (1 - p) / samples.n_samples).sum())
            tau = samples.diagnostics.get("autocorr_time", 1.0)
            report["tv_distance"] = tv
            report["tv_bound_4sigma"] = bound * np.sqrt(tau)
            report["tv_ok"] = tv < report["tv_bound_4sigma"]
    (outdir / "sample_check.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    print(json.dumps(report, indent=1, sort_keys=True))
    return EXIT_OK


def run(argv) -> int:
    """Entry point; returns the process exit code."""
    args = _parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "validate-config":
        print(f"{args.config}: valid (version {cfg.raw['config_version']})")
        return EXIT_OK

    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        write_metadata(
            outdir / "metadata.json", args.config, argv,
            extra={"version": __version__, "command": args.command},
        )
        if args.command == "evolve-tdvp":
            return _cmd_evolve_tdvp(cfg, args, outdir)
        if args.command == "evolve-global":
            return _cmd_evolve_global(cfg, args, outdir)
        if args.command == "benchmark-ed":
            return _cmd_benchmark_ed(cfg, args, outdir)
        if args.command == "sample-check":
            return _cmd_sample_check(cfg, args, outdir)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TauUnderflowError as exc:
        print(f"step-size underflow (possible DQPT): {exc}", file=sys.stderr)
        if exc.diagnostics:
            print(f"diagnostics: {exc.diagnostics}", file=sys.stderr)
        return EXIT_DQPT
    except (StuckChainError, RankZeroError, OptimizationDivergedError) as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception:
        traceback.print_exc()
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
