"""JSON-lines record schema and atomic file output.

One JSON object per accepted step, stable key set, schema version field on
every line.  Floats serialize via repr so identical runs are byte-identical;
timestamps live only in the separate run-metadata file.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import time
from pathlib import Path

from .estimators import ScalarEstimate
from .tdvp import EvolutionRecord, SolverDiagnostics

RECORD_SCHEMA = "nqsdyn-records-1"

RECORD_KEYS = {
    "schema", "step", "t", "tau", "energy", "energy_variance", "residual",
    "phase", "observables", "sampler", "solver", "n_rejected", "optimization",
    "checkpoint",
}


def _number(value):
    if value is None:
        return None
    value = float(value)
    return None if math.isnan(value) else value


def _scalar(est: ScalarEstimate) -> dict:
    return {
        "re": _number(est.mean.real),
        "im": _number(est.mean.imag),
        "std_error": _number(est.std_error),
    }


def _solver(diag: SolverDiagnostics | None):
    if diag is None:
        return None
    return {
        "condition": _number(diag.condition),
        "rank": diag.truncated_rank,
        "n_filtered": diag.n_filtered,
        "dimension": diag.dimension,
    }


def record_to_json(record: EvolutionRecord, checkpoint: str | None = None) -> dict:
    phase = record.phase
    return {
        "schema": RECORD_SCHEMA,
        "step": record.step,
        "t": _number(record.t),
        "tau": _number(record.tau) if record.tau is not None else None,
        "energy": _scalar(record.energy),
        "energy_variance": _number(record.variance),
        "residual": _number(record.residual) if record.residual is not None else None,
        "phase": None if phase is None else {"re": _number(phase.real), "im": _number(phase.imag)},
        "observables": {name: _scalar(est) for name, est in record.observables.items()},
        "sampler": {k: _jsonable(v) for k, v in record.sampler_diagnostics.items()},
        "solver": _solver(record.solver),
        "n_rejected": record.n_rejected,
        "optimization": record.optimization,
        "checkpoint": checkpoint,
    }


def _jsonable(value):
    if isinstance(value, float):
        return _number(value)
    if hasattr(value, "item"):  # numpy scalar
        return _jsonable(value.item())
    return value


def validate_record(data: dict):
    """Check a serialized record against the documented schema."""
    if data.get("schema") != RECORD_SCHEMA:
        raise ValueError(f"record schema mismatch: {data.get('schema')!r}")
    missing = RECORD_KEYS - set(data)
    if missing:
        raise ValueError(f"record missing keys: {sorted(missing)}")
    extra = set(data) - RECORD_KEYS
    if extra:
        raise ValueError(f"record has undocumented keys: {sorted(extra)}")
    if not isinstance(data["step"], int) or data["step"] < 0:
        raise ValueError("step must be a nonnegative integer")
    if not isinstance(data["t"], (int, float)):
        raise ValueError("t must be a number")
    for name in ("energy",):
        entry = data[name]
        if not {"re", "im", "std_error"} <= set(entry):
            raise ValueError(f"{name} must carry re/im/std_error")
    for name, entry in data["observables"].items():
        if not {"re", "im", "std_error"} <= set(entry):
            raise ValueError(f"observable {name} must carry re/im/std_error")


class RecordWriter:
    """Appends JSON lines to a temp file; rename-into-place on close.

    Partial series survive a failing run: ``close`` is called from a
    ``finally`` block and still publishes whatever was written.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(
            dir=self.path.parent, prefix=self.path.name + ".", suffix=".tmp"
        )
        self._file = os.fdopen(fd, "w")
        self._tmp = tmp
        self.n_written = 0

    def write(self, data: dict):
        self._file.write(json.dumps(data, sort_keys=True) + "\n")
        self._file.flush()
        self.n_written += 1

    def close(self):
        if self._file is not None:
            self._file.close()
            os.replace(self._tmp, self.path)
            self._file = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def write_metadata(path, config_path, argv, extra=None):
    """Run metadata (timestamps and provenance live here, never in records)."""
    payload = {
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config_path": str(config_path),
        "argv": list(argv),
    }
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))


def read_records(path) -> list[dict]:
    """Load a JSON-lines record file."""
    out = []
    with open(path) as handle:
        for line in handle:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
