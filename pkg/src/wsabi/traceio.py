"""On-disk trace format.

Each run writes three files sharing a stem ``<method>_seed<seed>``:

* ``<stem>.csv``: n_samples, z_mean, z_variance, log_z_mean, rel_error
* ``<stem>.timing.csv``: n_samples, wall_clock_s
* ``<stem>.json``: run metadata (benchmark, method, seed, config hash, flags, ...)

Timings live in their own file so that the estimate trace and its metadata
are byte-for-byte reproducible.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .runs import RunTrace

TRACE_COLUMNS = ["n_samples", "z_mean", "z_variance", "log_z_mean", "rel_error"]
TIMING_COLUMNS = ["n_samples", "wall_clock_s"]


class TraceFormatError(ValueError):
    pass


def _fmt(v: float) -> str:
    return repr(float(v))


def rel_error(log_z: float, truth_log_z: float | None) -> float:
    """|Z_est - Z_true| / Z_true, evaluated in log space."""
    if truth_log_z is None or not math.isfinite(log_z):
        return float("nan")
    return abs(math.expm1(log_z - truth_log_z))


def stem(method: str, seed: int) -> str:
    return f"{method}_seed{seed}"


def write_trace(out_dir, trace: RunTrace, meta: dict, truth_log_z: float | None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    s = stem(trace.method, trace.seed)
    log_z = trace.log_z()
    with open(out / f"{s}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r, lz in zip(trace.records, log_z):
            w.writerow([r.n_samples, _fmt(r.mean), _fmt(r.variance), _fmt(lz), _fmt(rel_error(lz, truth_log_z))])
    with open(out / f"{s}.timing.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMING_COLUMNS)
        for r in trace.records:
            w.writerow([r.n_samples, _fmt(r.wall_clock_s)])
    meta = dict(meta, method=trace.method, seed=trace.seed, flags=list(trace.flags), error=trace.error,
                log_shift=trace.log_shift, truth_log_z=truth_log_z, n_records=len(trace.records))
    with open(out / f"{s}.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out / f"{s}.csv"


@dataclass
class LoadedTrace:
    meta: dict
    n_samples: np.ndarray
    z_mean: np.ndarray
    z_variance: np.ndarray
    log_z_mean: np.ndarray
    rel_error: np.ndarray
    wall_clock_s: np.ndarray


def _read_rows(path: Path, columns):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != columns:
        raise TraceFormatError(f"{path}: expected header {columns}")
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(columns):
            raise TraceFormatError(f"{path}:{i}: expected {len(columns)} fields, got {len(row)}")
        try:
            out.append([float(c) for c in row])
        except ValueError:
            raise TraceFormatError(f"{path}:{i}: non-numeric field in {row!r}") from None
    return np.array(out, dtype=float).reshape(-1, len(columns))


def read_trace(json_path) -> LoadedTrace:
    """Load and validate one run; malformed rows raise rather than being skipped."""
    json_path = Path(json_path)
    base = json_path.with_suffix("")
    try:
        meta = json.loads(json_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"{json_path}: {exc}") from None
    for key in ("benchmark", "method", "seed"):
        if key not in meta:
            raise TraceFormatError(f"{json_path}: missing {key!r}")
    est = _read_rows(base.with_suffix(".csv"), TRACE_COLUMNS)
    tim = _read_rows(base.with_suffix(".timing.csv"), TIMING_COLUMNS)
    n = est[:, 0]
    if np.any(n != np.round(n)) or np.any(np.diff(n) <= 0):
        raise TraceFormatError(f"{base}.csv: n_samples must be increasing integers")
    if tim.shape[0] != est.shape[0] or np.any(tim[:, 0] != n):
        raise TraceFormatError(f"{base}.timing.csv: rows do not match the estimate trace")
    if np.any(np.diff(tim[:, 1]) < 0):
        raise TraceFormatError(f"{base}.timing.csv: wall clock must be non-decreasing")
    return LoadedTrace(meta, n.astype(int), est[:, 1], est[:, 2], est[:, 3], est[:, 4], tim[:, 1])


def find_traces(directory) -> list[Path]:
    return sorted(p for p in Path(directory).glob("*_seed*.json"))
