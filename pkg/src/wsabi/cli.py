"""Command-line front end.

    wsabi run --config race.toml [--out DIR] [--seed-override N] [--threads N]
    wsabi benchmarks list | describe ID | freeze-truth ID
    wsabi report DIR [--tol 0.01]

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import scipy

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .baselines import AisConfig, run_ais, run_bmc, run_smc
from .benchmarks import analytic_truth, build_benchmark, exhaustive_smc_log_z, load_registry, save_registry
from .runs import Budget, RunTrace
from .sampler import AcquisitionConfig, WsabiConfig, run_wsabi
from .traceio import TraceFormatError, find_traces, read_trace, rel_error, write_trace

logger = logging.getLogger("wsabi")

METHODS = ("wsabi-l", "wsabi-m", "smc", "ais", "bmc")
WSABI_METHODS = ("wsabi-l", "wsabi-m")
DEFAULT_FREEZE_SAMPLES = 10_000_000


class ConfigError(ValueError):
    """Bad or inconsistent run configuration (exit code 2)."""


def reference_mode() -> bool:
    return os.environ.get("WSABI_REFERENCE_MODE", "") == "1"


# ------------------------------------------------------------------ config

def _budget_value(spec, method: str, name: str):
    """Resolve a budget entry that is either a number or a per-method table.

    Table lookup tries the method id, then "wsabi" for either flavour, then "default".
    """
    if spec is None:
        return None
    if isinstance(spec, dict):
        for key in (method, "wsabi" if method in WSABI_METHODS else None, "default"):
            if key is not None and key in spec:
                return _budget_value(spec[key], method, name)
        return None
    if isinstance(spec, bool) or not isinstance(spec, (int, float)) or spec <= 0:
        raise ConfigError(f"budget.{name} for {method} must be a positive number, got {spec!r}")
    return spec


def method_budget(cfg: dict, method: str) -> Budget:
    b = cfg.get("budget", {})
    samples = _budget_value(b.get("max_samples"), method, "max_samples")
    seconds = _budget_value(b.get("max_seconds"), method, "max_seconds")
    if samples is None and seconds is None:
        raise ConfigError(f"no budget given for method {method!r}")
    if samples is not None and samples != int(samples):
        raise ConfigError(f"budget.max_samples for {method} must be an integer")
    return Budget(None if samples is None else int(samples), None if seconds is None else float(seconds))


def load_config(path, seed_override: int | None = None) -> dict:
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None
    if "benchmark" not in cfg:
        raise ConfigError("config lacks 'benchmark'")
    methods = cfg.get("methods")
    if not isinstance(methods, list) or not methods:
        raise ConfigError("config needs a non-empty 'methods' list")
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown method(s) {unknown}; choose from {list(METHODS)}")
    if len(set(methods)) != len(methods):
        raise ConfigError("methods must not repeat")
    if seed_override is not None:
        cfg["seeds"] = [seed_override]
    seeds = cfg.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("'seeds' must be a non-empty list of non-negative integers")
    cfg["seeds"] = seeds
    for m in methods:
        method_budget(cfg, m)
    return cfg


def config_hash(cfg: dict) -> str:
    keep = {k: v for k, v in cfg.items() if k != "output"}
    blob = json.dumps(keep, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _wsabi_config(cfg: dict) -> WsabiConfig:
    opts = dict(cfg.get("wsabi", {}))
    acq = AcquisitionConfig(**opts.pop("acquisition", {}))
    if "length_scale_bounds" in opts:
        opts["length_scale_bounds"] = tuple(opts["length_scale_bounds"])
    return WsabiConfig(acquisition=acq, **opts)


def _bmc_config(cfg: dict) -> WsabiConfig:
    opts = dict(cfg.get("bmc", {}))
    return WsabiConfig(**opts) if opts else WsabiConfig()


# ------------------------------------------------------------------ run

def run_one(bench, method: str, seed: int, budget: Budget, cfg: dict) -> RunTrace:
    lik = bench.make_likelihood()
    try:
        if method in WSABI_METHODS:
            return run_wsabi(lik, bench.prior, method, budget, _wsabi_config(cfg), seed=seed)
        if method == "smc":
            return run_smc(lik, bench.prior, budget, seed=seed)
        if method == "ais":
            ais = AisConfig(**dict(cfg.get("ais", {}), seed=seed))
            return run_ais(lik, bench.prior, ais, budget)
        return run_bmc(lik, bench.prior, budget, seed=seed, config=_bmc_config(cfg))
    except (ConfigError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError) or "unexpected keyword" in str(exc):
            raise ConfigError(str(exc)) from None
        trace = RunTrace(method, seed, log_shift=lik.log_shift)
        trace.error = f"{type(exc).__name__}: {exc}"
        trace.flag("runtime-error")
        return trace
    except Exception as exc:  # noqa: BLE001 - reported via exit code 1
        trace = RunTrace(method, seed, log_shift=lik.log_shift)
        trace.error = f"{type(exc).__name__}: {exc}"
        trace.flag("runtime-error")
        return trace


def _versions() -> dict:
    return {"wsabi": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _write_summary(out: Path, rows):
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "seed", "n_samples", "log_z_mean", "rel_error", "truth_log_z", "flags"])
        for r in rows:
            w.writerow(r)


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config, args.seed_override)
        registry = load_registry(args.registry)
        if cfg["benchmark"] not in registry:
            raise ConfigError(f"unknown benchmark {cfg['benchmark']!r}; known: {sorted(registry)}")
        bench = build_benchmark(cfg["benchmark"], registry, args.registry)
        for section, ctor in (("wsabi", lambda: _wsabi_config(cfg)), ("bmc", lambda: _bmc_config(cfg)),
                              ("ais", lambda: AisConfig(**cfg.get("ais", {})))):
            try:
                ctor()
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{section}]: {exc}") from None
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out or cfg.get("output", "wsabi_out"))
    out.mkdir(parents=True, exist_ok=True)
    methods, seeds = cfg["methods"], cfg["seeds"]
    truth = bench.truth_log_z
    meta_base = {"benchmark": bench.id, "config_hash": config_hash(cfg), "seeds": seeds,
                 "versions": _versions()}

    budgets = {m: method_budget(cfg, m) for m in methods}
    timed = any(b.max_seconds is not None for b in budgets.values())
    threads = 1 if reference_mode() or timed else max(1, args.threads)
    # WSABI runs first so that timed baselines can be matched to its elapsed time
    order = sorted(methods, key=lambda m: m not in WSABI_METHODS)
    jobs = [(m, s) for s in seeds for m in order]
    traces: dict[tuple[str, int], RunTrace] = {}
    matched: dict[tuple[str, int], float] = {}

    def job(m, s):
        budget = budgets[m]
        ref = next((w for w in methods if w in WSABI_METHODS), None)
        if m not in WSABI_METHODS and budget.max_seconds is not None and ref is not None:
            ref_trace = traces.get((ref, s))
            if ref_trace is not None and ref_trace.final is not None:
                allowance = ref_trace.final.wall_clock_s
                matched[(m, s)] = allowance
                budget = Budget(budget.max_samples, allowance)
        logger.info("running %s seed %d", m, s)
        return run_one(bench, m, s, budget, cfg)

    try:
        if threads == 1:
            for m, s in jobs:
                traces[(m, s)] = job(m, s)
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                futs = {(m, s): pool.submit(job, m, s) for m, s in jobs}
                for key, fut in futs.items():
                    traces[key] = fut.result()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    failed = False
    rows = []
    for m, s in jobs:
        tr = traces[(m, s)]
        b = budgets[m]
        meta = dict(meta_base, budget={"max_samples": b.max_samples, "max_seconds": b.max_seconds})
        if (m, s) in matched:
            meta["matched_wsabi_seconds"] = True
        write_trace(out, tr, meta, truth)
        if tr.error is not None or not tr.records:
            failed = True
            print(f"{m} seed {s}: FAILED: {tr.error or 'no estimates recorded'}", file=sys.stderr)
        final = tr.final
        lz = float(tr.log_z()[-1]) if final else float("nan")
        rows.append([m, s, final.n_samples if final else 0, repr(lz), repr(rel_error(lz, truth)),
                     "" if truth is None else repr(truth), ";".join(tr.flags)])
        print(f"{m:8s} seed {s}: n={rows[-1][2]} log Z={lz:.6f} rel error={rel_error(lz, truth):.3e}")
    _write_summary(out, rows)
    return 1 if failed else 0


# ------------------------------------------------------------------ benchmarks

def cmd_benchmarks(args) -> int:
    try:
        registry = load_registry(args.registry)
    except (OSError, ValueError) as exc:
        print(f"error: cannot read registry: {exc}", file=sys.stderr)
        return 2
    if args.action == "list":
        for key in sorted(registry):
            print(f"{key}\tdim={registry[key]['dim']}")
        return 0
    if not args.id:
        print(f"error: '{args.action}' needs a benchmark id", file=sys.stderr)
        return 2
    if args.id not in registry:
        print(f"error: unknown benchmark {args.id!r}; known: {sorted(registry)}", file=sys.stderr)
        return 2
    entry = registry[args.id]
    if args.action == "describe":
        print(f"id: {args.id}")
        for k in sorted(entry):
            print(f"{k}: {entry[k]}")
        return 0

    # freeze-truth
    bench = build_benchmark(args.id, registry, args.registry)
    exact = analytic_truth(bench)
    if exact is not None:
        print(f"{args.id} has an analytic truth (log Z = {exact:.12g}); nothing to freeze")
        return 0
    n, seed = args.samples, int(entry["seed"])
    try:
        log_z, rel_se = exhaustive_smc_log_z(bench, n, seed)
    except Exception as exc:  # noqa: BLE001
        print(f"error: exhaustive sampling failed: {exc}", file=sys.stderr)
        return 1
    entry["ground_truth_log_z"] = log_z
    entry["provenance"] = (f"exhaustive simple Monte Carlo from the prior: {n} samples, seed {seed}, "
                           f"relative standard error {rel_se:.3e}")
    save_registry(registry, args.registry)
    print(f"{args.id}: log Z = {log_z:.12g} (relative SE {rel_se:.2e}) written to registry")
    return 0


# ------------------------------------------------------------------ report

REPORT_COLUMNS = ["method", "seed", "n_samples", "wall_clock_s", "log_z_mean", "z_variance", "rel_error", "truth"]


def cmd_report(args) -> int:
    paths = find_traces(args.dir)
    if not paths:
        print(f"error: no traces found in {args.dir}", file=sys.stderr)
        return 2
    try:
        loaded = [read_trace(p) for p in paths]
    except (TraceFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    benches = {t.meta["benchmark"] for t in loaded}
    if len(benches) != 1:
        print(f"error: traces span several benchmarks {sorted(benches)}; report one at a time",
              file=sys.stderr)
        return 2
    bench_id = benches.pop()
    truth = None
    try:
        registry = load_registry(args.registry)
        if bench_id in registry:
            truth = registry[bench_id]["ground_truth_log_z"]
    except (OSError, ValueError):
        pass
    if truth is None:
        truth = loaded[0].meta.get("truth_log_z")

    out_csv = Path(args.out) if args.out else Path(args.dir) / "report.csv"
    per_method: dict[str, list] = {}
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for t in loaded:
            errs = [rel_error(lz, truth) for lz in t.log_z_mean]
            stored = t.rel_error
            for e_new, e_old in zip(errs, stored):
                if not (math.isnan(e_new) and math.isnan(e_old)) and abs(e_new - e_old) > 1e-12 * max(1.0, abs(e_new)):
                    logger.warning("%s seed %s: stored rel_error differs from registry truth",
                                   t.meta["method"], t.meta["seed"])
                    break
            for i in range(len(t.n_samples)):
                w.writerow([t.meta["method"], t.meta["seed"], int(t.n_samples[i]), repr(float(t.wall_clock_s[i])),
                            repr(float(t.log_z_mean[i])), repr(float(t.z_variance[i])), repr(errs[i]),
                            "" if truth is None else repr(float(truth))])
            hit = [t.wall_clock_s[i] for i, e in enumerate(errs) if e <= args.tol]
            per_method.setdefault(t.meta["method"], []).append(
                (errs[-1] if errs else float("nan"), hit[0] if hit else float("nan")))

    summary = Path(out_csv).with_name(Path(out_csv).stem + "_summary.csv")
    with open(summary, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "n_runs", "median_final_rel_error", f"median_time_to_{args.tol:g}_s", "runs_reaching_tol"])
        print(f"benchmark {bench_id}")
        print(f"{'method':8s} {'runs':>4s} {'median err':>11s} {'t to tol (s)':>12s}")
        for m in sorted(per_method):
            vals = np.array(per_method[m], dtype=float)
            med_err = float(np.median(vals[:, 0]))
            reached = vals[~np.isnan(vals[:, 1]), 1]
            # median over all runs, counting runs that never reach tolerance as infinitely slow
            times = np.where(np.isnan(vals[:, 1]), np.inf, vals[:, 1])
            med_t = float(np.median(times))
            w.writerow([m, len(vals), repr(med_err), repr(med_t), len(reached)])
            print(f"{m:8s} {len(vals):4d} {med_err:11.3e} {med_t:12.3f}")
    return 0


# ------------------------------------------------------------------ entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wsabi", description=__doc__.splitlines()[0])
    p.add_argument("--registry", default=None, help="benchmark registry JSON (default: packaged)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an estimator race from a TOML config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=None)
    r.add_argument("--seed-override", type=int, default=None)
    r.add_argument("--threads", type=int, default=1)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("benchmarks", help="inspect or update the benchmark registry")
    b.add_argument("action", choices=["list", "describe", "freeze-truth"])
    b.add_argument("id", nargs="?")
    b.add_argument("--samples", type=int, default=DEFAULT_FREEZE_SAMPLES)
    b.set_defaults(func=cmd_benchmarks)

    rep = sub.add_parser("report", help="tabulate traces in a directory")
    rep.add_argument("dir")
    rep.add_argument("--tol", type=float, default=1e-2)
    rep.add_argument("--out", default=None)
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
