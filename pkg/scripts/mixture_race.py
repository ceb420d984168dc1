"""Run the 4-D mixture race and summarise error against samples.

Usage: python scripts/mixture_race.py [--config scripts/configs/mixture_race.toml] [--out DIR]
"""
import argparse
import csv
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from wsabi import cli

CHECKPOINTS = (50, 100, 200, 300, 400, 500)


def error_at(rows, n):
    """Relative error of the last record at or before n samples."""
    best = None
    for r in rows:
        if int(r["n_samples"]) <= n:
            best = float(r["rel_error"])
    return np.nan if best is None else best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(Path(__file__).parent / "configs" / "mixture_race.toml"))
    ap.add_argument("--out", default="runs/mixture_race")
    args = ap.parse_args()
    code = cli.main(["run", "--config", args.config, "--out", args.out])
    if code == 2:
        return code
    cli.main(["report", args.out])

    errs = defaultdict(lambda: defaultdict(list))
    for path in sorted(Path(args.out).glob("*_seed*.csv")):
        if path.name.endswith(".timing.csv"):
            continue
        method = path.stem.rsplit("_seed", 1)[0]
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        for n in CHECKPOINTS:
            errs[method][n].append(error_at(rows, n))
    print("median relative error by sample count")
    print(f"{'method':<10}" + "".join(f"{n:>10d}" for n in CHECKPOINTS))
    for method in sorted(errs):
        print(f"{method:<10}" + "".join(f"{np.nanmedian(errs[method][n]):>10.2e}" for n in CHECKPOINTS))
    return code


if __name__ == "__main__":
    sys.exit(main())
