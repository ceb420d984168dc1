"""Write the small synthetic regression dataset used by the regression-small benchmark."""
import argparse
import csv

import numpy as np


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="src/wsabi/data/regression_small.csv")
    ap.add_argument("--rows", type=int, default=20)
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    x = rng.uniform(-2, 2, size=(args.rows, 2))
    y = np.sin(1.5 * x[:, 0]) + 0.3 * x[:, 1] ** 2 + 0.1 * rng.standard_normal(args.rows)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "y"])
        for row, t in zip(x, y):
            w.writerow([f"{row[0]:.6f}", f"{row[1]:.6f}", f"{t:.6f}"])


if __name__ == "__main__":
    main()
