"""Small box-constrained CMA-ES used to maximise acquisition surfaces."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateAcquisitionError(RuntimeError):
    pass


@dataclass
class CmaResult:
    best_x: np.ndarray
    best_f: float
    xs: np.ndarray
    fs: np.ndarray
    generations: int


def default_population(dim: int) -> int:
    return 4 + int(3 * np.log(dim))


def cma_es_maximize(f_batch, lower, upper, rng: np.random.Generator, population: int | None = None,
                    generations: int = 30, x0=None, sigma0: float | None = None,
                    tol_sigma: float = 1e-10) -> CmaResult:
    """Maximise ``f_batch`` over the box [lower, upper].

    ``f_batch`` maps an (n, D) array to n values.  Samples falling outside the
    box are clipped onto it before evaluation, and the clipped points are the
    ones used in the update.  Non-finite values rank last.  ``sigma0`` is in
    units of the box width (default 0.3).
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    dim = lower.size
    width = upper - lower
    lam = population or default_population(dim)
    mu = lam // 2
    w = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w /= w.sum()
    mueff = 1.0 / np.sum(w**2)

    cc = (4 + mueff / dim) / (dim + 4 + 2 * mueff / dim)
    cs = (mueff + 2) / (dim + mueff + 5)
    c1 = 2 / ((dim + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((dim + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, np.sqrt((mueff - 1) / (dim + 1)) - 1) + cs
    chi_n = np.sqrt(dim) * (1 - 1 / (4 * dim) + 1 / (21 * dim**2))

    # work in coordinates where the box is the unit cube
    m = (np.asarray(x0, dtype=float) - lower) / width if x0 is not None else np.full(dim, 0.5)
    sigma = 0.3 if sigma0 is None else float(sigma0)
    C = np.eye(dim)
    pc = np.zeros(dim)
    ps = np.zeros(dim)
    B = np.eye(dim)
    D = np.ones(dim)

    all_x, all_f = [], []
    gen = 0
    for gen in range(1, generations + 1):
        zs = rng.standard_normal((lam, dim))
        ys = zs @ (B * D).T
        us = np.clip(m + sigma * ys, 0.0, 1.0)
        xs = lower + us * width
        fs = np.asarray(f_batch(xs), dtype=float).reshape(-1)
        fs = np.where(np.isfinite(fs), fs, -np.inf)
        all_x.append(xs)
        all_f.append(fs)

        order = np.argsort(-fs, kind="stable")
        sel = us[order[:mu]]
        y_sel = (sel - m) / sigma
        m_old = m
        m = w @ sel
        y_w = (m - m_old) / sigma

        inv_sqrt_C = B @ np.diag(1 / D) @ B.T
        ps = (1 - cs) * ps + np.sqrt(cs * (2 - cs) * mueff) * inv_sqrt_C @ y_w
        hsig = np.linalg.norm(ps) / np.sqrt(1 - (1 - cs) ** (2 * gen)) / chi_n < 1.4 + 2 / (dim + 1)
        pc = (1 - cc) * pc + hsig * np.sqrt(cc * (2 - cc) * mueff) * y_w
        rank_mu = (w[:, None] * y_sel).T @ y_sel
        C = ((1 - c1 - cmu) * C + c1 * (np.outer(pc, pc) + (1 - hsig) * cc * (2 - cc) * C)
             + cmu * rank_mu)
        sigma *= np.exp((cs / damps) * (np.linalg.norm(ps) / chi_n - 1))
        sigma = min(sigma, 1.0)

        C = np.triu(C) + np.triu(C, 1).T
        evals, B = np.linalg.eigh(C)
        D = np.sqrt(np.maximum(evals, 1e-20))
        if sigma * D.max() < tol_sigma:
            break

    xs = np.concatenate(all_x)
    fs = np.concatenate(all_f)
    if not np.any(np.isfinite(fs)):
        raise DegenerateAcquisitionError("acquisition was non-finite at every probe")
    i = int(np.argmax(fs))
    return CmaResult(xs[i].copy(), float(fs[i]), xs, fs, gen)
