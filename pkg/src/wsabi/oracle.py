"""Brute-force integration against a Gaussian prior, for tests only.

Tensor-grid trapezoidal quadrature for D <= 2 and seeded Monte Carlo for any D.
Integrands take an (n, D) array and return n values.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .quadrature import GaussianPrior


class UnsupportedDimensionError(ValueError):
    pass


@dataclass(frozen=True)
class OracleConfig:
    grid_points_per_dim: int = 801
    box_sigmas: float = 8.0
    mc_samples: int = 200_000
    seed: int = 0
    quasi: bool = False

    def __post_init__(self):
        if self.grid_points_per_dim < 101:
            raise ValueError("grid_points_per_dim must be >= 101")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be positive")


def _axis(prior: GaussianPrior, i: int, cfg: OracleConfig):
    half = cfg.box_sigmas * prior.std[i]
    t = np.linspace(prior.mean[i] - half, prior.mean[i] + half, cfg.grid_points_per_dim)
    w = np.full(t.size, t[1] - t[0])
    w[0] = w[-1] = 0.5 * (t[1] - t[0])
    return t, w


def grid_integral(f, prior: GaussianPrior, cfg: OracleConfig = OracleConfig()) -> float:
    """Trapezoidal tensor-grid estimate of int f(x) pi(x) dx over nu +- box_sigmas sd."""
    if prior.dim > 2:
        raise UnsupportedDimensionError(f"grid quadrature supports D <= 2, got {prior.dim}")
    axes = [_axis(prior, i, cfg) for i in range(prior.dim)]
    mesh = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    wts = axes[0][1]
    for a in axes[1:]:
        wts = np.outer(wts, a[1]).ravel()
    vals = np.asarray(f(pts), dtype=float).reshape(-1)
    return float(np.sum(wts * vals * prior.pdf(pts)))


def grid_double_integral(f2, prior: GaussianPrior, cfg: OracleConfig = OracleConfig()) -> float:
    """int int f2(x, x') pi(x) pi(x') dx dx' for D = 1, as a 2-D grid.

    ``f2`` takes two (n, 1) arrays and returns n values.
    """
    if prior.dim != 1:
        raise UnsupportedDimensionError("double-integral grid supports D = 1 only")
    t, w = _axis(prior, 0, cfg)
    X, Y = np.meshgrid(t, t, indexing="ij")
    vals = np.asarray(f2(X.reshape(-1, 1), Y.reshape(-1, 1))).reshape(X.shape)
    p = prior.pdf(t[:, None])
    return float((w * p) @ vals @ (w * p))


def mc_integral(f, prior: GaussianPrior, cfg: OracleConfig = OracleConfig()):
    """Seeded Monte Carlo estimate and standard error of int f(x) pi(x) dx.

    With ``cfg.quasi`` a scrambled Sobol sequence mapped through the normal
    quantile replaces i.i.d. draws; the reported error is then a plain-MC
    style figure and only indicative.
    """
    rng = np.random.default_rng(cfg.seed)
    if cfg.quasi:
        from scipy.special import ndtri

        u = qmc.Sobol(prior.dim, scramble=True, seed=rng).random(cfg.mc_samples)
        xs = prior.mean + prior.std * ndtri(np.clip(u, 1e-16, 1 - 1e-16))
    else:
        xs = prior.sample(rng, cfg.mc_samples)
    vals = np.asarray(f(xs), dtype=float).reshape(-1)
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
    return mean, se


@dataclass(frozen=True)
class GridKernelMoments:
    """Prior integrals of SE-kernel products, computed on a grid."""
    u: np.ndarray       # int K(x, x_i) pi(x)
    W: np.ndarray       # int K(x_i, x) K(x, x_j) pi(x)
    T: np.ndarray       # int int K(x_i, x) K(x, x') K(x', x_j) pi(x) pi(x')
    KK: float           # int int K(x, x') pi(x) pi(x')
    KK2: float          # int int K(x, x')^2 pi(x) pi(x')


def grid_kernel_moments(params, xs, prior: GaussianPrior, cfg: OracleConfig = OracleConfig()) -> GridKernelMoments:
    """Brute-force kernel moments for any D.

    The SE kernel and a diagonal Gaussian prior both factorise over
    coordinates, so each moment is a product of one-dimensional (double)
    integrals, each done by trapezoidal quadrature on a 1-D grid.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    n = xs.shape[0]
    u, W, T = np.ones(n), np.ones((n, n)), np.ones((n, n))
    KK = KK2 = 1.0
    for d in range(prior.dim):
        t, w = _axis(prior, d, cfg)
        p = w * np.exp(-0.5 * (t - prior.mean[d]) ** 2 / prior.variances[d]) / np.sqrt(
            2 * np.pi * prior.variances[d])
        s2 = params.length_scales[d] ** 2
        E = np.exp(-0.5 * (t[None, :] - xs[:, d : d + 1]) ** 2 / s2)
        G = np.exp(-0.5 * (t[:, None] - t[None, :]) ** 2 / s2)
        Ep = E * p
        u *= Ep.sum(1)
        W *= Ep @ E.T
        T *= Ep @ G @ Ep.T
        KK *= p @ G @ p
        KK2 *= p @ (G * G) @ p
    lam2 = params.variance
    return GridKernelMoments(lam2 * u, lam2**2 * W, lam2**3 * T, float(lam2 * KK), float(lam2**2 * KK2))
