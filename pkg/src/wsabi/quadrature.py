"""Closed-form Gaussian integrals of SE kernels and the evidence estimates built from them.

All integrals are against a Gaussian prior with diagonal covariance.  Because
the SE-ARD kernel and the prior both factorise over dimensions, each integral
is a product of one-dimensional Gaussian integrals.  For a kernel with output
scale ``lam`` and length-scales ``s`` against ``N(nu, diag(v))``:

    u(a)    = int K(x, a) pi(x) dx
            = lam^2 prod sqrt(s^2 / (s^2 + v)) exp(-(a - nu)^2 / (2 (s^2 + v)))
    W(a, b) = int K(x, a) K(x, b) pi(x) dx
            = lam^4 prod sqrt(s^2 / (s^2 + 2 v)) exp(-(a - b)^2 / (4 s^2))
                         exp(-((a + b) / 2 - nu)^2 / (2 (s^2 / 2 + v)))
    KK      = int int K(x, x') pi(x) pi(x') dx dx'  = lam^2 prod sqrt(s^2 / (s^2 + 2 v))
    T(a, b) = int int K(x, a) K(x, x') K(x', b) pi(x) pi(x') dx dx'

``T`` is a two-dimensional Gaussian integral per input dimension; with
``q = 1/s^2``, ``p = 1/v`` and offsets ``a' = a - nu``, ``b' = b - nu`` the
joint precision of (x, x') is ``[[2q + p, -q], [-q, 2q + p]]`` and

    T(a, b) = lam^6 prod (v det)^(-1/2)
              exp(q^2 ((2q + p)(a'^2 + b'^2) + 2 q a' b') / (2 det) - q (a'^2 + b'^2) / 2)

where ``det = (2q + p)^2 - q^2``.  ``K(x, x')^2`` is again an SE kernel with
output scale ``lam^2`` and length-scales ``s / sqrt(2)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .gp import Dataset, GpPosterior, KernelParams, fit_posterior
from .warp import Flavour, WarpedModel

logger = logging.getLogger(__name__)

NEGATIVE_VARIANCE_WARN = 1e-8


@dataclass(frozen=True)
class GaussianPrior:
    mean: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if mean.ndim != 1 or mean.shape != var.shape:
            raise ValueError("prior mean and variances must be vectors of equal length")
        if not np.all(var > 0) or not np.all(np.isfinite(var)) or not np.all(np.isfinite(mean)):
            raise ValueError("prior variances must be positive and finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variances", var)

    @classmethod
    def isotropic(cls, dim: int, variance: float = 1.0, mean: float = 0.0) -> "GaussianPrior":
        return cls(np.full(dim, float(mean)), np.full(dim, float(variance)))

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variances)

    def logpdf(self, xs) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        r2 = ((xs - self.mean) ** 2 / self.variances).sum(1)
        return -0.5 * (r2 + np.log(2 * np.pi * self.variances).sum())

    def pdf(self, xs) -> np.ndarray:
        return np.exp(self.logpdf(xs))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal((n, self.dim))


@dataclass(frozen=True)
class EvidenceEstimate:
    mean: float
    variance: float
    n_samples: int
    wall_clock_s: float = 0.0
    method: str = ""

    def __post_init__(self):
        if not self.variance >= 0 or self.n_samples < 0:
            raise ValueError("variance and n_samples must be non-negative")


def _prep(params: KernelParams, prior: GaussianPrior, *points):
    if params.dim != prior.dim:
        raise ValueError(f"kernel dimension {params.dim} != prior dimension {prior.dim}")
    out = []
    for p in points:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        if p.shape[1] != prior.dim:
            raise ValueError(f"points have dimension {p.shape[1]}, prior has {prior.dim}")
        out.append(p - prior.mean)
    return out


def kernel_mean_vector(params: KernelParams, xs, prior: GaussianPrior) -> np.ndarray:
    """u(x_i) for each row of ``xs``."""
    (a,) = _prep(params, prior, xs)
    s2, v = params.length_scales**2, prior.variances
    log_u = 0.5 * np.log(s2 / (s2 + v)).sum() - 0.5 * (a * a / (s2 + v)).sum(1)
    return params.variance * np.exp(log_u)


def pair_matrix(params: KernelParams, xs, ys, prior: GaussianPrior) -> np.ndarray:
    """W(x_i, y_j) as an (n, m) matrix."""
    a, b = _prep(params, prior, xs, ys)
    s2, v = params.length_scales**2, prior.variances
    diff = a[:, None, :] - b[None, :, :]
    mid = 0.5 * (a[:, None, :] + b[None, :, :])
    expo = (diff * diff / (4 * s2)).sum(-1) + (mid * mid / (2 * (0.5 * s2 + v))).sum(-1)
    const = 0.5 * np.log(s2 / (s2 + 2 * v)).sum()
    return params.variance**2 * np.exp(const - expo)


def cross_pair_matrix(params: KernelParams, xs, ys, prior: GaussianPrior) -> np.ndarray:
    """T(x_i, y_j) as an (n, m) matrix."""
    a, b = _prep(params, prior, xs, ys)
    q = 1.0 / params.length_scales**2
    p = 1.0 / prior.variances
    det = (2 * q + p) ** 2 - q * q
    A = a[:, None, :]
    B = b[None, :, :]
    sq = A * A + B * B
    expo = q * q * ((2 * q + p) * sq + 2 * q * A * B) / (2 * det) - 0.5 * q * sq
    const = -0.5 * np.log(prior.variances**2 * det).sum()
    return params.variance**3 * np.exp(const + expo.sum(-1))


def kernel_prior_integral(params: KernelParams, a, prior: GaussianPrior) -> float:
    return float(kernel_mean_vector(params, np.reshape(a, (1, -1)), prior)[0])


def kernel_pair_prior_integral(params: KernelParams, a, b, prior: GaussianPrior) -> float:
    return float(pair_matrix(params, np.reshape(a, (1, -1)), np.reshape(b, (1, -1)), prior)[0, 0])


def kernel_double_prior_integral(params: KernelParams, prior: GaussianPrior) -> float:
    if params.dim != prior.dim:
        raise ValueError(f"kernel dimension {params.dim} != prior dimension {prior.dim}")
    s2 = params.length_scales**2
    return float(params.variance * np.exp(0.5 * np.log(s2 / (s2 + 2 * prior.variances)).sum()))


def cross_pair_double_integral(params: KernelParams, a, b, prior: GaussianPrior) -> float:
    return float(cross_pair_matrix(params, np.reshape(a, (1, -1)), np.reshape(b, (1, -1)), prior)[0, 0])


def squared_kernel_params(params: KernelParams) -> KernelParams:
    """Parameters of the SE kernel equal to K(x, x')^2."""
    return KernelParams(params.variance, params.length_scales / np.sqrt(2.0))


@dataclass(frozen=True)
class SquaredKernelIntegrals:
    prior_integral: float
    pair_integral: float
    double_integral: float


def squared_kernel_integrals(params: KernelParams, a, b, prior: GaussianPrior) -> SquaredKernelIntegrals:
    """The u, W and KK integrals above for the kernel K^2 (u at ``a``, W at ``(a, b)``)."""
    sq = squared_kernel_params(params)
    return SquaredKernelIntegrals(
        kernel_prior_integral(sq, a, prior),
        kernel_pair_prior_integral(sq, a, b, prior),
        kernel_double_prior_integral(sq, prior),
    )


def _clamp(raw: float, scale: float, label: str) -> float:
    if not np.isfinite(raw):
        raise FloatingPointError(f"{label} variance is not finite")
    if raw < 0:
        if raw < -NEGATIVE_VARIANCE_WARN * max(scale, np.finfo(float).tiny):
            logger.warning("%s variance %.3g clamped to zero", label, raw)
        return 0.0
    return float(raw)


def _inv_quad(gp: GpPosterior, v: np.ndarray) -> float:
    w = solve_triangular(gp.chol, v, lower=True)
    return float(w @ w)


def _wsabi_terms(model: WarpedModel, prior: GaussianPrior):
    gp = model.gp
    X, z = gp.x, gp.weights
    W = pair_matrix(gp.params, X, X, prior)
    T = cross_pair_matrix(gp.params, X, X, prior)
    Wz = W @ z
    mean_sq = float(z @ Wz)
    var_lin = float(z @ T @ z) - _inv_quad(gp, Wz)
    return W, T, mean_sq, var_lin


def evidence_wsabi_l(model: WarpedModel, prior: GaussianPrior, wall_clock_s: float = 0.0) -> EvidenceEstimate:
    if model.flavour is not Flavour.LINEARISED:
        raise ValueError("model is not linearised")
    _, _, mean_sq, var_lin = _wsabi_terms(model, prior)
    mean = model.alpha + 0.5 * mean_sq
    var = _clamp(var_lin, mean_sq**2, "WSABI-L")
    return EvidenceEstimate(float(mean), var, model.gp.data.count, wall_clock_s, "wsabi-l")


def integrated_posterior_variance(gp: GpPosterior, prior: GaussianPrior, W=None) -> float:
    """int C(x, x) pi(x) dx = lambda^2 - tr(K^-1 W)."""
    if W is None:
        W = pair_matrix(gp.params, gp.x, gp.x, prior)
    return gp.params.variance - float(np.trace(gp.solve(W)))


def evidence_wsabi_m(model: WarpedModel, prior: GaussianPrior, wall_clock_s: float = 0.0) -> EvidenceEstimate:
    if model.flavour is not Flavour.MOMENT_MATCHED:
        raise ValueError("model is not moment-matched")
    gp = model.gp
    W, T, mean_sq, var_lin = _wsabi_terms(model, prior)
    AW = gp.solve(W)
    mean = model.alpha + 0.5 * (mean_sq + gp.params.variance - np.trace(AW))
    # int int C(x, x')^2 = KK[K^2] - 2 tr(K^-1 T) + tr(K^-1 W K^-1 W)
    kk2 = kernel_double_prior_integral(squared_kernel_params(gp.params), prior)
    c_sq = kk2 - 2.0 * np.trace(gp.solve(T)) + np.sum(AW * AW.T)
    raw = 0.5 * c_sq + var_lin
    var = _clamp(raw, max(mean_sq, gp.params.variance) ** 2, "WSABI-M")
    return EvidenceEstimate(float(mean), var, gp.data.count, wall_clock_s, "wsabi-m")


def evidence_bmc(data: Dataset | None, params: KernelParams, prior: GaussianPrior,
                 base_jitter: float | None = None, wall_clock_s: float = 0.0) -> EvidenceEstimate:
    """Bayes-Hermite quadrature with the GP placed directly on the likelihood."""
    kk = kernel_double_prior_integral(params, prior)
    if data is None or data.count == 0:
        return EvidenceEstimate(0.0, kk, 0, wall_clock_s, "bmc")
    gp = fit_posterior(data, params, base_jitter)
    return evidence_bmc_from_gp(gp, prior, wall_clock_s)


def evidence_bmc_from_gp(gp: GpPosterior, prior: GaussianPrior, wall_clock_s: float = 0.0) -> EvidenceEstimate:
    u = kernel_mean_vector(gp.params, gp.x, prior)
    mean = float(u @ gp.weights)
    raw = kernel_double_prior_integral(gp.params, prior) - _inv_quad(gp, u)
    var = _clamp(raw, gp.params.variance**2, "BMC")
    return EvidenceEstimate(mean, var, gp.data.count, wall_clock_s, "bmc")


def evidence(model: WarpedModel, prior: GaussianPrior, wall_clock_s: float = 0.0) -> EvidenceEstimate:
    if model.flavour is Flavour.LINEARISED:
        return evidence_wsabi_l(model, prior, wall_clock_s)
    return evidence_wsabi_m(model, prior, wall_clock_s)
