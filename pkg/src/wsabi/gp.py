"""Squared-exponential ARD Gaussian process with a zero prior mean.

The GP here models whatever values it is handed; the warped models and the
Bayesian Monte Carlo baseline both build on it.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

logger = logging.getLogger(__name__)

DUPLICATE_TOL = 1e-12
MIN_REL_JITTER = 1e-10
MAX_REL_JITTER = 1e-4


class IllConditionedKernelError(np.linalg.LinAlgError):
    """Cholesky failed even at the largest jitter allowed."""

    def __init__(self, message: str, jitter: float):
        super().__init__(message)
        self.jitter = jitter


@dataclass(frozen=True)
class KernelParams:
    output_scale: float
    length_scales: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "output_scale", float(self.output_scale))
        if ls.ndim != 1 or ls.size < 1:
            raise ValueError("length_scales must be a non-empty vector")
        if not self.output_scale > 0 or not np.all(ls > 0):
            raise ValueError("output scale and length-scales must be positive")
        if not np.isfinite(self.output_scale) or not np.all(np.isfinite(ls)):
            raise ValueError("kernel parameters must be finite")

    @property
    def dim(self) -> int:
        return self.length_scales.size

    @property
    def variance(self) -> float:
        return self.output_scale**2

    def to_log(self) -> np.ndarray:
        return np.log(np.concatenate([[self.output_scale], self.length_scales]))

    @classmethod
    def from_log(cls, theta) -> "KernelParams":
        theta = np.exp(np.asarray(theta, dtype=float))
        return cls(theta[0], theta[1:])


@dataclass(frozen=True)
class Dataset:
    locations: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.locations, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.values, dtype=float).reshape(-1)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("need at least one location, as an N x D array")
        if x.shape[0] != y.size:
            raise ValueError(f"{x.shape[0]} locations but {y.size} values")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("locations and values must be finite")
        if x.shape[0] > 1:
            diff = np.abs(x[:, None, :] - x[None, :, :]).max(axis=-1)
            np.fill_diagonal(diff, np.inf)
            if np.any(diff <= DUPLICATE_TOL):
                i, j = np.argwhere(diff <= DUPLICATE_TOL)[0]
                raise ValueError(f"duplicate locations at rows {i} and {j}")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "locations", x)
        object.__setattr__(self, "values", y)

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    @property
    def count(self) -> int:
        return self.locations.shape[0]


def _check_dim(params: KernelParams, x: np.ndarray):
    if x.shape[-1] != params.dim:
        raise ValueError(f"input dimension {x.shape[-1]} does not match kernel dimension {params.dim}")


def sq_dist(params: KernelParams, x, y) -> np.ndarray:
    """Scaled squared distances between rows of ``x`` (n, D) and ``y`` (m, D)."""
    x = np.atleast_2d(np.asarray(x, dtype=float)) / params.length_scales
    y = np.atleast_2d(np.asarray(y, dtype=float)) / params.length_scales
    d2 = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * x @ y.T
    return np.maximum(d2, 0.0)


def kernel_matrix(params: KernelParams, x, y) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    _check_dim(params, x)
    _check_dim(params, y)
    return params.variance * np.exp(-0.5 * sq_dist(params, x, y))


def kernel_eval(params: KernelParams, x, y) -> float:
    """lambda^2 exp(-1/2 sum_i (x_i - y_i)^2 / sigma_i^2)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.size != params.dim or y.size != params.dim:
        raise ValueError(f"expected {params.dim}-vectors, got sizes {x.size} and {y.size}")
    # direct differences so that the result is exactly symmetric
    r = (x - y) / params.length_scales
    return params.variance * float(np.exp(-0.5 * np.dot(r, r)))


def _jittered_cholesky(K: np.ndarray, variance: float, base_jitter: float):
    max_jitter = MAX_REL_JITTER * variance
    jitter = float(base_jitter)
    eye = np.eye(K.shape[0])
    while True:
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            pass
        if jitter >= max_jitter:
            raise IllConditionedKernelError(
                f"Cholesky failed with jitter {jitter:.3g}", jitter)
        jitter = min(max(10.0 * jitter, MIN_REL_JITTER * variance), max_jitter)


@dataclass(frozen=True)
class GpPosterior:
    data: Dataset
    params: KernelParams
    chol: np.ndarray
    weights: np.ndarray
    jitter: float

    @property
    def x(self) -> np.ndarray:
        return self.data.locations

    def cross_kernel(self, xs) -> np.ndarray:
        """K(xs, x_d) with shape (m, N)."""
        return kernel_matrix(self.params, xs, self.data.locations)

    def solve(self, b: np.ndarray) -> np.ndarray:
        """(K + jitter I)^{-1} b."""
        return cho_solve((self.chol, True), b)

    def gram_inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.data.count))

    def mean(self, xs) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        return self.cross_kernel(xs) @ self.weights

    def raw_var(self, xs) -> np.ndarray:
        """Unclamped posterior variance at each row of ``xs``."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        v = solve_triangular(self.chol, self.cross_kernel(xs).T, lower=True)
        return self.params.variance - (v * v).sum(0)

    def var(self, xs) -> np.ndarray:
        return np.clip(self.raw_var(xs), 0.0, self.params.variance + self.jitter)

    def mean_and_var(self, xs):
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        k = self.cross_kernel(xs)
        v = solve_triangular(self.chol, k.T, lower=True)
        var = np.clip(self.params.variance - (v * v).sum(0), 0.0, self.params.variance + self.jitter)
        return k @ self.weights, var

    def cov(self, xs, ys) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        vx = solve_triangular(self.chol, self.cross_kernel(xs).T, lower=True)
        vy = solve_triangular(self.chol, self.cross_kernel(ys).T, lower=True)
        return kernel_matrix(self.params, xs, ys) - vx.T @ vy


def fit_posterior(data: Dataset, params: KernelParams, base_jitter: float | None = None) -> GpPosterior:
    """Condition the GP on ``data``.

    Jitter starts at ``base_jitter`` (default ``1e-10 * lambda^2``) and is
    multiplied by ten on each failed factorisation, up to ``1e-4 * lambda^2``.
    """
    if base_jitter is None:
        base_jitter = MIN_REL_JITTER * params.variance
    if base_jitter < 0:
        raise ValueError("base_jitter must be non-negative")
    _check_dim(params, data.locations)
    K = kernel_matrix(params, data.locations, data.locations)
    L, jitter = _jittered_cholesky(K, params.variance, base_jitter)
    z = cho_solve((L, True), data.values)
    for a in (L, z):
        a.setflags(write=False)
    return GpPosterior(data, params, L, z, jitter)


def posterior_mean(gp: GpPosterior, x) -> float:
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return float(gp.mean(x)[0])


def posterior_cov(gp: GpPosterior, x, y) -> float:
    x = np.asarray(x, dtype=float).reshape(1, -1)
    y = np.asarray(y, dtype=float).reshape(1, -1)
    c = float(gp.cov(x, y)[0, 0])
    if np.array_equal(x, y):
        c = min(max(c, 0.0), gp.params.variance + gp.jitter)
    return c


def log_marginal_likelihood(data: Dataset, params: KernelParams, jitter: float | None = None,
                            noise_variance: float = 0.0) -> float:
    """-1/2 v^T (K + jI)^{-1} v - 1/2 log det(K + jI) - N/2 log 2 pi.

    ``noise_variance`` is added to the diagonal on top of the jitter, for
    regression models with observation noise.
    """
    value, _ = _lml_and_grad(data, params, jitter, noise_variance, with_grad=False)
    return value


def _lml_and_grad(data: Dataset, params: KernelParams, jitter, noise_variance=0.0, with_grad=True):
    if jitter is None:
        jitter = MIN_REL_JITTER * params.variance
    x, y = data.locations, data.values
    n = data.count
    R = np.exp(-0.5 * sq_dist(params, x, x))
    K = params.variance * R
    L, _ = _jittered_cholesky(K + noise_variance * np.eye(n), params.variance, jitter)
    a = cho_solve((L, True), y)
    value = -0.5 * y @ a - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2 * np.pi)
    if not with_grad:
        return float(value), None
    # d/d log(theta) of the LML: 1/2 tr((a a^T - K^-1) dK)
    Q = np.outer(a, a) - cho_solve((L, True), np.eye(n))
    grad = np.empty(params.dim + 1)
    grad[0] = 0.5 * np.sum(Q * (2.0 * K))
    for i, ls in enumerate(params.length_scales):
        d2 = (x[:, i][:, None] - x[:, i][None, :]) ** 2 / ls**2
        grad[i + 1] = 0.5 * np.sum(Q * (K * d2))
    return float(value), grad


def lml_gradient(data: Dataset, params: KernelParams, jitter: float | None = None) -> np.ndarray:
    """Gradient of the log marginal likelihood w.r.t. (log lambda, log sigma_1..D).

    The jitter is held fixed (it is not differentiated through).
    """
    if jitter is None:
        jitter = MIN_REL_JITTER * params.variance
    return _lml_and_grad(data, params, jitter)[1]


@dataclass
class HyperBounds:
    """Box bounds on (log lambda, log sigma_1..D)."""

    log_output_scale: tuple[float, float]
    log_length_scales: np.ndarray = field(repr=False)

    def as_list(self):
        return [self.log_output_scale] + [tuple(b) for b in self.log_length_scales]

    def clip(self, theta):
        lo, hi = np.array(self.as_list()).T
        return np.clip(theta, lo, hi)


def default_bounds(data: Dataset, input_scale=None) -> HyperBounds:
    """Bounds scaled to the data: lambda within [1e-3, 1e3] x the rms value,
    sigma within [1e-2, 20] x the input scale (per-dimension spread of the
    locations unless given)."""
    rms = max(float(np.sqrt(np.mean(data.values**2))), 1e-8)
    if input_scale is None:
        input_scale = data.locations.std(0) if data.count > 1 else np.ones(data.dim)
        input_scale = np.where(input_scale > 0, input_scale, 1.0)
    s = np.broadcast_to(np.asarray(input_scale, dtype=float), (data.dim,))
    ls = np.stack([np.log(1e-2 * s), np.log(20.0 * s)], axis=1)
    return HyperBounds((np.log(1e-3 * rms), np.log(1e3 * rms)), ls)


@dataclass
class FitResult:
    params: KernelParams
    log_marginal: float
    failed: bool = False


def optimize_hyperparams(data: Dataset, init: KernelParams, restarts: int = 3,
                         bounds: HyperBounds | None = None, seed: int = 0,
                         maxiter: int = 200) -> FitResult:
    """ML-II: multi-start L-BFGS-B on the log marginal likelihood in log-parameter space.

    The first start is ``init`` itself; the rest are drawn uniformly inside the
    bounds.  The returned parameters are never worse than ``init``.  If every
    start fails numerically ``init`` comes back with ``failed=True``.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if bounds is None:
        bounds = default_bounds(data)
    rng = np.random.default_rng(seed)
    box = np.array(bounds.as_list())

    def neg(theta):
        try:
            p = KernelParams.from_log(theta)
            v, g = _lml_and_grad(data, p, MIN_REL_JITTER * p.variance)
        except (np.linalg.LinAlgError, ValueError, FloatingPointError):
            return 1e25, np.zeros_like(theta)
        if not np.isfinite(v):
            return 1e25, np.zeros_like(theta)
        return -v, -g

    try:
        best_val = log_marginal_likelihood(data, init)
    except np.linalg.LinAlgError:
        best_val = -np.inf
    best = init
    any_ok = np.isfinite(best_val)
    starts = [bounds.clip(init.to_log())]
    starts += [rng.uniform(box[:, 0], box[:, 1]) for _ in range(restarts - 1)]
    for theta0 in starts:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(neg, theta0, jac=True, method="L-BFGS-B", bounds=box,
                           options={"maxiter": maxiter})
        if res.fun >= 1e25 or not np.isfinite(res.fun):
            continue
        any_ok = True
        if -res.fun > best_val:
            best_val = float(-res.fun)
            best = KernelParams.from_log(res.x)
    if not any_ok:
        logger.warning("all %d hyperparameter starts failed; keeping init", restarts)
        return FitResult(init, best_val, failed=True)
    return FitResult(best, best_val)
