"""Square-root warped likelihood model.

A GP is placed on ``g(x) = sqrt(2 (l(x) - alpha))`` so that ``l = alpha + g^2 / 2``
is non-negative.  The induced posterior on ``l`` is a scaled non-central chi^2
process; two Gaussian approximations of it are offered: linearisation about
the GP mean, and moment matching.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .gp import Dataset, GpPosterior, KernelParams, fit_posterior

ALPHA_FRACTION = 0.8


class InvalidLikelihoodError(ValueError):
    pass


class Flavour(enum.Enum):
    LINEARISED = "L"
    MOMENT_MATCHED = "M"


def warp_observations(raw_values):
    """Return ``(alpha, warped)`` with ``alpha = 0.8 * min(raw)``."""
    raw = np.asarray(raw_values, dtype=float).reshape(-1)
    if raw.size == 0:
        raise InvalidLikelihoodError("no likelihood values given")
    if not np.all(np.isfinite(raw)) or np.any(raw <= 0):
        raise InvalidLikelihoodError("likelihood values must be finite and strictly positive")
    alpha = ALPHA_FRACTION * raw.min()
    return alpha, np.sqrt(2.0 * (raw - alpha))


def unwarp(alpha: float, warped):
    return alpha + 0.5 * np.square(warped)


@dataclass(frozen=True)
class WarpedModel:
    gp: GpPosterior
    alpha: float
    flavour: Flavour

    @property
    def params(self) -> KernelParams:
        return self.gp.params

    def mean_and_var(self, xs):
        """Approximate posterior mean and variance of l at each row of ``xs``."""
        m, c = self.gp.mean_and_var(xs)
        if self.flavour is Flavour.LINEARISED:
            return self.alpha + 0.5 * m * m, m * c * m
        return self.alpha + 0.5 * (m * m + c), 0.5 * c * c + m * c * m

    def mean(self, xs):
        return self.mean_and_var(xs)[0]

    def cov(self, xs, ys):
        mx, my = self.gp.mean(xs), self.gp.mean(ys)
        c = self.gp.cov(xs, ys)
        lin = mx[:, None] * c * my[None, :]
        if self.flavour is Flavour.LINEARISED:
            return lin
        return 0.5 * c * c + lin


def build_model(locations, raw_values, params: KernelParams, flavour: Flavour,
                base_jitter: float | None = None, alpha: float | None = None) -> WarpedModel:
    """Warp raw likelihood values and condition the GP on them.

    ``alpha`` defaults to 0.8 x the smallest raw value; it must lie strictly
    below every raw value.
    """
    if alpha is None:
        alpha, warped = warp_observations(raw_values)
    else:
        raw = np.asarray(raw_values, dtype=float).reshape(-1)
        if np.any(raw <= alpha) or not np.all(np.isfinite(raw)):
            raise InvalidLikelihoodError("alpha must lie strictly below every likelihood value")
        warped = np.sqrt(2.0 * (raw - alpha))
    gp = fit_posterior(Dataset(locations, warped), params, base_jitter)
    return WarpedModel(gp, float(alpha), flavour)


def _pointwise(model, x, y):
    x = np.asarray(x, dtype=float).reshape(1, -1)
    y = np.asarray(y, dtype=float).reshape(1, -1)
    gp = model.gp
    mx, my = float(gp.mean(x)[0]), float(gp.mean(y)[0])
    if np.array_equal(x, y):
        c = float(gp.var(x)[0])
    else:
        c = float(gp.cov(x, y)[0, 0])
    return mx, my, c


def wsabi_l_mean_cov(model: WarpedModel, x, y):
    """Linearised mean at ``x`` and covariance between ``x`` and ``y``."""
    if model.flavour is not Flavour.LINEARISED:
        raise ValueError("model is not linearised")
    mx, my, c = _pointwise(model, x, y)
    return model.alpha + 0.5 * mx * mx, mx * c * my


def wsabi_m_mean_cov(model: WarpedModel, x, y):
    """Moment-matched mean at ``x`` and covariance between ``x`` and ``y``."""
    if model.flavour is not Flavour.MOMENT_MATCHED:
        raise ValueError("model is not moment-matched")
    mx, my, c = _pointwise(model, x, y)
    cxx = float(model.gp.var(np.asarray(x, dtype=float).reshape(1, -1))[0])
    return model.alpha + 0.5 * (mx * mx + cxx), 0.5 * c * c + mx * c * my


def chi2_mc_reference(model: WarpedModel, x_grid, n_draws: int, seed: int):
    """Empirical mean and variance of l on ``x_grid`` under the exact warped posterior.

    Joint draws of g on the grid are pushed through ``alpha + g^2 / 2``.  Only
    intended as a test oracle for the two Gaussian approximations.
    """
    if n_draws < 1000:
        raise ValueError("n_draws must be at least 1000")
    xs = np.atleast_2d(np.asarray(x_grid, dtype=float))
    gp = model.gp
    mu = gp.mean(xs)
    C = gp.cov(xs, xs)
    C = 0.5 * (C + C.T)
    # symmetric square root; tolerates the exactly singular blocks that grid
    # points on top of the data produce
    try:
        w, V = np.linalg.eigh(C)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("grid covariance not factorisable") from exc
    if not np.all(np.isfinite(w)) or w.min() < -1e-8 * max(gp.params.variance, w.max()):
        raise np.linalg.LinAlgError("grid covariance is not positive semi-definite")
    L = V * np.sqrt(np.clip(w, 0.0, None))
    rng = np.random.default_rng(seed)
    g = mu[None, :] + rng.standard_normal((n_draws, len(xs))) @ L.T
    lik = model.alpha + 0.5 * g * g
    return lik.mean(0), lik.var(0, ddof=1)
