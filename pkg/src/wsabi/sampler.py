"""Uncertainty-sampling acquisitions and the sequential WSABI loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .cmaes import DegenerateAcquisitionError, cma_es_maximize, default_population
from .gp import Dataset, KernelParams, default_bounds, optimize_hyperparams
from .quadrature import EvidenceEstimate, GaussianPrior, evidence
from .runs import Budget, Likelihood, RunTrace, Stopwatch
from .warp import Flavour, WarpedModel, build_model, warp_observations

logger = logging.getLogger(__name__)

MIN_SEPARATION = 1e-8


@dataclass
class AcquisitionConfig:
    population: int | None = None
    generations: int = 30
    search_box_sigmas: float = 5.0
    seed: int = 0
    polish: bool = True

    def __post_init__(self):
        if self.population is not None and self.population < 4:
            raise ValueError("population must be >= 4")
        if self.generations < 10:
            raise ValueError("generations must be >= 10")
        if not 2 <= self.search_box_sigmas <= 10:
            raise ValueError("search_box_sigmas must lie in [2, 10]")


@dataclass
class WsabiConfig:
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    # ML-II schedule: refit after every sample up to `refit_all_until`, then every `refit_interval`
    refit_all_until: int = 25
    refit_interval: int = 5
    restarts: int = 3
    late_restarts: int = 1
    fit_maxiter: int = 100
    fixed_params: KernelParams | None = None
    length_scale_bounds: tuple[float, float] = (0.01, 20.0)

    def refit_due(self, n: int) -> bool:
        return n <= self.refit_all_until or (n - self.refit_all_until) % self.refit_interval == 0


def acquisition_values(model: WarpedModel, prior: GaussianPrior, xs) -> np.ndarray:
    """Posterior variance of l(x) pi(x) at each row of ``xs`` under the model's flavour."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    m, c = model.gp.mean_and_var(xs)
    # pi^2 from the log density so far-out probes underflow to 0 rather than NaN
    pi2 = np.exp(2.0 * prior.logpdf(xs))
    if model.flavour is Flavour.LINEARISED:
        return pi2 * c * m * m
    return pi2 * c * (0.5 * c + m * m)


def acquisition_l(model: WarpedModel, prior: GaussianPrior, x) -> float:
    if model.flavour is not Flavour.LINEARISED:
        raise ValueError("model is not linearised")
    return float(acquisition_values(model, prior, np.reshape(x, (1, -1)))[0])


def acquisition_m(model: WarpedModel, prior: GaussianPrior, x) -> float:
    if model.flavour is not Flavour.MOMENT_MATCHED:
        raise ValueError("model is not moment-matched")
    return float(acquisition_values(model, prior, np.reshape(x, (1, -1)))[0])


def _too_close(x, existing, tol):
    if existing is None or len(existing) == 0:
        return False
    return bool(np.any(np.all(np.abs(np.asarray(existing) - x) <= tol, axis=1)))


def maximize_acquisition(acq, prior: GaussianPrior, config: AcquisitionConfig, existing=None,
                         batched: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
    """CMA-ES search over nu +- search_box_sigmas sd, then a bounded local polish.

    ``acq`` maps a D-vector to a value, or an (n, D) array to n values when
    ``batched``.  Points within 1e-8 sd (every coordinate) of a row of
    ``existing`` are skipped in favour of the next best candidate.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    f_batch = acq if batched else (lambda xs: np.array([acq(x) for x in xs], dtype=float))
    half = config.search_box_sigmas * prior.std
    lower, upper = prior.mean - half, prior.mean + half
    pop = config.population or default_population(prior.dim)

    # a uniform scatter picks the starting mean; acquisition surfaces are multimodal
    scatter = rng.uniform(lower, upper, size=(10 * pop, prior.dim))
    fs = np.asarray(f_batch(scatter), dtype=float)
    fs = np.where(np.isfinite(fs), fs, -np.inf)
    x0 = scatter[int(np.argmax(fs))] if np.any(np.isfinite(fs)) else None
    res = cma_es_maximize(f_batch, lower, upper, rng, population=pop,
                          generations=config.generations, x0=x0, sigma0=0.2)
    xs = np.concatenate([scatter, res.xs])
    vals = np.concatenate([fs, res.fs])
    if not np.any(np.isfinite(vals)):
        raise DegenerateAcquisitionError("acquisition was non-finite at every probe")

    candidates = []
    best_x, best_f = res.best_x, res.best_f
    if fs.max() > best_f:
        best_x, best_f = scatter[int(np.argmax(fs))], float(fs.max())
    if config.polish and np.isfinite(best_f) and best_f > 0:
        # normalised so that the stopping rule does not depend on the acquisition's scale
        def neg(x):
            v = float(np.asarray(f_batch(x[None, :]), dtype=float)[0]) / best_f
            return -v if np.isfinite(v) else 0.0

        pol = minimize(neg, best_x, method="L-BFGS-B", bounds=list(zip(lower, upper)),
                       options={"maxiter": 30})
        if np.isfinite(pol.fun) and -pol.fun > 1.0:
            candidates.append(np.clip(pol.x, lower, upper))
    candidates.append(best_x)
    order = np.argsort(-vals, kind="stable")
    candidates.extend(xs[i] for i in order[:50])
    tol = MIN_SEPARATION * prior.std
    for c in candidates:
        if not _too_close(c, existing, tol):
            return np.array(c, dtype=float)
    # every candidate collides with data: perturb the best inside the box
    return np.clip(best_x + 1e3 * tol * rng.standard_normal(prior.dim), lower, upper)


def initial_design(prior: GaussianPrior) -> np.ndarray:
    """The prior mean followed by nu + sd_i e_i for each coordinate axis."""
    pts = [prior.mean.copy()]
    for i in range(prior.dim):
        p = prior.mean.copy()
        p[i] += prior.std[i]
        pts.append(p)
    return np.array(pts)


def _fit(locations, raw, prior, params, config: WsabiConfig, n, seed):
    _, warped = warp_observations(raw)
    data = Dataset(locations, warped)
    lo, hi = config.length_scale_bounds
    bounds = default_bounds(data, input_scale=prior.std)
    bounds.log_length_scales = np.stack([np.log(lo * prior.std), np.log(hi * prior.std)], axis=1)
    if params is None:
        rms = float(np.sqrt(np.mean(warped**2)))
        params = KernelParams(max(rms, 1e-12), prior.std.copy())
    restarts = config.restarts if n <= config.refit_all_until else config.late_restarts
    return optimize_hyperparams(data, params, restarts=restarts, bounds=bounds,
                                seed=seed, maxiter=config.fit_maxiter).params


def run_wsabi(likelihood: Likelihood, prior: GaussianPrior, flavour: Flavour | str, budget: Budget,
              config: WsabiConfig | None = None, seed: int | None = None) -> RunTrace:
    """Sequential active Bayesian quadrature.

    Each step evaluates the likelihood, re-warps every observation with the
    current alpha, refits hyperparameters when the schedule says so, records
    the evidence estimate, then maximises the acquisition for the next point.
    """
    config = config or WsabiConfig()
    if isinstance(flavour, str):
        flavour = Flavour(flavour.upper()[-1])
    if likelihood.dim != prior.dim:
        raise ValueError("likelihood and prior dimensions differ")
    seed = config.acquisition.seed if seed is None else seed
    method = "wsabi-l" if flavour is Flavour.LINEARISED else "wsabi-m"
    trace = RunTrace(method, seed, log_shift=likelihood.log_shift)

    design = initial_design(prior)
    X: list[np.ndarray] = []
    y: list[float] = []
    params = config.fixed_params
    clock = Stopwatch()
    next_x = None
    while budget.samples_left(len(X)) and budget.time_left(clock.elapsed()):
        n = len(X)
        x = design[n] if n < len(design) else next_x
        try:
            val = likelihood.evaluate(x)
            if not np.isfinite(val) or val <= 0:
                raise ValueError(f"likelihood returned {val}")
        except Exception as exc:  # noqa: BLE001 - any oracle failure ends the run
            trace.error = f"likelihood failed at sample {n + 1}: {exc}"
            trace.flag("likelihood-error")
            logger.error(trace.error)
            break
        X.append(np.asarray(x, dtype=float))
        y.append(val)
        trace.locations.append(X[-1])
        n += 1
        locs, raw = np.array(X), np.array(y)
        if config.fixed_params is None and config.refit_due(n):
            params = _fit(locs, raw, prior, params, config, n, seed * 7919 + n)
        model = build_model(locs, raw, params, flavour)
        est: EvidenceEstimate = evidence(model, prior)
        trace.append(n, clock.elapsed(), est.mean, est.variance)

        if budget.samples_left(n) and n >= len(design):
            rng = np.random.default_rng([seed, n])
            try:
                next_x = maximize_acquisition(
                    lambda xs, m=model: acquisition_values(m, prior, xs), prior, config.acquisition,
                    existing=locs, batched=True, rng=rng)
            except DegenerateAcquisitionError as exc:
                trace.error = str(exc)
                trace.flag("degenerate-acquisition")
                break
    return trace
