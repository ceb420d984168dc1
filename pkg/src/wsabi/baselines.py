"""Monte Carlo competitors: simple Monte Carlo, annealed importance sampling, and
Bayesian Monte Carlo on prior draws."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .gp import Dataset, KernelParams, default_bounds, fit_posterior, optimize_hyperparams
from .quadrature import GaussianPrior, evidence_bmc_from_gp
from .runs import Budget, Likelihood, RunTrace, Stopwatch
from .sampler import WsabiConfig

logger = logging.getLogger(__name__)

SMC_CHUNK = 256


def run_smc(likelihood: Likelihood, prior: GaussianPrior, budget: Budget, seed: int = 0) -> RunTrace:
    """Simple Monte Carlo from the prior.

    Records land at n = 1, 2, 4, 8, ... and at the final sample count.  The
    recorded variance is the sample variance over n (undefined, NaN, at n = 1).
    Under a time budget a chunk that would finish past the allowance is
    discarded, so every recorded time is within budget.
    """
    trace = RunTrace("smc", seed, log_shift=likelihood.log_shift)
    rng = np.random.default_rng(seed)
    clock = Stopwatch()
    n = 0
    total = 0.0
    total_sq = 0.0
    next_record = 1
    last_time = 0.0

    def record(t):
        mean = total / n
        var = max(total_sq / n - mean * mean, 0.0) * n / (n - 1) / n if n > 1 else float("nan")
        trace.append(n, t, mean, var)

    while budget.samples_left(n) and budget.time_left(clock.elapsed()):
        size = min(SMC_CHUNK, next_record - n)
        if budget.max_samples is not None:
            size = min(size, budget.max_samples - n)
        xs = prior.sample(rng, size)
        try:
            vals = likelihood.evaluate_batch(xs)
            if not np.all(np.isfinite(vals)):
                raise ValueError("non-finite likelihood value")
        except Exception as exc:  # noqa: BLE001
            trace.error = f"likelihood failed after {n} samples: {exc}"
            trace.flag("likelihood-error")
            break
        now = clock.elapsed()
        if budget.max_seconds is not None and now > budget.max_seconds:
            break
        n += size
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
        last_time = now
        if n == next_record:
            record(now)
            next_record *= 2
    if n > 0 and (not trace.records or trace.records[-1].n_samples != n):
        record(last_time)
    return trace


class Schedule(enum.Enum):
    GEOMETRIC = "geometric"
    LINEAR = "linear"


@dataclass
class AisConfig:
    n_temperatures: int = 50
    n_mh_steps_per_temperature: int = 5
    proposal_scale: float = 0.5
    schedule: Schedule = Schedule.GEOMETRIC
    n_chains: int = 100
    seed: int = 0
    min_beta: float = 1e-3

    def __post_init__(self):
        if isinstance(self.schedule, str):
            self.schedule = Schedule(self.schedule.lower())
        if self.n_temperatures < 2:
            raise ValueError("need at least two temperatures")
        if self.n_chains < 1 or self.n_mh_steps_per_temperature < 0:
            raise ValueError("n_chains must be >= 1 and MH steps >= 0")
        if not self.proposal_scale > 0:
            raise ValueError("proposal_scale must be positive")

    def betas(self) -> np.ndarray:
        """Inverse temperatures from 0 to 1, strictly increasing.

        Geometric spacing runs from ``min_beta`` up to 1, so the grid is
        densest where the tempered density changes fastest.
        """
        t = self.n_temperatures
        if t == 2:
            return np.array([0.0, 1.0])
        if self.schedule is Schedule.LINEAR:
            return np.linspace(0.0, 1.0, t)
        b = np.geomspace(self.min_beta, 1.0, t - 1)
        b[-1] = 1.0
        return np.concatenate([[0.0], b])

    @property
    def evals_per_chain(self) -> int:
        return 1 + (self.n_temperatures - 2) * self.n_mh_steps_per_temperature


def ais_log_weights(likelihood: Likelihood, prior: GaussianPrior, config: AisConfig,
                    rng: np.random.Generator, n_chains: int | None = None, deadline=None):
    """Run one batch of chains; returns (log weights, acceptance counts per chain).

    Log weights accumulate (beta_t - beta_{t-1}) log l(x_{t-1}).  MH moves target
    pi(x) l(x)^beta with an isotropic Gaussian proposal whose scale, in prior
    standard deviations, shrinks linearly from 1 at beta = 0 to
    ``proposal_scale`` at beta = 1.  ``deadline`` is a callable returning True
    once the time budget is spent; the batch is then abandoned (returns None).
    """
    n = config.n_chains if n_chains is None else n_chains
    betas = config.betas()
    x = prior.sample(rng, n)
    log_l = likelihood.log_evaluate_batch(x)
    if not np.all(np.isfinite(log_l)):
        raise FloatingPointError("non-finite log-likelihood")
    log_w = np.zeros(n)
    accepts = np.zeros(n, dtype=int)
    for t in range(1, len(betas)):
        log_w += (betas[t] - betas[t - 1]) * log_l
        if t == len(betas) - 1:
            break
        beta = betas[t]
        step = (1.0 + (config.proposal_scale - 1.0) * beta) * prior.std
        for _ in range(config.n_mh_steps_per_temperature):
            prop = x + step * rng.standard_normal(x.shape)
            log_l_prop = likelihood.log_evaluate_batch(prop)
            if not np.all(np.isfinite(log_l_prop)):
                raise FloatingPointError("non-finite log-likelihood")
            log_ratio = (beta * (log_l_prop - log_l)
                         + prior.logpdf(prop) - prior.logpdf(x))
            ok = np.log(rng.uniform(size=n)) < log_ratio
            x = np.where(ok[:, None], prop, x)
            log_l = np.where(ok, log_l_prop, log_l)
            accepts += ok
        if deadline is not None and deadline():
            return None
    return log_w, accepts


def run_ais(likelihood: Likelihood, prior: GaussianPrior, config: AisConfig | None = None,
            budget: Budget | None = None) -> RunTrace:
    """Annealed importance sampling in batches of ``n_chains`` chains.

    The pooled estimate after each batch is the mean of exp(log w) over all
    chains so far, formed with log-sum-exp.  The sample count is the number of
    likelihood evaluations spent.  Without a budget exactly one batch runs.
    """
    config = config or AisConfig()
    if budget is None:
        budget = Budget(max_samples=config.n_chains * config.evals_per_chain)
    trace = RunTrace("ais", config.seed, log_shift=likelihood.log_shift)
    rng = np.random.default_rng(config.seed)
    clock = Stopwatch()
    per_batch = config.n_chains * config.evals_per_chain
    log_ws = []
    spent = 0

    def out_of_time():
        return budget.max_seconds is not None and clock.elapsed() > budget.max_seconds

    while budget.time_left(clock.elapsed()):
        if budget.max_samples is not None and spent + per_batch > budget.max_samples:
            break
        try:
            res = ais_log_weights(likelihood, prior, config, rng, deadline=out_of_time)
        except Exception as exc:  # noqa: BLE001
            trace.error = f"AIS aborted: {exc}"
            trace.flag("likelihood-error")
            break
        if res is None or out_of_time():
            break
        lw, accepts = res
        if config.n_mh_steps_per_temperature > 0 and config.n_temperatures > 2 and np.any(accepts == 0):
            trace.flag("zero-acceptance-chain")
        log_ws.append(lw)
        spent += per_batch
        all_lw = np.concatenate(log_ws)
        k = all_lw.size
        log_z = logsumexp(all_lw) - np.log(k)
        # variance of the mean weight, scaled back from the max for stability
        shift = all_lw.max()
        w = np.exp(all_lw - shift)
        var = float(np.exp(2 * shift) * w.var(ddof=1) / k) if k > 1 else float("nan")
        trace.append(spent, clock.elapsed(), float(np.exp(log_z)), var)
    return trace


def run_bmc(likelihood: Likelihood, prior: GaussianPrior, budget: Budget, seed: int = 0,
            config: WsabiConfig | None = None) -> RunTrace:
    """Bayesian Monte Carlo: prior draws, GP directly on the likelihood values.

    Hyperparameters are refit by ML-II on the same schedule as the active
    sampler.
    """
    config = config or WsabiConfig()
    trace = RunTrace("bmc", seed, log_shift=likelihood.log_shift)
    rng = np.random.default_rng(seed)
    clock = Stopwatch()
    X, y = [], []
    params = config.fixed_params
    while budget.samples_left(len(X)) and budget.time_left(clock.elapsed()):
        x = prior.sample(rng, 1)[0]
        try:
            val = likelihood.evaluate(x)
            if not np.isfinite(val):
                raise ValueError(f"likelihood returned {val}")
        except Exception as exc:  # noqa: BLE001
            trace.error = f"likelihood failed at sample {len(X) + 1}: {exc}"
            trace.flag("likelihood-error")
            break
        X.append(x)
        y.append(val)
        n = len(X)
        data = Dataset(np.array(X), np.array(y))
        if config.fixed_params is None and config.refit_due(n):
            bounds = default_bounds(data, input_scale=prior.std)
            lo, hi = config.length_scale_bounds
            bounds.log_length_scales = np.stack([np.log(lo * prior.std), np.log(hi * prior.std)], axis=1)
            if params is None:
                params = KernelParams(max(float(np.sqrt(np.mean(data.values**2))), 1e-12), prior.std.copy())
            restarts = config.restarts if n <= config.refit_all_until else config.late_restarts
            params = optimize_hyperparams(data, params, restarts=restarts, bounds=bounds,
                                          seed=seed * 7919 + n, maxiter=config.fit_maxiter).params
        try:
            gp = fit_posterior(data, params)
        except np.linalg.LinAlgError as exc:
            logger.warning("BMC conditioning failed at n=%d: %s", n, exc)
            trace.flag("conditioning-failure")
            X.pop()
            y.pop()
            continue
        est = evidence_bmc_from_gp(gp, prior)
        now = clock.elapsed()
        if budget.max_seconds is not None and now > budget.max_seconds:
            break
        trace.append(n, now, est.mean, est.variance)
    return trace
