"""Shared run plumbing: the likelihood oracle interface, budgets and convergence traces."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np


class Likelihood:
    """Evaluation counter around a positive likelihood.

    ``log_fn`` maps an (n, D) array to log-likelihood values and is the source
    of truth when given; ``log_shift`` is subtracted before exponentiating so
    that very peaked likelihoods stay representable.  The evidence of the
    shifted likelihood times ``exp(log_shift)`` is the evidence of the
    original one.
    """

    def __init__(self, dim: int, fn=None, log_fn=None, batch: bool = False, log_shift: float = 0.0,
                 floor: float = 1e-300):
        if fn is None and log_fn is None:
            raise ValueError("need fn or log_fn")
        self.dim = int(dim)
        self._fn = fn
        self._log_fn = log_fn
        self._batch = batch
        self.log_shift = float(log_shift)
        self.floor = floor
        self.n_evals = 0

    def _log_batch(self, xs):
        if self._log_fn is not None:
            if self._batch:
                return np.asarray(self._log_fn(xs), dtype=float).reshape(-1)
            return np.array([self._log_fn(x) for x in xs], dtype=float)
        with np.errstate(divide="ignore"):
            return np.log(self._lin_batch(xs))

    def _lin_batch(self, xs):
        if self._batch:
            return np.asarray(self._fn(xs), dtype=float).reshape(-1)
        return np.array([self._fn(x) for x in xs], dtype=float)

    def _check(self, xs):
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if xs.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim}-dimensional inputs, got {xs.shape[1]}")
        return xs

    def log_evaluate_batch(self, xs) -> np.ndarray:
        """Unshifted log-likelihood at each row."""
        xs = self._check(xs)
        self.n_evals += len(xs)
        return self._log_batch(xs)

    def evaluate_batch(self, xs) -> np.ndarray:
        """Shifted likelihood ``exp(log l - log_shift)``, floored to stay positive."""
        xs = self._check(xs)
        self.n_evals += len(xs)
        if self._log_fn is None and self.log_shift == 0.0:
            vals = self._lin_batch(xs)
        else:
            vals = np.exp(self._log_batch(xs) - self.log_shift)
        return np.where(vals > 0, vals, np.where(np.isnan(vals), vals, self.floor))

    def evaluate(self, x) -> float:
        return float(self.evaluate_batch(np.reshape(x, (1, -1)))[0])

    __call__ = evaluate


@dataclass
class Budget:
    max_samples: int | None = None
    max_seconds: float | None = None

    def __post_init__(self):
        if self.max_samples is None and self.max_seconds is None:
            raise ValueError("budget needs max_samples and/or max_seconds")
        if self.max_samples is not None and self.max_samples < 0:
            raise ValueError("max_samples must be non-negative")
        if self.max_seconds is not None and self.max_seconds <= 0:
            raise ValueError("max_seconds must be positive")

    def samples_left(self, n: int) -> bool:
        return self.max_samples is None or n < self.max_samples

    def time_left(self, elapsed: float) -> bool:
        return self.max_seconds is None or elapsed < self.max_seconds


@dataclass(frozen=True)
class TraceRecord:
    n_samples: int
    wall_clock_s: float
    mean: float
    variance: float


@dataclass
class RunTrace:
    method: str
    seed: int
    records: list[TraceRecord] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    error: str | None = None
    log_shift: float = 0.0
    locations: list[np.ndarray] = field(default_factory=list, repr=False)

    def append(self, n_samples: int, wall_clock_s: float, mean: float, variance: float):
        if self.records:
            last = self.records[-1]
            if n_samples <= last.n_samples:
                raise ValueError("n_samples must be strictly increasing")
            wall_clock_s = max(wall_clock_s, last.wall_clock_s)
        self.records.append(TraceRecord(int(n_samples), float(wall_clock_s), float(mean), float(variance)))

    def flag(self, name: str):
        if name not in self.flags:
            self.flags.append(name)

    @property
    def final(self) -> TraceRecord | None:
        return self.records[-1] if self.records else None

    def log_z(self) -> np.ndarray:
        """Log evidence per record, in the likelihood's original (unshifted) scale."""
        with np.errstate(divide="ignore"):
            return np.log([r.mean for r in self.records]) + self.log_shift

    def as_arrays(self):
        n = np.array([r.n_samples for r in self.records], dtype=int)
        t = np.array([r.wall_clock_s for r in self.records])
        m = np.array([r.mean for r in self.records])
        v = np.array([r.variance for r in self.records])
        return n, t, m, v


class Stopwatch:
    """Monotonic elapsed-time counter."""

    def __init__(self):
        self._start = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self._start
