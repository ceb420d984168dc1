"""Benchmark likelihoods with known or pre-computed evidence, and the registry that names them."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .gp import Dataset, KernelParams, log_marginal_likelihood
from .quadrature import GaussianPrior
from .runs import Likelihood

LOG_2PI = np.log(2 * np.pi)


# ---------------------------------------------------------------- mixtures

@dataclass(frozen=True)
class MixtureLikelihood:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    domain_half_width: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size < 1 or np.any(w <= 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("weights must be a positive simplex vector")
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        var = np.atleast_2d(np.asarray(self.variances, dtype=float))
        if mu.shape != var.shape or mu.shape[0] != w.size or np.any(var <= 0):
            raise ValueError("means and variances must be K x D with positive variances")
        hw = np.broadcast_to(np.asarray(self.domain_half_width, dtype=float), (mu.shape[1],)).copy()
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)
        object.__setattr__(self, "domain_half_width", hw)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    def log_eval(self, xs) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        d = xs[:, None, :] - self.means[None]
        comp = -0.5 * (d * d / self.variances).sum(-1) - 0.5 * (LOG_2PI + np.log(self.variances)).sum(-1)
        return logsumexp(comp + np.log(self.weights), axis=1)

    def prior(self) -> GaussianPrior:
        """N(0, (half_width / 5)^2) per axis: the domain box is nu +- 5 sd."""
        return GaussianPrior(np.zeros(self.dim), (self.domain_half_width / 5.0) ** 2)


def gen_synthetic_mixture(dim: int, seed: int, domain_half_width: float = 5.0) -> MixtureLikelihood:
    """Random 'lumpy' axis-aligned Gaussian mixture.

    K is uniform on 5..14; means are uniform on the centred box of half the
    domain's half-width; each axis standard deviation is an integer uniform on
    21..29 times half_width / 100; weights come from K - 1 sorted uniform cuts
    of the unit interval.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    hw = float(domain_half_width)
    k = int(rng.integers(5, 15))
    while True:
        cuts = np.sort(rng.uniform(size=k - 1))
        w = np.diff(np.concatenate([[0.0], cuts, [1.0]]))
        if np.all(w > 0):
            break
    w = w / w.sum()
    means = rng.uniform(-0.5 * hw, 0.5 * hw, size=(k, dim))
    sd = rng.integers(21, 30, size=(k, dim)) * (hw / 100.0)
    return MixtureLikelihood(w, means, sd**2, np.full(dim, hw))


def mixture_eval(mix: MixtureLikelihood, x) -> float:
    return float(np.exp(mix.log_eval(np.reshape(x, (1, -1)))[0]))


def analytic_mixture_log_evidence(mix: MixtureLikelihood, prior: GaussianPrior) -> float:
    if mix.dim != prior.dim:
        raise ValueError("mixture and prior dimensions differ")
    s = mix.variances + prior.variances
    d = mix.means - prior.mean
    comp = -0.5 * (d * d / s).sum(-1) - 0.5 * (LOG_2PI + np.log(s)).sum(-1)
    return float(logsumexp(comp + np.log(mix.weights)))


def analytic_mixture_evidence(mix: MixtureLikelihood, prior: GaussianPrior) -> float:
    """sum_k w_k N(mu_k; nu, Sigma_k + Lambda)."""
    return float(np.exp(analytic_mixture_log_evidence(mix, prior)))


# ---------------------------------------------------------------- regression

class CsvParseError(ValueError):
    pass


@dataclass(frozen=True)
class RegressionEvidenceProblem:
    inputs: np.ndarray
    targets: np.ndarray
    hyperprior: GaussianPrior
    log_floor: float = -1e4

    def __post_init__(self):
        if self.inputs.shape[0] < 2 or self.inputs.shape[0] != self.targets.size:
            raise ValueError("need at least two rows")
        if self.hyperprior.dim != self.hyper_dim:
            raise ValueError(f"hyperprior must have dimension {self.hyper_dim}")

    @property
    def hyper_dim(self) -> int:
        return self.inputs.shape[1] + 2


def load_regression_problem(path, hyperprior_variance: float = 4.0, header: bool | None = None,
                            max_rows: int | None = None) -> RegressionEvidenceProblem:
    """Read a CSV whose last column is the target; standardise inputs and targets.

    ``header=None`` sniffs: a first row that does not parse as numbers is
    treated as a header.  Hyperparameters are (log output scale, log
    length-scale per input, log noise variance) with a zero-mean isotropic
    Gaussian prior of the given variance.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if lineno == 1 and header is not False:
                    continue
                raise CsvParseError(f"{path}:{lineno}: could not parse {row!r}") from None
            if header is True and lineno == 1:
                rows.pop()
    if not rows:
        raise CsvParseError(f"{path}: no data rows")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise CsvParseError(f"{path}: row {i + 1} has {len(r)} columns, expected {width}")
    if width < 2:
        raise CsvParseError(f"{path}: need at least one input column and a target")
    data = np.array(rows[:max_rows] if max_rows else rows)
    if data.shape[0] < 2:
        raise ValueError("need at least two rows")
    x, y = data[:, :-1], data[:, -1]
    x = (x - x.mean(0)) / np.where(x.std(0) > 0, x.std(0), 1.0)
    y = (y - y.mean()) / (y.std() if y.std() > 0 else 1.0)
    d = x.shape[1]
    prior = GaussianPrior.isotropic(d + 2, hyperprior_variance)
    return RegressionEvidenceProblem(x, y, prior)


def regression_log_likelihood(problem: RegressionEvidenceProblem, log_hypers) -> float:
    """GP regression log marginal likelihood at exp(log_hypers).

    A failed factorisation returns ``problem.log_floor``.
    """
    h = np.asarray(log_hypers, dtype=float).reshape(-1)
    if h.size != problem.hyper_dim or not np.all(np.isfinite(h)):
        raise ValueError("log hyperparameters must be a finite vector of length hyper_dim")
    params = KernelParams(np.exp(h[0]), np.exp(h[1:-1]))
    try:
        return log_marginal_likelihood(Dataset(problem.inputs, problem.targets), params,
                                       jitter=0.0, noise_variance=float(np.exp(h[-1])))
    except (np.linalg.LinAlgError, ValueError):
        return problem.log_floor


def regression_log_likelihood_batch(problem: RegressionEvidenceProblem, H) -> np.ndarray:
    """Vectorised form of :func:`regression_log_likelihood` over rows of ``H``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    x, y = problem.inputs, problem.targets
    m = y.size
    ls = np.exp(H[:, 1:-1])
    d = (x[None, :, None, :] - x[None, None, :, :]) / ls[:, None, None, :]
    K = np.exp(2 * H[:, 0])[:, None, None] * np.exp(-0.5 * (d * d).sum(-1))
    K += np.exp(H[:, -1])[:, None, None] * np.eye(m)
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        # fall back row by row to isolate the failures
        return np.array([regression_log_likelihood(problem, h) for h in H])
    a = np.linalg.solve(L, np.broadcast_to(y, (len(H), m))[..., None])[..., 0]
    logdet = np.log(np.diagonal(L, axis1=1, axis2=2)).sum(-1)
    val = -0.5 * (a * a).sum(-1) - logdet - 0.5 * m * LOG_2PI
    return np.where(np.isfinite(val), val, problem.log_floor)


# ---------------------------------------------------------------- registry

def default_registry_path() -> Path:
    env = os.environ.get("WSABI_REGISTRY")
    if env:
        return Path(env)
    return Path(str(resources.files("wsabi") / "data" / "registry.json"))


def load_registry(path=None) -> dict:
    path = Path(path) if path else default_registry_path()
    with open(path, encoding="utf-8") as fh:
        reg = json.load(fh)
    for key, entry in reg.items():
        for f in ("dim", "ground_truth_log_z", "seed", "provenance", "kind"):
            if f not in entry:
                raise ValueError(f"registry entry {key!r} lacks {f!r}")
    return reg


def save_registry(reg: dict, path=None):
    path = Path(path) if path else default_registry_path()
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(reg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    tmp.replace(path)


@dataclass
class Benchmark:
    id: str
    dim: int
    prior: GaussianPrior
    truth_log_z: float | None
    kind: str
    make_likelihood: object = field(repr=False)
    entry: dict = field(default_factory=dict, repr=False)

    @property
    def truth(self) -> float | None:
        return None if self.truth_log_z is None else float(np.exp(self.truth_log_z))


def _data_path(entry, registry_path) -> Path:
    p = Path(entry["data"])
    if p.is_absolute():
        return p
    base = Path(registry_path).parent if registry_path else default_registry_path().parent
    return base / p


def regression_log_shift(problem: RegressionEvidenceProblem) -> float:
    """Max log-likelihood over the active sampler's initial design (prior mean and axis points)."""
    from .sampler import initial_design

    return float(regression_log_likelihood_batch(problem, initial_design(problem.hyperprior)).max())


def conjugate_likelihood(dim: int) -> Likelihood:
    return Likelihood(dim, log_fn=lambda xs: -0.5 * (xs * xs).sum(1) - 0.5 * dim * LOG_2PI, batch=True)


def build_benchmark(bench_id: str, registry: dict | None = None, registry_path=None) -> Benchmark:
    if registry is None:
        registry = load_registry(registry_path)
    if bench_id not in registry:
        raise KeyError(bench_id)
    e = registry[bench_id]
    kind, dim = e["kind"], int(e["dim"])
    truth = e.get("ground_truth_log_z")
    if kind == "conjugate":
        prior = GaussianPrior.isotropic(dim, e.get("prior_variance", 1.0))
        return Benchmark(bench_id, dim, prior, truth, kind, lambda: conjugate_likelihood(dim), e)
    if kind == "mixture":
        mix = gen_synthetic_mixture(dim, int(e["seed"]), e.get("domain_half_width", 5.0))
        prior = mix.prior()
        return Benchmark(bench_id, dim, prior, truth, kind,
                         lambda: Likelihood(dim, log_fn=mix.log_eval, batch=True), e)
    if kind == "regression":
        problem = load_regression_problem(_data_path(e, registry_path), e.get("hyperprior_variance", 4.0),
                                          max_rows=e.get("max_rows"))
        if problem.hyper_dim != dim:
            raise ValueError(f"{bench_id}: data gives hyper_dim {problem.hyper_dim}, registry says {dim}")
        shift = regression_log_shift(problem)
        return Benchmark(
            bench_id, dim, problem.hyperprior, truth, kind,
            lambda: Likelihood(dim, log_fn=lambda H: regression_log_likelihood_batch(problem, H),
                               batch=True, log_shift=shift),
            e)
    raise ValueError(f"unknown benchmark kind {kind!r}")


def analytic_truth(bench: Benchmark) -> float | None:
    """Closed-form log evidence where one exists."""
    if bench.kind == "conjugate":
        # N(0, I) likelihood against N(0, v I): N(0; 0, (1 + v) I)
        v = bench.prior.variances
        return float(-0.5 * np.sum(LOG_2PI + np.log(1 + v)))
    if bench.kind == "mixture":
        mix = gen_synthetic_mixture(bench.dim, int(bench.entry["seed"]),
                                    bench.entry.get("domain_half_width", 5.0))
        return analytic_mixture_log_evidence(mix, bench.prior)
    return None


def exhaustive_smc_log_z(bench: Benchmark, n_samples: int, seed: int, chunk: int = 20_000):
    """Log evidence and its relative standard error from plain prior sampling."""
    lik = bench.make_likelihood()
    rng = np.random.default_rng(seed)
    parts, done = [], 0
    while done < n_samples:
        k = min(chunk, n_samples - done)
        parts.append(lik.log_evaluate_batch(bench.prior.sample(rng, k)))
        done += k
    lw = np.concatenate(parts)
    log_z = float(logsumexp(lw) - np.log(lw.size))
    w = np.exp(lw - lw.max())
    rel_se = float(w.std(ddof=1) / np.sqrt(w.size) / w.mean())
    return log_z, rel_se
