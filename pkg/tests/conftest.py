import numpy as np
import pytest

from wsabi.gp import KernelParams
from wsabi.quadrature import GaussianPrior
from wsabi.warp import Flavour, build_model


def random_locations(rng, n, dim, spread=2.0, min_gap=0.3):
    """n points in [-spread, spread]^D that are pairwise at least min_gap apart."""
    pts = []
    for _ in range(100_000):
        if len(pts) == n:
            break
        p = rng.uniform(-spread, spread, dim)
        if all(np.max(np.abs(p - q)) >= min_gap for q in pts):
            pts.append(p)
    if len(pts) < n:
        raise RuntimeError("could not place points; widen spread or shrink min_gap")
    return np.array(pts)


def random_params(rng, dim, ls=(0.5, 1.5), out=(0.5, 2.0)):
    return KernelParams(float(rng.uniform(*out)), rng.uniform(*ls, dim))


def random_prior(rng, dim):
    return GaussianPrior(rng.uniform(-0.5, 0.5, dim), rng.uniform(0.5, 2.0, dim))


def random_model(rng, dim, n, flavour=Flavour.LINEARISED, **kw):
    """A well-conditioned warped posterior on random positive data."""
    X = random_locations(rng, n, dim)
    raw = np.exp(rng.normal(-1.0, 1.0, n))
    return build_model(X, raw, random_params(rng, dim, **kw), flavour)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def std_prior():
    return GaussianPrior.isotropic(1)


@pytest.fixture
def single_datum():
    """One observation l(0) = 1 with lambda = sigma = 1 (alpha = 0.8)."""
    def make(flavour):
        return build_model(np.zeros((1, 1)), [1.0], KernelParams(1.0, np.ones(1)), flavour, base_jitter=0.0)
    return make


# acceptance results, printed once at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
