import math

import numpy as np
import pytest

from wsabi.cmaes import DegenerateAcquisitionError, cma_es_maximize, default_population
from wsabi.gp import KernelParams
from wsabi.quadrature import GaussianPrior
from wsabi.runs import Budget, Likelihood
from wsabi.sampler import (
    AcquisitionConfig, WsabiConfig, acquisition_l, acquisition_m, acquisition_values, initial_design,
    maximize_acquisition, run_wsabi,
)
from wsabi.warp import Flavour, WarpedModel, build_model

from conftest import random_model

STD = GaussianPrior.isotropic(1)
UNIT = KernelParams(1.0, np.ones(1))


def conjugate(dim=1):
    return Likelihood(dim, log_fn=lambda xs: -0.5 * (xs * xs).sum(1) - 0.5 * dim * math.log(2 * math.pi), batch=True)


def _single(flavour):
    return build_model(np.zeros((1, 1)), [1.0], UNIT, flavour, base_jitter=0.0)


class TestAcquisition:
    def test_zero_at_training_point(self):
        assert acquisition_l(_single(Flavour.LINEARISED), STD, [0.0]) == pytest.approx(0.0, abs=1e-12)
        assert acquisition_m(_single(Flavour.MOMENT_MATCHED), STD, [0.0]) == pytest.approx(0.0, abs=1e-12)

    def test_single_datum_value(self):
        pi1 = math.exp(-0.5) / math.sqrt(2 * math.pi)
        m2 = 0.4 * math.exp(-1.0)
        c = 1 - math.exp(-1.0)
        expected = pi1**2 * c * m2
        assert expected == pytest.approx(0.005446, abs=1e-6)
        assert acquisition_l(_single(Flavour.LINEARISED), STD, [1.0]) == pytest.approx(expected, rel=1e-12)

    def test_zero_warped_mean(self):
        far = build_model(np.array([[1e3]]), [1.0], UNIT, Flavour.LINEARISED)
        assert acquisition_l(far, STD, [0.0]) == 0.0
        mm = WarpedModel(far.gp, far.alpha, Flavour.MOMENT_MATCHED)
        p = 1 / math.sqrt(2 * math.pi)
        assert acquisition_m(mm, STD, [0.0]) == pytest.approx(p * p / 2, rel=1e-12)

    def test_m_minus_l_identity(self, rng):
        for _ in range(5):
            lin = random_model(rng, 2, 6)
            mm = WarpedModel(lin.gp, lin.alpha, Flavour.MOMENT_MATCHED)
            prior = GaussianPrior.isotropic(2)
            xs = rng.uniform(-3, 3, (200, 2))
            a_l, a_m = acquisition_values(lin, prior, xs), acquisition_values(mm, prior, xs)
            c = lin.gp.var(xs)
            np.testing.assert_allclose(a_m - a_l, prior.pdf(xs) ** 2 * 0.5 * c * c, rtol=1e-12, atol=1e-300)
            assert np.all(a_l >= 0) and np.all(a_m >= a_l)

    def test_flavour_checked(self):
        with pytest.raises(ValueError):
            acquisition_l(_single(Flavour.MOMENT_MATCHED), STD, [0.0])
        with pytest.raises(ValueError):
            acquisition_m(_single(Flavour.LINEARISED), STD, [0.0])


class TestCmaEs:
    def test_default_population(self):
        assert default_population(1) == 4
        assert default_population(4) == 8

    def test_finds_box_interior_maximum(self):
        target = np.array([0.3, -1.2, 0.7])
        res = cma_es_maximize(lambda xs: -((xs - target) ** 2).sum(1), -np.full(3, 3.0), np.full(3, 3.0),
                              np.random.default_rng(0), generations=150)
        np.testing.assert_allclose(res.best_x, target, atol=1e-3)

    def test_stays_in_box(self):
        res = cma_es_maximize(lambda xs: xs.sum(1), np.zeros(2), np.ones(2), np.random.default_rng(1))
        assert np.all(res.xs >= 0) and np.all(res.xs <= 1)
        np.testing.assert_allclose(res.best_x, [1, 1], atol=1e-6)


class TestMaximize:
    cfg = AcquisitionConfig(generations=40)

    def test_unimodal(self):
        prior = GaussianPrior(np.array([0.4, -0.2]), np.array([1.0, 4.0]))
        x = maximize_acquisition(lambda x: -float(((x - prior.mean) ** 2).sum()), prior, self.cfg)
        assert np.all(np.abs(x - prior.mean) <= 1e-3 * prior.std)

    def test_bimodal_deterministic(self):
        f = lambda xs: -np.minimum((xs[:, 0] - 1) ** 2, (xs[:, 0] + 1) ** 2)  # noqa: E731
        a = maximize_acquisition(f, STD, self.cfg, batched=True)
        b = maximize_acquisition(f, STD, self.cfg, batched=True)
        assert np.array_equal(a, b)
        assert min(abs(a[0] - 1), abs(a[0] + 1)) < 1e-3

    def test_matches_dense_grid_after_one_central_sample(self):
        model = build_model(np.zeros((1, 1)), [1 / math.sqrt(2 * math.pi)], UNIT, Flavour.LINEARISED)
        acq = lambda xs: acquisition_values(model, STD, xs)  # noqa: E731
        grid = np.linspace(-5, 5, 10_000)[:, None]
        best = acq(grid).max()
        x = maximize_acquisition(acq, STD, self.cfg, batched=True)
        assert acq(x[None, :])[0] >= 0.99 * best

    def test_skips_existing_points(self):
        prior = STD
        f = lambda xs: -(xs[:, 0] ** 2)  # noqa: E731
        x = maximize_acquisition(f, prior, self.cfg, existing=np.zeros((1, 1)), batched=True)
        assert abs(x[0]) > 1e-8

    def test_degenerate_surface(self):
        with pytest.raises(DegenerateAcquisitionError):
            maximize_acquisition(lambda xs: np.full(len(xs), np.nan), STD, self.cfg, batched=True)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AcquisitionConfig(population=2)
        with pytest.raises(ValueError):
            AcquisitionConfig(generations=5)
        with pytest.raises(ValueError):
            AcquisitionConfig(search_box_sigmas=20)


def test_initial_design():
    prior = GaussianPrior(np.array([1.0, -1.0]), np.array([4.0, 0.25]))
    np.testing.assert_allclose(initial_design(prior), [[1, -1], [3, -1], [1, -0.5]])


class TestRunWsabi:
    def test_conjugate_convergence(self):
        tr = run_wsabi(conjugate(), STD, "L", Budget(max_samples=30), seed=0)
        z = 1 / (2 * math.sqrt(math.pi))
        assert abs(tr.final.mean - z) / z <= 1e-3
        assert tr.method == "wsabi-l" and len(tr.records) == 30

    def test_constant_likelihood(self):
        c = 2.5
        lik = Likelihood(1, fn=lambda xs: np.full(len(xs), c), batch=True)
        tr = run_wsabi(lik, STD, "M", Budget(max_samples=10), seed=0)
        assert abs(tr.final.mean - c) <= 1e-3 * c

    def test_single_sample_budget(self):
        tr = run_wsabi(conjugate(), STD, "L", Budget(max_samples=1), seed=0)
        assert [r.n_samples for r in tr.records] == [1]
        np.testing.assert_array_equal(tr.locations[0], STD.mean)

    def test_likelihood_failure_keeps_partial_trace(self):
        calls = {"n": 0}

        def fn(x):
            calls["n"] += 1
            if calls["n"] > 3:
                raise RuntimeError("simulator crashed")
            return math.exp(-0.5 * float(x[0]) ** 2)

        tr = run_wsabi(Likelihood(1, fn=fn), STD, "L", Budget(max_samples=10), seed=0)
        assert len(tr.records) == 3
        assert "likelihood-error" in tr.flags and "crashed" in tr.error

    def test_trace_monotone_and_deterministic(self):
        cfg = WsabiConfig(acquisition=AcquisitionConfig(generations=15))
        a = run_wsabi(conjugate(2), GaussianPrior.isotropic(2), "M", Budget(max_samples=8), cfg, seed=3)
        b = run_wsabi(conjugate(2), GaussianPrior.isotropic(2), "M", Budget(max_samples=8), cfg, seed=3)
        n, t, m, v = a.as_arrays()
        assert np.all(np.diff(n) > 0) and np.all(np.diff(t) >= 0)
        np.testing.assert_array_equal(m, b.as_arrays()[2])
        np.testing.assert_array_equal(np.array(a.locations), np.array(b.locations))

    def test_argmax_invariant_to_likelihood_scaling(self):
        # warped values scale by sqrt(c), so the fixed output scale does too
        c = 4.0
        fixed = KernelParams(0.3, np.array([0.8]))
        scaled = KernelParams(0.3 * math.sqrt(c), fixed.length_scales)
        base_lik = Likelihood(1, fn=lambda xs: np.exp(-0.5 * (xs[:, 0] - 0.5) ** 2), batch=True)
        big_lik = Likelihood(1, fn=lambda xs: c * np.exp(-0.5 * (xs[:, 0] - 0.5) ** 2), batch=True)
        a = run_wsabi(base_lik, STD, "L", Budget(max_samples=8), WsabiConfig(fixed_params=fixed), seed=1)
        b = run_wsabi(big_lik, STD, "L", Budget(max_samples=8), WsabiConfig(fixed_params=scaled), seed=1)
        np.testing.assert_allclose(np.array(a.locations), np.array(b.locations), atol=1e-6)

    def test_error_decreases_on_most_seeds(self):
        z = 1 / (2 * math.sqrt(math.pi))
        cfg = WsabiConfig(acquisition=AcquisitionConfig(generations=15))
        ok = 0
        for seed in range(5):
            tr = run_wsabi(conjugate(), STD, "L", Budget(max_samples=12), cfg, seed=seed)
            errs = np.abs(tr.as_arrays()[2] - z)
            ok += errs[-1] <= errs[0]
        assert ok / 5 >= 0.9

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            run_wsabi(conjugate(2), STD, "L", Budget(max_samples=2))
