import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wsabi.gp import (
    Dataset, IllConditionedKernelError, KernelParams, fit_posterior, kernel_eval, kernel_matrix,
    lml_gradient, log_marginal_likelihood, optimize_hyperparams, posterior_cov, posterior_mean,
)

from conftest import random_locations, random_params

UNIT = KernelParams(1.0, np.ones(1))


class TestKernel:
    def test_zero_distance_gives_output_variance(self):
        assert kernel_eval(KernelParams(2.0, np.array([0.3])), [1.5], [1.5]) == 4.0

    def test_unit_distance(self):
        assert kernel_eval(UNIT, [0.0], [1.0]) == pytest.approx(0.606531, abs=1e-6)

    def test_per_dimension_scales(self):
        p = KernelParams(1.0, np.array([1.0, 2.0]))
        assert kernel_eval(p, [0, 0], [1, 2]) == pytest.approx(0.367879, abs=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kernel_eval(UNIT, [0.0, 1.0], [0.0, 1.0])
        with pytest.raises(ValueError):
            kernel_matrix(UNIT, np.zeros((2, 2)), np.zeros((1, 2)))

    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.lists(st.floats(-5, 5), min_size=2, max_size=2),
           st.floats(0.1, 3), st.floats(0.1, 3))
    def test_exact_symmetry(self, x, y, lam, ls):
        p = KernelParams(lam, np.array([ls, 2 * ls]))
        assert kernel_eval(p, x, y) == kernel_eval(p, y, x)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 8), st.integers(1, 3))
    def test_gram_is_psd(self, seed, n, dim):
        rng = np.random.default_rng(seed)
        p = random_params(rng, dim, ls=(0.1, 3.0))
        X = rng.normal(size=(n, dim))
        K = kernel_matrix(p, X, X)
        assert np.linalg.eigvalsh(K).min() >= -1e-9 * p.variance


class TestPosterior:
    def test_single_datum_weight(self):
        gp = fit_posterior(Dataset(np.zeros((1, 1)), [3.0]), KernelParams(2.0, np.ones(1)), base_jitter=0.0)
        assert gp.weights[0] == pytest.approx(3.0 / 4.0)

    def test_distant_pair_weights(self):
        p = KernelParams(1.5, np.array([0.2]))
        gp = fit_posterior(Dataset(np.array([[0.0], [50.0]]), [2.0, 2.0]), p, base_jitter=0.0)
        np.testing.assert_allclose(gp.weights, np.array([2.0, 2.0]) / p.variance, rtol=1e-12)

    def test_duplicate_locations_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            Dataset(np.array([[0.0], [0.0]]), [1.0, 2.0])

    def test_mean_examples(self):
        gp = fit_posterior(Dataset(np.zeros((1, 1)), [1.0]), UNIT, base_jitter=0.0)
        assert posterior_mean(gp, [1.0]) == pytest.approx(0.606531, abs=1e-6)
        assert posterior_mean(gp, [0.0]) == pytest.approx(1.0, abs=1e-12)
        assert abs(posterior_mean(gp, [40.0])) < 1e-9

    def test_cov_examples(self):
        gp = fit_posterior(Dataset(np.zeros((1, 1)), [1.0]), UNIT, base_jitter=0.0)
        assert posterior_cov(gp, [1.0], [1.0]) == pytest.approx(0.632121, abs=1e-6)
        assert abs(posterior_cov(gp, [0.0], [0.0])) < 1e-9
        assert posterior_cov(gp, [40.0], [40.0]) == pytest.approx(1.0, abs=1e-9)

    def test_interpolation_at_training_inputs(self, rng):
        for dim in (1, 2, 3):
            X = random_locations(rng, 8, dim, spread=4.0, min_gap=0.5)
            v = rng.normal(size=8)
            gp = fit_posterior(Dataset(X, v), random_params(rng, dim), base_jitter=1e-10)
            np.testing.assert_allclose(gp.mean(X), v, rtol=1e-6, atol=1e-6 * np.abs(v).max())

    def test_raw_variance_bounded_below(self, rng):
        for _ in range(20):
            dim = int(rng.integers(1, 3))
            X = random_locations(rng, 6, dim)
            gp = fit_posterior(Dataset(X, rng.normal(size=6)), random_params(rng, dim))
            probes = np.concatenate([X, rng.uniform(-3, 3, (200, dim))])
            assert gp.raw_var(probes).min() >= -1e-10
            assert gp.var(probes).min() >= 0.0

    def test_jitter_escalates_from_zero(self):
        # two nearly coincident points make K singular to machine precision
        X = np.array([[0.0], [1e-9]])
        gp = fit_posterior(Dataset(X, [1.0, 1.0]), UNIT, base_jitter=0.0)
        assert gp.jitter >= 1e-10

    def test_ill_conditioned_error_carries_jitter(self):
        from wsabi.gp import _jittered_cholesky

        indefinite = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(IllConditionedKernelError) as info:
            _jittered_cholesky(indefinite, 1.0, 0.0)
        assert info.value.jitter == pytest.approx(1e-4)


class TestMarginalLikelihood:
    def test_zero_value(self):
        d = Dataset(np.zeros((1, 1)), [0.0])
        assert log_marginal_likelihood(d, UNIT, jitter=0.0) == pytest.approx(-0.918939, abs=1e-6)

    def test_unit_value(self):
        d = Dataset(np.zeros((1, 1)), [1.0])
        assert log_marginal_likelihood(d, UNIT, jitter=0.0) == pytest.approx(-1.418939, abs=1e-6)

    def test_shrinking_values_increase_fit(self):
        X = np.array([[0.0], [1.0], [2.5]])
        vals = [log_marginal_likelihood(Dataset(X, s * np.array([1.0, -0.5, 2.0])), UNIT) for s in (1, 0.5, 0.1, 0)]
        assert np.all(np.diff(vals) > 0)

    def test_gradient_matches_finite_differences(self, rng):
        for dim in (1, 2, 3):
            X = random_locations(rng, 7, dim)
            d = Dataset(X, rng.normal(size=7))
            p = random_params(rng, dim)
            theta = p.to_log()
            g = lml_gradient(d, p, jitter=1e-8)
            h = 1e-5
            for i in range(theta.size):
                e = np.zeros_like(theta)
                e[i] = h
                fd = (log_marginal_likelihood(d, KernelParams.from_log(theta + e), jitter=1e-8)
                      - log_marginal_likelihood(d, KernelParams.from_log(theta - e), jitter=1e-8)) / (2 * h)
                assert g[i] == pytest.approx(fd, rel=1e-4, abs=1e-7)


class TestOptimize:
    def test_never_worse_than_init(self, rng):
        X = random_locations(rng, 10, 2)
        d = Dataset(X, np.sin(X).sum(1))
        init = KernelParams(1.0, np.ones(2))
        res = optimize_hyperparams(d, init, restarts=3, seed=1)
        assert res.log_marginal >= log_marginal_likelihood(d, init) - 1e-9
        assert not res.failed

    def test_constant_zero_data_shrinks_output_scale(self):
        X = np.linspace(-2, 2, 6)[:, None]
        d = Dataset(X, np.zeros(6))
        init = KernelParams(1.0, np.ones(1))
        res = optimize_hyperparams(d, init, restarts=2)
        assert res.params.output_scale < 0.1 * init.output_scale
        assert res.log_marginal >= log_marginal_likelihood(d, init)

    def test_fixed_point_at_optimum(self, rng):
        X = random_locations(rng, 12, 1, spread=4.0)
        d = Dataset(X, np.cos(2 * X[:, 0]))
        first = optimize_hyperparams(d, KernelParams(1.0, np.ones(1)), restarts=3)
        again = optimize_hyperparams(d, first.params, restarts=1)
        np.testing.assert_allclose(again.params.to_log(), first.params.to_log(), atol=1e-3)

    def test_recovers_length_scale_of_gp_draw(self):
        truth = KernelParams(1.0, np.array([0.5]))
        fitted = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            X = np.sort(rng.uniform(-3, 3, 20))[:, None]
            K = kernel_matrix(truth, X, X) + 1e-10 * np.eye(20)
            v = np.linalg.cholesky(K) @ rng.standard_normal(20)
            res = optimize_hyperparams(Dataset(X, v), KernelParams(1.0, np.ones(1)), restarts=3, seed=seed)
            fitted.append(res.params.length_scales[0])
        assert 0.25 <= np.median(fitted) <= 1.0

    def test_all_starts_failing_returns_init_flagged(self, monkeypatch):
        import wsabi.gp as gp_mod

        def boom(*a, **k):
            raise np.linalg.LinAlgError("nope")

        monkeypatch.setattr(gp_mod, "_lml_and_grad", boom)
        d = Dataset(np.array([[0.0], [1.0]]), [1.0, 2.0])
        init = KernelParams(1.0, np.ones(1))
        res = optimize_hyperparams(d, init, restarts=2)
        assert res.failed and res.params is init
