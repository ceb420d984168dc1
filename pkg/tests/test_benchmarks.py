import json
import math

import numpy as np
import pytest

from wsabi.benchmarks import (
    CsvParseError, MixtureLikelihood, RegressionEvidenceProblem, analytic_mixture_evidence, analytic_truth,
    build_benchmark, gen_synthetic_mixture, load_registry, load_regression_problem, mixture_eval,
    regression_log_likelihood, regression_log_likelihood_batch,
)
from wsabi.oracle import grid_integral
from wsabi.quadrature import GaussianPrior


class TestGenerator:
    def test_component_count_is_uniform(self):
        ks = np.array([gen_synthetic_mixture(1, s).n_components for s in range(10_000)])
        freq = np.bincount(ks, minlength=15)[5:15] / ks.size
        assert set(np.unique(ks)) == set(range(5, 15))
        assert np.all(np.abs(freq - 0.1) <= 0.01)

    def test_weights_and_boxes(self):
        for s in range(10_000):
            mix = gen_synthetic_mixture(2, s)
            assert np.all(mix.weights > 0) and abs(mix.weights.sum() - 1) < 1e-12
            assert np.all(np.abs(mix.means) <= 0.5 * mix.domain_half_width)
            sd = np.sqrt(mix.variances) / (mix.domain_half_width / 100)
            assert np.all((np.round(sd) >= 21) & (np.round(sd) <= 29))

    def test_deterministic(self):
        a, b = gen_synthetic_mixture(4, 11), gen_synthetic_mixture(4, 11)
        np.testing.assert_array_equal(a.means, b.means)
        np.testing.assert_array_equal(a.weights, b.weights)


class TestAnalyticEvidence:
    def test_single_component(self):
        mix = MixtureLikelihood(np.ones(1), np.zeros((1, 1)), np.ones((1, 1)), 5.0)
        z = analytic_mixture_evidence(mix, GaussianPrior.isotropic(1))
        assert z == pytest.approx(1 / (2 * math.sqrt(math.pi)), rel=1e-14)

    def test_split_component(self):
        one = MixtureLikelihood(np.ones(1), np.array([[0.3]]), np.array([[0.5]]), 5.0)
        two = MixtureLikelihood(np.full(2, 0.5), np.array([[0.3], [0.3]]), np.full((2, 1), 0.5), 5.0)
        prior = GaussianPrior.isotropic(1)
        assert analytic_mixture_evidence(two, prior) == pytest.approx(analytic_mixture_evidence(one, prior), rel=1e-14)

    def test_mirror_symmetry(self):
        mix = gen_synthetic_mixture(3, 2)
        mirrored = MixtureLikelihood(mix.weights, -mix.means, mix.variances, mix.domain_half_width)
        prior = mix.prior()
        assert analytic_mixture_evidence(mirrored, prior) == pytest.approx(analytic_mixture_evidence(mix, prior),
                                                                            rel=1e-13)

    def test_isolated_peak(self):
        mix = MixtureLikelihood(np.array([0.3, 0.7]), np.array([[-40.0, 0.0], [40.0, 0.0]]),
                                np.array([[0.5, 2.0], [1.0, 1.0]]), 50.0)
        peak = 0.3 / (2 * math.pi) / math.sqrt(0.5 * 2.0)
        assert mixture_eval(mix, [-40.0, 0.0]) == pytest.approx(peak, rel=1e-12)

    @pytest.mark.parametrize("dim", [1, 2])
    def test_matches_grid_oracle(self, dim):
        for seed in range(10):
            mix = gen_synthetic_mixture(dim, seed)
            prior = mix.prior()
            grid = grid_integral(lambda x, m=mix: np.exp(m.log_eval(x)), prior)
            assert analytic_mixture_evidence(mix, prior) == pytest.approx(grid, rel=1e-8)


def _write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestRegression:
    def test_shape_contract(self, tmp_path, rng):
        rows = "\n".join(",".join(f"{v:.6f}" for v in rng.normal(size=3)) for _ in range(10))
        prob = load_regression_problem(_write(tmp_path, "a,b,y\n" + rows))
        assert prob.inputs.shape == (10, 2) and prob.hyper_dim == 4
        assert abs(prob.targets.mean()) < 1e-12
        headerless = load_regression_problem(_write(tmp_path, rows, "h.csv"), header=False)
        np.testing.assert_array_equal(headerless.inputs, prob.inputs)

    def test_empty_file(self, tmp_path):
        with pytest.raises(CsvParseError):
            load_regression_problem(_write(tmp_path, ""))

    def test_malformed_row_reports_line(self, tmp_path):
        with pytest.raises(CsvParseError, match=":3:"):
            load_regression_problem(_write(tmp_path, "x,y\n1,2\n3,abc\n4,5\n"))

    def test_ragged_row(self, tmp_path):
        with pytest.raises(CsvParseError):
            load_regression_problem(_write(tmp_path, "1,2\n3,4,5\n"))

    def test_too_few_rows(self, tmp_path):
        with pytest.raises(ValueError):
            load_regression_problem(_write(tmp_path, "x,y\n1,2\n"))

    def test_two_point_formula(self):
        # all log hypers 0: K = exp(-d^2/2) + I on two points
        x = np.array([[-1.0], [1.0]])
        y = np.array([-1.0, 1.0])
        prob = RegressionEvidenceProblem(x, y, GaussianPrior.isotropic(3, 4.0))
        k = math.exp(-2.0)
        K = np.array([[2.0, k], [k, 2.0]])
        expected = -0.5 * y @ np.linalg.solve(K, y) - 0.5 * math.log(np.linalg.det(K)) - math.log(2 * math.pi)
        assert regression_log_likelihood(prob, np.zeros(3)) == pytest.approx(expected, rel=1e-12)

    def test_noise_derivative(self, rng):
        prob = load_regression_problem(_packaged_csv())
        h = rng.normal(0, 0.5, prob.hyper_dim)
        eps = 1e-5
        up, dn = h.copy(), h.copy()
        up[-1] += eps
        dn[-1] -= eps
        fd = (regression_log_likelihood(prob, up) - regression_log_likelihood(prob, dn)) / (2 * eps)
        x, y = prob.inputs, prob.targets
        d = (x[:, None, :] - x[None, :, :]) / np.exp(h[1:-1])
        noise = math.exp(h[-1])
        K = math.exp(2 * h[0]) * np.exp(-0.5 * (d * d).sum(-1)) + noise * np.eye(len(y))
        a = np.linalg.solve(K, y)
        analytic = 0.5 * noise * (a @ a - np.trace(np.linalg.inv(K)))
        assert fd == pytest.approx(analytic, rel=1e-4)

    def test_non_finite_hypers(self):
        prob = load_regression_problem(_packaged_csv())
        with pytest.raises(ValueError):
            regression_log_likelihood(prob, [0.0, np.nan, 0.0, 0.0])

    def test_batch_matches_scalar(self, rng):
        prob = load_regression_problem(_packaged_csv())
        H = rng.normal(0, 2, (20, prob.hyper_dim))
        np.testing.assert_allclose(regression_log_likelihood_batch(prob, H),
                                   [regression_log_likelihood(prob, h) for h in H], rtol=1e-9)

    def test_shifted_likelihood_positive_and_finite(self, rng):
        bench = build_benchmark("regression-small")
        lik = bench.make_likelihood()
        sd = bench.prior.std
        H = bench.prior.mean + rng.uniform(-6, 6, (500, bench.dim)) * sd
        vals = lik.evaluate_batch(H)
        assert np.all(np.isfinite(vals)) and np.all(vals > 0)


def _packaged_csv():
    from wsabi.benchmarks import default_registry_path

    return default_registry_path().parent / "regression_small.csv"


class TestRegistry:
    def test_packaged_benchmarks(self):
        reg = load_registry()
        assert {"conjugate-1d", "mixture-4d", "regression-small"} <= set(reg)
        for key in reg:
            b = build_benchmark(key, reg)
            assert b.dim == reg[key]["dim"] == b.prior.dim
            assert b.truth_log_z is not None

    def test_analytic_truths_match_registry(self):
        for key in ("conjugate-1d", "mixture-4d"):
            b = build_benchmark(key)
            assert analytic_truth(b) == pytest.approx(b.truth_log_z, rel=1e-12)
        assert build_benchmark("conjugate-1d").truth_log_z == pytest.approx(-1.265512, abs=1e-6)
        assert analytic_truth(build_benchmark("regression-small")) is None

    def test_unknown_id(self):
        with pytest.raises(KeyError):
            build_benchmark("nope")

    def test_missing_field_rejected(self, tmp_path):
        p = tmp_path / "reg.json"
        p.write_text(json.dumps({"x": {"dim": 1, "seed": 0, "kind": "conjugate", "ground_truth_log_z": 0.0}}))
        with pytest.raises(ValueError, match="provenance"):
            load_registry(p)
