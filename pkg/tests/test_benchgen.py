import numpy as np
import pytest
from scipy.optimize import nnls
from scipy.special import expit

from otss.benchgen import (
    BenchConfig, CalibrationError, MatchedKTruth, TwoExpertTruth, calibrate_temperature,
    generate_benchmark, load_benchmark, make_truth, mean_top_prob, sample_context,
    sample_contexts, save_benchmark, simulate_outcome, stream, true_weight_matched_k,
    true_weight_two_expert,
)
from otss.core import ContextVector


def two_expert(tau=1.2, J=2, d_sig=1):
    u = np.zeros(d_sig)
    u[0] = 1.0
    b1, b2 = np.eye(J)[0], np.eye(J)[1]
    return TwoExpertTruth(b1, b2, tau, u, np.zeros(d_sig + 1), d_sig)


class TestTwoExpert:
    def test_tau_zero_is_midpoint(self):
        t = two_expert(tau=0.0)
        w = true_weight_two_expert(t, np.array([3.7]))
        np.testing.assert_allclose(w, [0.5, 0.5])

    def test_worked_value(self):
        w = true_weight_two_expert(two_expert(1.2), ContextVector(np.array([1.0]), np.zeros(0)))
        np.testing.assert_allclose(w, [expit(1.2), 1 - expit(1.2)], rtol=1e-12)
        np.testing.assert_allclose(w[0], 0.7685, atol=1e-4)

    def test_saturation(self):
        w = true_weight_two_expert(two_expert(200.0), np.array([1.0]))
        np.testing.assert_allclose(w, [1.0, 0.0], atol=1e-12)

    def test_rejects_non_unit_direction(self):
        with pytest.raises(ValueError):
            TwoExpertTruth(np.ones(2), np.zeros(2), 1.0, np.array([2.0]), np.zeros(2), 1)

    def test_panel_a_lambda_statistics(self):
        cfg = BenchConfig(seed=3)
        truth = make_truth(cfg)
        lam = truth.lam(sample_contexts(cfg, stream(0, "test"), 100_000))
        assert lam.var() > 0
        assert abs(lam.mean() - 0.5) < 0.05


class TestMatchedK:
    def make(self, mode, K=3, seed=0):
        return make_truth(BenchConfig(family="matched_k", mode=mode, K=K, rand_level=0.4, seed=seed))

    def test_hard_truth_equals_an_expert(self):
        truth = self.make("hard")
        X = sample_contexts(BenchConfig(), stream(1, "x"), 500)
        W = truth.weights(X)
        d = ((W[:, None, :] - truth.experts[None]) ** 2).sum(axis=2).min(axis=1)
        assert np.all(d == 0.0)

    def test_soft_truth_in_convex_hull(self):
        truth = self.make("soft", K=4)
        X = sample_contexts(BenchConfig(), stream(2, "x"), 200)
        W = truth.weights(X)
        # recover simplex coefficients (K <= J + 1) by nonnegative least squares with a sum row
        A = np.vstack([truth.experts.T, 1e3 * np.ones(truth.K)])
        for w in W:
            coef, res = nnls(A, np.r_[w, 1e3])
            assert res < 1e-8
            np.testing.assert_allclose(coef.sum(), 1.0, atol=1e-9)
        assert np.all(W.min(axis=0) >= truth.experts.min(axis=0) - 1e-12)
        assert np.all(W.max(axis=0) <= truth.experts.max(axis=0) + 1e-12)

    def test_low_temperature_limit_is_hard(self):
        soft = self.make("soft")
        X = sample_contexts(BenchConfig(), stream(3, "x"), 300)
        hard_w = MatchedKTruth(soft.experts, "hard", soft.gate_directions, 1.0, 0.4, soft.baseline_coef, soft.d_sig).weights(X)
        np.testing.assert_allclose(soft.soft_gate(X, 1e-6) @ soft.experts, hard_w, atol=1e-9)

    def test_single_expert(self):
        truth = self.make("soft", K=1)
        w = true_weight_matched_k(truth, np.random.default_rng(0).standard_normal(12))
        np.testing.assert_array_equal(w, truth.experts[0])

    def test_equal_scores_average(self):
        truth = MatchedKTruth(np.array([[1.0, 0.0], [0.0, 1.0]]), "soft", np.zeros((2, 1)), 0.7, 0.0, np.zeros(2), 1)
        np.testing.assert_allclose(truth.weights(np.array([[0.3]]))[0], [0.5, 0.5])

    def test_hard_and_soft_share_geometry(self):
        h, s = self.make("hard", seed=5), self.make("soft", seed=5)
        np.testing.assert_array_equal(h.experts, s.experts)
        np.testing.assert_array_equal(h.gate_directions, s.gate_directions)


class TestCalibration:
    def test_hits_target_on_fresh_sample(self):
        truth = make_truth(BenchConfig(family="matched_k", K=2, rand_level=0.0, target_top_prob=0.8))
        fresh = sample_contexts(BenchConfig(), stream(9, "fresh"), 200_000)
        assert 0.79 <= mean_top_prob(truth, fresh, truth.temperature) <= 0.81

    def test_monotone_in_target(self):
        truth = make_truth(BenchConfig(family="matched_k", K=3, rand_level=0.4))
        X = sample_contexts(BenchConfig(), stream(4, "c"), 5000)
        temps = [calibrate_temperature(truth, X, p) for p in (0.5, 0.65, 0.8, 0.95)]
        assert all(a > b for a, b in zip(temps, temps[1:]))

    def test_unreachable_target(self):
        truth = make_truth(BenchConfig(family="matched_k", K=3))
        X = sample_contexts(BenchConfig(), stream(4, "c"), 5000)
        with pytest.raises(CalibrationError):
            calibrate_temperature(truth, X, 0.2)

    def test_needs_enough_contexts(self):
        truth = make_truth(BenchConfig(family="matched_k", K=3))
        with pytest.raises(ValueError):
            calibrate_temperature(truth, np.zeros((10, 12)), 0.7)


class TestSampling:
    def test_nuisance_scale_zero(self):
        x = sample_context(BenchConfig(nuisance_scale=0.0), stream(0, "x"))
        assert np.all(x.nuisance == 0.0)

    def test_signal_variance(self):
        X = sample_contexts(BenchConfig(), stream(0, "var"), 100_000)
        np.testing.assert_allclose(X[:, :4].var(axis=0), 1.0, rtol=0.03)

    def test_fair_coin_outcomes(self):
        truth = two_expert(0.0)
        r = stream(0, "coin")
        z = np.zeros(2)
        draws = [simulate_outcome(truth, np.array([0.0]), z, r) for _ in range(100_000)]
        assert 0.49 <= np.mean(draws) <= 0.51

    def test_saturated_baseline(self):
        t = two_expert()
        t.baseline_coef = np.array([-1e6, 0.0])
        r = stream(0, "sat")
        assert sum(simulate_outcome(t, np.array([0.3]), np.ones(2), r) for _ in range(1000)) == 0


class TestBenchmark:
    def test_deterministic(self):
        a = generate_benchmark(BenchConfig(n_train=400, n_total=700, seed=11))
        b = generate_benchmark(BenchConfig(n_train=400, n_total=700, seed=11))
        np.testing.assert_array_equal(a.train.X, b.train.X)
        np.testing.assert_array_equal(a.train.y, b.train.y)
        np.testing.assert_array_equal(a.W_eval, b.W_eval)

    def test_prefix_property(self):
        a = generate_benchmark(BenchConfig(n_train=500, n_total=1000, seed=2))
        b = generate_benchmark(BenchConfig(n_train=1000, n_total=1500, seed=2))
        np.testing.assert_array_equal(a.pool.X, b.pool.X[:500])
        np.testing.assert_array_equal(a.pool.decisions, b.pool.decisions[:500])
        np.testing.assert_array_equal(a.pool.y, b.pool.y[:500])

    def test_eval_fixed_across_n_train(self):
        a = generate_benchmark(BenchConfig(n_train=500, n_total=3000, n_eval=1000))
        b = generate_benchmark(BenchConfig(n_train=2000, n_total=3000, n_eval=1000))
        np.testing.assert_array_equal(a.X_eval, b.X_eval)

    def test_validation_split_size(self):
        b = generate_benchmark(BenchConfig(n_train=1000, n_total=1500))
        assert b.val.n == 200 and b.train.n == 800
        b = generate_benchmark(BenchConfig(n_train=300, n_total=600))
        assert b.val.n == 100

    def test_config_errors(self):
        with pytest.raises(ValueError):
            BenchConfig(n_train=5000, n_total=4000)
        with pytest.raises(ValueError):
            BenchConfig(family="nope")

    def test_round_trip_is_lossless(self, tmp_path):
        for family in ("two_expert", "matched_k"):
            b = generate_benchmark(BenchConfig(family=family, K=3, n_train=300, n_total=500, seed=4))
            save_benchmark(b, tmp_path / f"{family}.json")
            c = load_benchmark(tmp_path / f"{family}.json")
            np.testing.assert_array_equal(b.train.X, c.train.X)
            np.testing.assert_array_equal(b.val.y, c.val.y)
            np.testing.assert_array_equal(b.library.factors, c.library.factors)
            np.testing.assert_array_equal(b.W_eval, c.W_eval)
            np.testing.assert_array_equal(b.truth.weights(b.X_eval), c.truth.weights(c.X_eval))
