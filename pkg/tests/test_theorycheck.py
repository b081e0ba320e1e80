import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit, logit

from otss.benchgen import TwoExpertTruth
from otss.core import DecisionLibrary, regret_batch
from otss.theorycheck import (
    FloorParams, RateSweepConfig, aligned_hard_upper, best_constant_error, best_step_fit,
    best_step_fits, expert_gate_identity_check, floor_lower_bound, hard_partition_decomposition_check,
    hard_rate_sweep, linear_profile, localized_regret_bound, pooled_oracle_error,
    pooled_oracle_error_quadrature, random_transfer_triples, rate_problem, regret_transfer_audit,
    sigmoid_profile, soft_rate_sweep, step_fit_error, verify_floor, write_report,
)


def truth_1d(tau, J=3, seed=0):
    r = np.random.default_rng(seed)
    return TwoExpertTruth(r.standard_normal(J), r.standard_normal(J), tau, np.array([1.0]), np.zeros(2), 1)


class TestFloorFormula:
    def test_worked_value(self):
        assert floor_lower_bound(FloorParams(4.0, 1.0, 0.0, 1.0, 1)) == pytest.approx(1 / 3, rel=1e-15)

    def test_zero_kappa(self):
        assert floor_lower_bound(FloorParams(2.0, 0.0, 0.2, 0.7, 3)) == 0.0

    def test_vanishes_in_m(self):
        vals = [floor_lower_bound(FloorParams(1.0, 1.0, M=M)) for M in (1, 10, 100, 1000)]
        assert np.all(np.diff(vals) < 0) and vals[-1] < 1e-6

    @pytest.mark.parametrize("kw", [dict(delta_beta_sq=0.0, kappa=1.0), dict(delta_beta_sq=1.0, kappa=-1.0),
                                    dict(delta_beta_sq=1.0, kappa=1.0, a=0.6, b=0.4), dict(delta_beta_sq=1.0, kappa=1.0, M=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            FloorParams(**kw)


class TestStepFit:
    def test_constant(self):
        assert best_step_fit(lambda t: np.full_like(t, 0.3), 5) == pytest.approx(0.0, abs=1e-12)

    def test_linear_single_interval(self):
        assert abs(best_step_fit(lambda t: t, 1) - 1 / 12) < 1e-4

    def test_linear_four_intervals(self):
        np.testing.assert_allclose(best_step_fit(lambda t: t, 4), 1 / (12 * 16), rtol=1e-2)

    def test_linear_matches_equal_cells_tightly(self):
        # M dividing G puts the equal cells on the grid; other M carry O(1/G^2) grid error
        errs = best_step_fits(lambda t: t, 8)
        M = np.arange(1, 9)
        np.testing.assert_allclose(errs, 1 / (12 * M**2), rtol=1e-6)
        np.testing.assert_allclose(errs[[0, 1, 3, 4, 7]], 1 / (12 * M[[0, 1, 3, 4, 7]] ** 2), rtol=1e-9)

    def test_monotone_in_m(self):
        errs = best_step_fits(lambda t: np.sin(7 * t) + t * t, 20, G=2000)
        assert np.all(np.diff(errs) <= 1e-15)

    def test_beats_random_partitions(self):
        rng = np.random.default_rng(3)
        f = lambda t: expit(6 * (t - 0.4)) + 0.3 * np.cos(11 * t)  # noqa: E731
        G = 2000
        for M in (2, 3, 5):
            dp = best_step_fit(f, M, G)
            for _ in range(100):
                cuts = rng.choice(np.arange(1, G), size=M - 1, replace=False)
                assert dp <= step_fit_error(f, cuts, G) + 1e-15

    def test_brute_force_small_grid(self):
        # exhaustive search over all 2-cut partitions of a 40-cell sampled function
        rng = np.random.default_rng(1)
        v = rng.standard_normal(40)
        best = min(step_fit_error(v, [i, j], 40) for i in range(1, 40) for j in range(i + 1, 40))
        assert best_step_fit(v, 3, 40) == pytest.approx(best, rel=1e-12)

    def test_grid_guards(self):
        with pytest.raises(ValueError):
            best_step_fit(lambda t: t, 50, G=100)
        with pytest.raises(ValueError):
            best_step_fit(lambda t: t, 0)
        with pytest.raises(ValueError):
            best_step_fits(np.zeros(10), 1, G=20)


class TestVerifyFloor:
    def test_linear_sandwich_within_factor_three(self):
        f, kappa, L = linear_profile()
        recs = verify_floor(f, kappa, L, 2.0, [1, 2, 4, 8, 16], label="linear")
        assert all(r.passed for r in recs)
        lower = [r for r in recs if r.name.startswith("floor_lower")]
        ratios = np.array([r.realized / r.bound for r in lower])
        assert np.all((ratios >= 1 - 1e-9) & (ratios <= 3))

    def test_sigmoid_profile(self):
        f, kappa, L = sigmoid_profile(1.2, 0.0, 1.0)
        np.testing.assert_allclose(kappa, 1.2 * expit(1.2) * (1 - expit(1.2)))
        assert all(r.passed for r in verify_floor(f, kappa, L, 1.5, [1, 2, 4, 8]))

    def test_flat_profile_trivial(self):
        recs = verify_floor(lambda t: np.full_like(t, 0.5), 0.0, 0.0, 1.0, [1, 3])
        assert all(r.passed for r in recs)

    def test_overstated_kappa_fails(self):
        f, kappa, L = linear_profile()
        recs = verify_floor(f, kappa, L, 1.0, [2], kappa_scale=1.5)
        assert not next(r for r in recs if r.name.startswith("floor_lower")).passed


class TestPooledAndAligned:
    def test_tau_zero(self):
        t = truth_1d(0.0)
        X = np.random.default_rng(0).standard_normal((1000, 1))
        assert pooled_oracle_error(t, X) == pytest.approx(0.0, abs=1e-30)
        assert pooled_oracle_error_quadrature(t) == pytest.approx(0.0, abs=1e-15)

    def test_uniform_lambda(self):
        t = truth_1d(2.0)
        u = (np.arange(200_000) + 0.5) / 200_000
        X = (logit(u) / t.tau)[:, None]
        dsq = np.sum((t.beta1 - t.beta2) ** 2)
        np.testing.assert_allclose(pooled_oracle_error(t, X), dsq / 12, rtol=1e-6)

    def test_formula_matches_projection(self):
        t = truth_1d(1.2, J=4, seed=2)
        X = np.random.default_rng(5).standard_normal((200_000, 1))
        emp = best_constant_error(t.weights(X))
        np.testing.assert_allclose(pooled_oracle_error(t, X), emp, rtol=0.02)
        np.testing.assert_allclose(pooled_oracle_error_quadrature(t), emp, rtol=0.02)

    def test_one_hot_bound_zero(self):
        t = truth_1d(1e4)
        X = np.random.default_rng(0).choice([-1.0, 1.0], size=(500, 1))
        out = aligned_hard_upper(t, X)
        assert out["bound"] == pytest.approx(0.0, abs=1e-30)
        assert out["threshold_error"] == pytest.approx(0.0, abs=1e-30)

    def test_half_gate(self):
        t = truth_1d(0.0)
        X = np.random.default_rng(0).standard_normal((100, 1))
        dsq = np.sum((t.beta1 - t.beta2) ** 2)
        np.testing.assert_allclose(aligned_hard_upper(t, X)["bound"], dsq / 4, rtol=1e-12)

    def test_threshold_below_bounds(self):
        t = truth_1d(1.2, J=5, seed=4)
        X = np.random.default_rng(9).standard_normal((200_000, 1))
        out = aligned_hard_upper(t, X)
        assert out["threshold_error"] <= out["bound"] * (1 + 1e-9)
        assert out["best_in_class_error"] <= out["threshold_error"] + 1e-12
        assert all(out["threshold_error"] <= b for b in out["eps_bounds"].values())
        np.testing.assert_allclose(out["bound"], out["bound_quadrature"], rtol=0.02)


class TestDecompositions:
    def test_random_cells(self, rng):
        W = rng.standard_normal((500, 4))
        out = hard_partition_decomposition_check(W, rng.integers(0, 7, 500), rng)
        assert out["max_rel_error"] < 1e-8 and out["cells"] == 7

    def test_constant_per_cell(self, rng):
        labels = rng.integers(0, 3, 300)
        W = rng.standard_normal((3, 2))[labels]
        assert hard_partition_decomposition_check(W, labels, rng)["H"] == pytest.approx(0.0, abs=1e-25)

    def test_expert_gate_identity(self, rng):
        out = expert_gate_identity_check(rng, n_inst=1000)
        assert out["max_rel_error"] < 1e-10 and out["bound_holds"]


class TestRates:
    def test_config_guards(self):
        with pytest.raises(ValueError):
            RateSweepConfig(n_grid=[100, 200, 400])
        with pytest.raises(ValueError):
            RateSweepConfig(n_grid=[100, 200, 200, 400])

    def test_prefix_pool(self):
        cfg = RateSweepConfig(n_grid=[100, 200, 400, 800])
        _, pool, _ = rate_problem(cfg, 3)
        _, pool2, _ = rate_problem(RateSweepConfig(n_grid=[100, 200, 400, 1600]), 3)
        np.testing.assert_array_equal(pool.X, pool2.X[:800])

    def test_doubling_c_m_bounded(self):
        base = dict(n_grid=[1000, 2000, 4000, 8000], seeds_per_n=3, n_test=5000)
        a = hard_rate_sweep(RateSweepConfig(c_M=0.5, **base))["mean_mse"]
        b = hard_rate_sweep(RateSweepConfig(c_M=1.0, **base))["mean_mse"]
        ratio = np.array(b) / np.array(a)
        assert np.all((ratio < 3) & (ratio > 1 / 3))

    def test_single_bin_is_pooled(self):
        cfg = RateSweepConfig(n_grid=[200, 400, 800, 1600], seeds_per_n=1, c_M=1e-6, n_test=1000)
        rows = hard_rate_sweep(cfg)["rows"]
        assert all(r["bins"] == 1 for r in rows)

    @pytest.mark.slow
    def test_slopes_in_band(self):
        cfg = RateSweepConfig(c_M=0.5)
        hard, soft = hard_rate_sweep(cfg), soft_rate_sweep(cfg)
        assert -0.80 <= hard["slope"] <= -0.55
        assert -1.20 <= soft["slope"] <= -0.85
        assert soft["mean_mse"][-1] < hard["mean_mse"][-1]


class TestTransfer:
    def test_exact_recovery(self, rng):
        lib = DecisionLibrary(rng.uniform(-1, 1, (20, 4)))
        W = rng.standard_normal((300, 4))
        out = regret_transfer_audit(W, W.copy(), lib)
        assert out["violations"] == 0 and out["mean_regret"] == 0.0

    def test_random_triples(self):
        assert random_transfer_triples(np.random.default_rng(11), 10_000) == 0

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_wide_margin_keeps_oracle(self, seed):
        r = np.random.default_rng(seed)
        lib = DecisionLibrary(r.uniform(-1, 1, (int(r.integers(2, 25)), 3)))
        w = r.standard_normal((1, 3))
        out = regret_batch(w, w + 1e-3 * r.standard_normal((1, 3)), lib)
        if out["gamma"][0] > 2 * out["delta"][0]:
            assert out["chosen"][0] == out["oracle"][0]

    def test_localized_bound_dominates(self, rng):
        lib = DecisionLibrary(rng.uniform(-1, 1, (30, 5)))
        W = rng.standard_normal((2000, 5))
        out = regret_transfer_audit(W, W + 0.3 * rng.standard_normal(W.shape), lib)
        assert out["mean_regret"] <= out["localized_bound"]

    def test_localized_bound_zero_delta(self):
        bound, _ = localized_regret_bound(np.ones(10), np.zeros(10))
        assert bound <= 2 * 1e-4


def test_report_format(tmp_path):
    f, kappa, L = linear_profile()
    recs = verify_floor(f, kappa, L, 1.0, [1, 2])
    write_report(recs, tmp_path / "r.txt")
    lines = (tmp_path / "r.txt").read_text().splitlines()
    assert lines[0].split("\t") == ["name", "bound", "realized", "status", "note"]
    assert len(lines) == 1 + len(recs) and all(ln.split("\t")[3] in {"PASS", "FAIL"} for ln in lines[1:])
