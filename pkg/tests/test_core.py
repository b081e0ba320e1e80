import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from otss.core import (
    ContextVector, DecisionLibrary, DimensionError, FactorVector, LoggedDataset,
    argmax_decision, regret, regret_batch, score, transfer_violations,
)


def brute_regret(w_star, w_hat, F):
    """Enumeration oracle written independently of the vectorised code."""
    true_scores = [float(np.dot(w_star, f)) for f in F]
    hat_scores = [float(np.dot(w_hat, f)) for f in F]
    chosen = max(range(len(F)), key=lambda m: (hat_scores[m], -m))
    return max(true_scores) - true_scores[chosen], chosen


class TestScoring:
    def test_score_matches_dot(self):
        assert score([1.0, 2.0], FactorVector(np.array([3.0, -1.0]))) == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            score([1.0, 2.0, 3.0], [1.0, 2.0])

    def test_tie_goes_to_lowest_index(self):
        lib = DecisionLibrary(np.array([[0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]))
        assert argmax_decision([1.0, 1.0], lib) == 0
        assert argmax_decision([0.0, 1.0], lib) == 0

    def test_empty_library_rejected(self):
        with pytest.raises(ValueError):
            DecisionLibrary(np.zeros((0, 3)))

    def test_library_is_read_only(self):
        lib = DecisionLibrary(np.eye(3))
        with pytest.raises(ValueError):
            lib.factors[0, 0] = 5.0


class TestRegret:
    def test_exact_recovery_gives_zero(self, rng):
        lib = DecisionLibrary(rng.uniform(-1, 1, (20, 4)))
        w = rng.standard_normal(4)
        r = regret(w, w, lib)
        assert r.regret == 0.0 and r.oracle_index == r.chosen_index and r.perturb_delta == 0.0

    def test_two_decision_example(self):
        lib = DecisionLibrary(np.array([[1.0, 0.0], [0.0, 1.0]]))
        r = regret([2.0, 1.0], [0.0, 1.0], lib)
        assert (r.oracle_index, r.chosen_index) == (0, 1)
        assert r.regret == pytest.approx(1.0)
        assert r.margin_gamma == pytest.approx(1.0)
        assert r.perturb_delta == pytest.approx(2.0)

    def test_exact_tie_has_zero_margin(self):
        lib = DecisionLibrary(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
        assert regret([1.0, 0.5], [1.0, 0.5], lib).margin_gamma == 0.0

    def test_single_decision(self):
        r = regret([1.0], [-3.0], DecisionLibrary(np.array([[0.5]])))
        assert r.regret == 0.0 and np.isinf(r.margin_gamma)

    @settings(max_examples=200, deadline=None)
    @given(
        st.integers(1, 6).flatmap(lambda J: st.tuples(
            arrays(float, J, elements=st.floats(-3, 3)),
            arrays(float, J, elements=st.floats(-3, 3)),
            st.integers(1, 12).flatmap(lambda M: arrays(float, (M, J), elements=st.floats(-1, 1))),
        ))
    )
    def test_batch_matches_enumeration(self, case):
        w_star, w_hat, F = case
        out = regret_batch(w_star[None], w_hat[None], F)
        reg, chosen = brute_regret(w_star, w_hat, F)
        assert out["chosen"][0] == chosen
        np.testing.assert_allclose(out["regret"][0], reg, atol=1e-12)
        assert out["regret"][0] >= 0.0
        assert transfer_violations(out) == 0

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_transfer_bound_and_stability(self, seed):
        r = np.random.default_rng(seed)
        J, M = int(r.integers(1, 6)), int(r.integers(2, 25))
        lib = DecisionLibrary(r.uniform(-1, 1, (M, J)))
        w = r.standard_normal(J)
        w_hat = w + r.standard_normal(J) * 10 ** r.uniform(-3, 0)
        out = regret_batch(w[None], w_hat[None], lib)
        assert transfer_violations(out) == 0
        if out["gamma"][0] > 2 * out["delta"][0]:
            assert out["chosen"][0] == out["oracle"][0]


class TestContainers:
    def test_context_round_trip(self):
        x = ContextVector(np.array([1.0, 2.0]), np.array([3.0]))
        y = ContextVector.from_full(x.full(), 2)
        np.testing.assert_array_equal(y.signal, x.signal)
        np.testing.assert_array_equal(y.nuisance, x.nuisance)

    def test_dataset_validation(self):
        lib = DecisionLibrary(np.eye(3))
        with pytest.raises(ValueError):
            LoggedDataset(np.zeros((4, 2)), np.array([0, 1, 2, 3]), np.zeros(4), lib, 1)
        with pytest.raises(ValueError):
            LoggedDataset(np.zeros((2, 2)), np.array([0, 1]), np.array([0.0, 2.0]), lib, 1)

    def test_dataset_factor_lookup(self):
        lib = DecisionLibrary(np.arange(6.0).reshape(3, 2))
        ds = LoggedDataset(np.zeros((3, 1)), np.array([2, 0, 2]), np.array([1.0, 0.0, 1.0]), lib, 1)
        np.testing.assert_array_equal(ds.Z, lib.factors[[2, 0, 2]])
        assert ds.head(2).n == 2
        assert len(list(ds.records())) == 3
