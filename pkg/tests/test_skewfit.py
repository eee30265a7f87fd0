import numpy as np
import pytest
from hypothesis import given, strategies as st

from posbias.domain import PositionBiasCurve, generate_world
from posbias.errors import DomainError, EmptyHistogramError
from posbias.loop_engine import LoopConfig, run_feedback_loop
from posbias.skewfit import (
    PopularityFit,
    build_histogram,
    effective_exposure_weights,
    fit_exponential_mle,
    fit_rank_observations,
    histogram_from_counts,
    skew_change,
    weighted_density,
)
from tests.helpers import fixed_log

# w = (1, 0.5, 0.25), lam = 1: w * e^-x normalised on x = 1, 2, 3 (hand computation)
HAND_DENSITY = np.array([0.82117074, 0.15104592, 0.02778334])

counts_st = st.lists(st.integers(0, 50), min_size=1, max_size=30).filter(lambda c: sum(c) > 0)


class TestHistogram:
    def test_rank_by_count(self):
        hist = histogram_from_counts([5, 2, 0])
        assert hist.ranks.tolist() == [1, 2, 3]

    def test_tie_break_by_id(self):
        assert histogram_from_counts([3, 3]).ranks.tolist() == [1, 2]
        assert histogram_from_counts([0, 4, 4, 1]).ranks.tolist() == [4, 1, 2, 3]

    def test_from_log(self):
        log = fixed_log([(0, (2, 0), (True, False)), (0, (1, 2), (False, True))])
        hist = build_histogram(log, 3)
        assert hist.counts.tolist() == [0, 0, 2]
        assert hist.rows()[0] == (1, 2, 2, 1.0)

    def test_empty(self):
        log = fixed_log([(0, (0, 1), (False, False))])
        with pytest.raises(EmptyHistogramError):
            build_histogram(log, 2)

    @given(counts=counts_st)
    def test_invariants(self, counts):
        hist = histogram_from_counts(counts)
        assert sorted(hist.ranks.tolist()) == list(range(1, len(counts) + 1))
        assert np.all(np.diff(hist.sorted_counts()) <= 0)
        assert hist.shares.sum() == pytest.approx(1.0, abs=1e-12)


class TestExponentialFit:
    def test_single_rank(self):
        hist = histogram_from_counts([0, 7])
        # item 1 holds every click and takes rank 1; item 0 takes rank 2
        assert fit_exponential_mle(hist).lambda_hat == 1.0
        assert fit_exponential_mle(hist, ranks=np.array([1, 2])).lambda_hat == 0.5

    def test_rank_two_item(self):
        fit = fit_rank_observations([2, 2, 2])
        assert fit.lambda_hat == 0.5

    def test_uniform_ranks(self):
        assert fit_exponential_mle(histogram_from_counts([4, 4, 4])).lambda_hat == 0.5

    def test_recovers_rate_from_discretised_draws(self):
        rng = np.random.default_rng(0)
        x = np.maximum(1, np.rint(rng.exponential(10.0, 100_000)))
        assert abs(fit_rank_observations(x).lambda_hat - 0.1) <= 0.002

    def test_to_dict(self):
        fit = PopularityFit(0.25, 4.0, 10)
        assert fit.to_dict() == {"lambda_hat": 0.25, "mean_rank": 4.0, "n": 10}

    @given(counts=counts_st, factor=st.integers(2, 5))
    def test_duplication_invariance(self, counts, factor):
        a = fit_exponential_mle(histogram_from_counts(counts))
        b = fit_exponential_mle(histogram_from_counts([c * factor for c in counts]))
        assert a.lambda_hat == b.lambda_hat
        assert b.n_observations == factor * a.n_observations

    @given(counts=counts_st)
    def test_rate_is_inverse_mean(self, counts):
        fit = fit_exponential_mle(histogram_from_counts(counts))
        assert fit.lambda_hat == pytest.approx(1.0 / fit.mean_rank, rel=1e-12)
        assert np.isfinite(fit.lambda_hat) and fit.lambda_hat > 0


class TestSkewChange:
    def test_examples(self):
        assert skew_change(1.0, 1.2) == pytest.approx(0.2)
        assert skew_change(0.3, 0.3) == 0.0
        assert skew_change(1.0, 0.975) == pytest.approx(-0.025)

    @pytest.mark.parametrize("before", [0.0, -1.0])
    def test_nonpositive_before(self, before):
        with pytest.raises(DomainError):
            skew_change(before, 1.0)

    @given(a=st.floats(0.1, 10.0), b=st.floats(0.1, 10.0))
    def test_inverse_identity(self, a, b):
        s = skew_change(b, a)
        assert skew_change(a, b) == pytest.approx(-s / (1 + s), abs=1e-12, rel=1e-12)


class TestWeightedDensity:
    def test_hand_example(self):
        np.testing.assert_allclose(weighted_density(1.0, [1, 0.5, 0.25]), HAND_DENSITY, atol=1e-8)

    @given(lam=st.floats(0.01, 3.0), n=st.integers(1, 200))
    def test_unit_weight_is_discrete_exponential(self, lam, n):
        x = np.arange(1, n + 1)
        ref = np.exp(-lam * x)
        dens = weighted_density(lam, np.ones(n))
        np.testing.assert_array_equal(dens, (lam * ref) / (lam * ref).sum())
        assert abs(dens.sum() - 1) < 1e-9

    def test_decreasing_weight_shifts_mass_up(self):
        x = np.arange(1, 101)
        base = weighted_density(0.05, np.ones(100))
        tilted = weighted_density(0.05, 1.0 / x)
        assert (tilted * x).sum() < (base * x).sum()

    @pytest.mark.parametrize("w", [[0, 0, 0], [1, -1, 1], [], [np.nan, 1]])
    def test_bad_weights(self, w):
        with pytest.raises(DomainError):
            weighted_density(1.0, w)


class TestExposureWeights:
    def test_flat_bias(self):
        log = fixed_log([(0, (0, 1, 2), (True, False, False)), (0, (2, 1, 0), (False, True, False))])
        w = effective_exposure_weights(log, PositionBiasCurve.power_law(0.0, 3), 4)
        np.testing.assert_array_equal(w[:3], [1.0, 1.0, 1.0])
        assert np.isnan(w[3])

    def test_fixed_slate(self):
        curve = PositionBiasCurve.power_law(1.0, 3)
        log = fixed_log([(0, (2, 0, 1), (True, True, False))] * 3 + [(0, (2, 0, 1), (True, False, False))])
        hist = build_histogram(log, 3)
        w = effective_exposure_weights(log, curve, 3, hist)
        # rank 1 = item 2 (slot 1), rank 2 = item 0 (slot 2), rank 3 = item 1 (slot 3)
        np.testing.assert_allclose(w, [1.0, 0.5, 1 / 3])

    def test_biased_loop_weights_fall_with_rank(self):
        from scipy import stats

        world = generate_world(200, 4, {"family": "exponential_tail", "scale": 0.2}, seed=1)
        cfg = LoopConfig(n_iterations=1, sessions_per_iteration=10_000, slate_length=6,
                         n_candidates=18, mode="choice_biased", seed=2)
        log = run_feedback_loop(world, cfg).logs[-1]
        w = effective_exposure_weights(log, cfg.curve, 200)
        ok = ~np.isnan(w)
        rho = stats.spearmanr(np.arange(1, 201)[ok], w[ok]).statistic
        assert rho <= 0
