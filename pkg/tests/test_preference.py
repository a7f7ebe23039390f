import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefbatch.numerics import gauss_hermite, std_normal_cdf
from prefbatch.preference import (
    Feedback,
    PreferenceRecord,
    loglik_pairs_mc,
    loglik_winner,
    ove_bound,
    ranking_to_pairs,
    winner_to_pairs,
)


def _pairwise_closed_form(f_winner, f_loser, sigma):
    # exact q=2 likelihood: P(y_w <= y_l) with independent N(f, sigma^2) noise
    return std_normal_cdf((f_loser - f_winner) / (math.sqrt(2.0) * sigma))


class TestPairEncodings:
    def test_winner_two(self):
        np.testing.assert_array_equal(winner_to_pairs(1, 2), [[1, 2]])

    def test_winner_middle(self):
        np.testing.assert_array_equal(winner_to_pairs(2, 3), [[2, 1], [2, 3]])

    def test_winner_last(self):
        np.testing.assert_array_equal(winner_to_pairs(4, 4), [[4, 1], [4, 2], [4, 3]])

    def test_ranking_two(self):
        np.testing.assert_array_equal(ranking_to_pairs((1, 2)), [[1, 2]])

    def test_ranking_three(self):
        np.testing.assert_array_equal(ranking_to_pairs((3, 1, 2)), [[3, 1], [1, 2]])

    def test_ranking_identity_five(self):
        np.testing.assert_array_equal(
            ranking_to_pairs((1, 2, 3, 4, 5)), [[1, 2], [2, 3], [3, 4], [4, 5]]
        )

    def test_feedback_validation(self):
        with pytest.raises(ValueError):
            Feedback.from_ranking((1, 1, 2))
        with pytest.raises(ValueError):
            Feedback.from_pairs([[1, 1]])
        with pytest.raises(ValueError):
            Feedback.from_pairs([[1, 2], [2, 3], [3, 1]])  # cycle

    def test_record_validation(self):
        x = np.array([[0.1], [0.9]])
        PreferenceRecord(x, Feedback.from_winner(2))
        with pytest.raises(ValueError):
            PreferenceRecord(x, Feedback.from_winner(3))
        with pytest.raises(ValueError):
            PreferenceRecord(np.array([[0.1]]), Feedback.from_winner(1))


class TestLoglikWinner:
    def test_symmetric_pair(self):
        assert loglik_winner(np.zeros(2), 1, 0.3) == pytest.approx(math.log(0.5), abs=1e-10)

    def test_exchangeable_triple(self):
        assert loglik_winner(np.zeros(3), 2, 0.7) == pytest.approx(
            math.log(1 / 3), abs=1e-8
        )

    def test_q2_closed_form(self):
        got = loglik_winner(np.array([0.0, 1.0]), 1, 1.0)
        assert got == pytest.approx(math.log(_pairwise_closed_form(0.0, 1.0, 1.0)), abs=1e-10)
        assert math.exp(got) == pytest.approx(0.76025, abs=1e-5)

    @given(
        st.integers(min_value=2, max_value=5),
        st.integers(min_value=0, max_value=10_000),
    )
    @settings(max_examples=40, deadline=None)
    def test_normalization(self, q, seed):
        rng = np.random.default_rng(seed)
        f = rng.normal(0, 1, size=q)
        sigma = rng.uniform(0.05, 1.0)
        total = sum(math.exp(loglik_winner(f, j, sigma)) for j in range(1, q + 1))
        assert total == pytest.approx(1.0, abs=1e-6)

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=25, deadline=None)
    def test_translation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        f = rng.normal(0, 1, size=4)
        c = rng.uniform(-5, 5)
        a = loglik_winner(f, 2, 0.3)
        b = loglik_winner(f + c, 2, 0.3)
        assert a == pytest.approx(b, abs=1e-10)

    def test_monotone_in_winner_value(self):
        rng = np.random.default_rng(3)
        f = rng.normal(0, 1, size=4)
        vals = []
        for delta in np.linspace(0, 3, 7):
            g = f.copy()
            g[1] -= delta  # winner gets better (smaller)
            vals.append(loglik_winner(g, 2, 0.4))
        assert np.all(np.diff(vals) >= -1e-12)

    def test_quadrature_self_consistency(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            f = rng.normal(0, 1, size=5)
            sigma = rng.uniform(0.05, 1.0)
            a = loglik_winner(f, 3, sigma, gauss_hermite(32))
            b = loglik_winner(f, 3, sigma, gauss_hermite(64))
            assert a == pytest.approx(b, abs=1e-8)


class TestLoglikPairsMc:
    def test_empty_pairs(self):
        rng = np.random.default_rng(0)
        assert loglik_pairs_mc(np.zeros(3), np.empty((0, 2)), 0.5, 1000, rng) == 0.0

    def test_exchangeable_chain(self):
        rng = np.random.default_rng(1)
        c = ranking_to_pairs((1, 2, 3))
        n = 200_000
        got = loglik_pairs_mc(np.zeros(3), c, 0.5, n, rng)
        p = math.exp(got)
        se = math.sqrt(p * (1 - p) / n) / p
        assert abs(got - math.log(1 / 6)) <= 3 * se

    def test_pairwise_closed_form(self):
        rng = np.random.default_rng(2)
        n = 200_000
        got = loglik_pairs_mc(np.array([0.0, 1.0]), np.array([[1, 2]]), 1.0, n, rng)
        p_true = _pairwise_closed_form(0.0, 1.0, 1.0)
        se = math.sqrt((1 - p_true) / (p_true * n))
        assert abs(got - math.log(p_true)) <= 3 * se

    def test_agrees_with_winner_quadrature(self):
        rng = np.random.default_rng(5)
        n = 100_000
        for _ in range(8):
            q = int(rng.integers(2, 5))
            f = rng.normal(0, 0.5, size=q)
            sigma = rng.uniform(0.2, 0.8)
            j = int(rng.integers(1, q + 1))
            ll_quad = loglik_winner(f, j, sigma)
            ll_mc = loglik_pairs_mc(f, winner_to_pairs(j, q), sigma, n, rng)
            p = math.exp(ll_quad)
            se = math.sqrt(max(p * (1 - p), 1e-12) / n) / p
            assert abs(ll_mc - ll_quad) <= 3 * se + 2.0 / n

    def test_minimum_sample_guard(self):
        with pytest.raises(ValueError):
            loglik_pairs_mc(np.zeros(2), np.array([[1, 2]]), 0.5, 10, np.random.default_rng(0))


class TestOveBound:
    def test_symmetric_pair(self):
        assert ove_bound(np.zeros(2), np.ones(2), 1) == pytest.approx(math.log(0.5))

    def test_symmetric_triple_is_lower_bound(self):
        got = ove_bound(np.zeros(3), np.ones(3), 2)
        assert got == pytest.approx(2 * math.log(0.5), abs=1e-12)
        assert got <= math.log(1 / 3)

    def test_pair_example(self):
        got = ove_bound(np.array([0.0, 1.0]), np.array([0.5, 0.5]), 1)
        assert got == pytest.approx(math.log(std_normal_cdf(1.0)), abs=1e-12)
        assert math.exp(got) == pytest.approx(0.84134, abs=1e-5)

    @given(st.integers(min_value=0, max_value=10_000), st.integers(min_value=2, max_value=6))
    @settings(max_examples=60, deadline=None)
    def test_lower_bounds_winner_likelihood(self, seed, q):
        # point-mass comparison: per-element variance is the evaluation noise
        rng = np.random.default_rng(seed)
        f = rng.normal(0, 1, size=q)
        sigma = rng.uniform(0.1, 1.0)
        j = int(rng.integers(1, q + 1))
        bound = ove_bound(f, np.full(q, sigma**2), j)
        exact = loglik_winner(f, j, sigma)
        assert math.exp(bound) <= math.exp(exact) + 1e-6

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(ValueError):
            ove_bound(np.zeros(2), np.array([1.0, 0.0]), 1)
