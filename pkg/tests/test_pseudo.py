"""Jackknife and infinitesimal-jackknife pseudo-observations."""

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from conftest import moderate_tail_sample, random_sample
from rmstpo.errors import ValidationError
from rmstpo.pseudo import POMethod, Strata, ij_pos, jackknife_pos, pseudo_observations
from rmstpo.survival import ExtensionPolicy, RMSTBatch, SurvivalSample, km_fit, rmst


def one_group(time, status):
    return SurvivalSample(np.asarray(time, float), np.asarray(status), np.zeros(len(time), int))


def km_rmst(time, status, t_star, weights=None):
    return rmst(km_fit((np.asarray(time, float), np.asarray(status)), weights), t_star,
                ExtensionPolicy.EXTEND).mu


def finite_difference(time, status, t_star, h=1e-6):
    n = len(time)
    out = np.empty(n)
    for i in range(n):
        up, dn = np.ones(n), np.ones(n)
        up[i] += h
        dn[i] -= h
        out[i] = (km_rmst(time, status, t_star, up) - km_rmst(time, status, t_star, dn)) / (2 * h)
    return out


class TestJackknife:
    def test_uncensored_recovers_truncated_times(self):
        pos = jackknife_pos(one_group([1, 2, 3], [1, 1, 1]), 3.0)
        assert_allclose(pos.values, [1, 2, 3], atol=1e-12)

    def test_all_times_beyond_t_star(self):
        pos = jackknife_pos(one_group([5, 6, 7, 9], [1, 0, 1, 0]), 4.0)
        assert_allclose(pos.values, 4.0)

    def test_hand_censored_stratum(self):
        # theta = 1 + 2/3 * 2 = 7/3; leave-one-out areas:
        #   -1: {2c, 3} -> 3 ; -2: {1, 3} -> 1 + 1/2 * 2 = 2 ; -3: {1, 2c} -> 1 + 1/2 * 2 = 2
        pos = jackknife_pos(one_group([1, 2, 3], [1, 0, 1]), 3.0)
        theta = 7 / 3
        assert_allclose(pos.values, [3 * theta - 2 * 3, 3 * theta - 2 * 2, 3 * theta - 2 * 2])
        assert_allclose(pos.values, [1, 3, 3])

    def test_matches_refits(self, rng):
        s = random_sample(rng, 20, 0, ties=True)
        pos = jackknife_pos(s, 8.0)
        theta = km_rmst(s.time, s.status, 8.0)
        loo = [km_rmst(np.delete(s.time, i), np.delete(s.status, i), 8.0) for i in range(s.n)]
        assert_allclose(pos.values, s.n * theta - (s.n - 1) * np.array(loo), atol=1e-11)

    def test_stratum_too_small(self):
        s = SurvivalSample([1.0, 2, 3], [1, 1, 1], [0, 0, 1])
        with pytest.raises(ValidationError, match="stratum too small for jackknife"):
            jackknife_pos(s, 2.0)
        with pytest.raises(ValidationError, match="stratum too small for jackknife"):
            ij_pos(s, 2.0)

    @given(st.integers(2, 40), st.integers(0, 2 ** 32 - 1))
    def test_mean_identity(self, n, seed):
        s = random_sample(np.random.default_rng(seed), n, 0)
        pos = jackknife_pos(s, 6.0)
        batch = RMSTBatch(s.time, s.status, 6.0)
        theta = batch.evaluate(np.ones((1, n)))[0][0]
        loo = batch.evaluate(1 - np.eye(n))[0]
        assert abs(pos.values.mean() - (n * theta - (n - 1) * loo.mean())) <= 1e-12 * 6.0 * n


class TestIJ:
    def test_uncensored(self):
        pos = ij_pos(one_group([1, 2, 3], [1, 1, 1]), 3.0)
        assert_allclose(pos.values, [1, 2, 3], atol=1e-12)
        fd = finite_difference([1.0, 2, 3], [1, 1, 1], 3.0)
        assert_allclose(3 * fd + 2.0, [1, 2, 3], atol=1e-8)

    def test_all_times_beyond_t_star(self):
        pos = ij_pos(one_group([5, 6, 7], [1, 0, 1]), 4.0)
        assert_allclose(pos.values, 4.0)

    def test_finite_difference_n30(self, rng):
        s = random_sample(rng, 30, 0)
        t_star = 10.0
        batch = RMSTBatch(s.time, s.status, t_star)
        _, _, d = batch.evaluate(np.ones((1, s.n)), grad=True)
        fd = finite_difference(s.time, s.status, t_star)
        assert np.max(np.abs(d[0] - fd)) <= 1e-6 * t_star

    @given(st.integers(3, 30), st.integers(0, 2 ** 32 - 1), st.floats(1.0, 12.0))
    def test_finite_difference_property(self, n, seed, t_star):
        s = random_sample(np.random.default_rng(seed), n, 0, ties=True)
        _, _, d = RMSTBatch(s.time, s.status, t_star).evaluate(np.ones((1, n)), grad=True)
        fd = finite_difference(s.time, s.status, t_star)
        assert np.max(np.abs(d[0] - fd)) <= 1e-6 * t_star

    @pytest.mark.parametrize("n", [30, 60])
    def test_correlated_with_jackknife(self, n):
        for seed in range(50):
            s = moderate_tail_sample(n, seed)
            assert np.corrcoef(jackknife_pos(s, 10.0).values, ij_pos(s, 10.0).values)[0, 1] >= 0.999

    def test_close_to_jackknife_n60(self):
        for seed in range(50):
            s = moderate_tail_sample(60, seed)
            gap = np.abs(jackknife_pos(s, 10.0).values - ij_pos(s, 10.0).values)
            assert gap.max() <= 0.02 * 10.0

    def test_gap_shrinks_with_n(self):
        def mean_gap(n):
            return np.mean([np.max(np.abs(jackknife_pos(s, 10.0).values - ij_pos(s, 10.0).values))
                            for s in (moderate_tail_sample(n, k) for k in range(40))])
        assert mean_gap(120) < mean_gap(60) < mean_gap(30)


class TestStrata:
    @pytest.mark.parametrize("method", list(POMethod))
    def test_by_group_independent_of_other_group(self, rng, method):
        s = random_sample(rng, 12, 14)
        other = s.time.copy()
        other[s.group == 1] = rng.exponential(5, 14)
        t = SurvivalSample(other, s.status, s.group)
        a = pseudo_observations(s, 8.0, method, Strata.BY_GROUP).values
        b = pseudo_observations(t, 8.0, method, Strata.BY_GROUP).values
        assert np.array_equal(a[s.group == 0], b[s.group == 0])

    def test_pooled_uses_everyone(self, rng):
        s = random_sample(rng, 12, 14)
        pooled = pseudo_observations(s, 8.0, strata=Strata.POOLED)
        single = ij_pos(SurvivalSample(s.time, s.status, np.zeros(s.n, int)), 8.0)
        assert_allclose(pooled.values, single.values)
        assert pooled.strata is Strata.POOLED and len(pooled) == s.n
