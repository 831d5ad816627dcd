import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import anderson_ksamp

from improvnet.stats import ADError, ad_ksample, ks_uniform_distance, tie_weights, weighted_chi2_sf
from improvnet.stats.ad import (
    _TABLE_P, asymptotic_pvalue, limit_sf, n_labelings, table_critical_points, table_pvalue,
)


def marsaglia_adinf(z):
    """Published short approximation of the one-sample limiting CDF (abs error a few 1e-5)."""
    if z < 2:
        return math.exp(-1.2337141 / z) / math.sqrt(z) * (
            2.00012 + (.247105 - (.0649821 - (.0347962 - (.011672 - .00168691 * z) * z) * z) * z) * z)
    return math.exp(-math.exp(1.0776 - (2.30695 - (.43424 - (.082433 - (.008056 - .0003146 * z) * z)
                                                   * z) * z) * z))


# survival values of sum_j chi2_m / (j (j + 1)), from a 20-digit mpmath
# Gil-Pelaez quadrature of the product characteristic function
HIGH_PRECISION_SF = [(1.0, 1, 0.35726667321270966), (2.492, 1, 0.05002218635996197),
                     (3.0, 2, 0.14874426269204888), (1.5, 3, 0.9295934327004376)]

samples_st = st.lists(st.lists(st.integers(0, 12), min_size=4, max_size=25), min_size=2, max_size=4)


class TestStatistic:
    @pytest.mark.filterwarnings("ignore::UserWarning")
    @settings(max_examples=80, deadline=None)
    @given(samples_st)
    def test_matches_scipy_standardized(self, samples):
        if len(set(itertools.chain(*samples))) < 2:
            return
        for midrank, version in ((False, "continuous"), (True, "discrete")):
            ref = anderson_ksamp(samples, midrank=midrank).statistic
            ours = ad_ksample(samples, version).t_ad
            assert ours == pytest.approx(ref, rel=1e-9, abs=1e-9)

    def test_errors(self):
        with pytest.raises(ADError):
            ad_ksample([[1.0, 2.0]])
        with pytest.raises(ADError, match="empty"):
            ad_ksample([[1.0, 2.0], []])
        with pytest.raises(ADError, match="identical"):
            ad_ksample([[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(ADError, match="non-finite"):
            ad_ksample([[1.0, np.nan], [2.0, 3.0]])
        with pytest.raises(ADError):
            ad_ksample([[1.0, 2.0], [3.0, 4.0]], version="other")


class TestLimitingLaw:
    @pytest.mark.parametrize("x,m,expect", HIGH_PRECISION_SF)
    def test_high_precision_values(self, x, m, expect):
        assert limit_sf(x, m) == pytest.approx(expect, abs=1e-10)

    def test_one_sample_law(self):
        for z in np.linspace(0.2, 8.0, 40):
            assert limit_sf(z, 1) == pytest.approx(1 - marsaglia_adinf(z), abs=5e-5)

    @pytest.mark.parametrize("k", [2, 3, 5, 11])
    def test_critical_table_cross_check(self, k):
        for t, p in zip(table_critical_points(k)[:7], _TABLE_P[:7]):
            assert asymptotic_pvalue(t, k) == pytest.approx(p, rel=0.04)
            # the quadratic log-odds fit is rougher at the table edges
            assert table_pvalue(t, k) == pytest.approx(p, rel=0.15)

    def test_monotone_and_bounded(self):
        xs = np.linspace(0.01, 60, 300)
        for m in (1, 2, 4):
            ps = [limit_sf(x, m) for x in xs]
            assert all(0 <= p <= 1 for p in ps)
            assert all(b <= a + 1e-12 for a, b in zip(ps, ps[1:]))
        assert limit_sf(60.0, 1) > 0
        assert asymptotic_pvalue(-5.0, 2) == pytest.approx(1.0, abs=1e-6)


class TestTieConditionalLaw:
    def test_weights_sum_to_one(self, rng):
        for counts in ([5, 1], [3, 3, 3], rng.integers(1, 20, 50)):
            assert tie_weights(counts).sum() == pytest.approx(1.0, abs=1e-12)

    def test_two_levels_is_single_chi_square(self):
        assert tie_weights([7, 2]).tolist() == pytest.approx([1.0])

    def test_many_equal_levels_approach_untied_weights(self):
        lam = tie_weights(np.ones(1000))
        assert lam[:4] == pytest.approx([1 / (j * (j + 1)) for j in range(1, 5)], rel=0.01)

    @pytest.mark.parametrize("l1,l2,x", [(0.7, 0.3, 1.5), (0.5, 0.1, 4.0), (0.9, 0.05, 0.3)])
    def test_two_exponentials_closed_form(self, l1, l2, x):
        # chi-square on 2 df is 2 Exp(1): P(l1 Y1 + l2 Y2 > x) is a two-term exponential mix
        expect = (l1 * np.exp(-x / (2 * l1)) - l2 * np.exp(-x / (2 * l2))) / (l1 - l2)
        assert weighted_chi2_sf(x, [l1, l2], 2) == pytest.approx(expect, abs=1e-9)

    def test_against_monte_carlo(self):
        lam = np.array([0.6, 0.3, 0.1])
        gen = np.random.default_rng(0)
        draws = gen.chisquare(3, size=(400_000, 3)) @ lam
        for x in (1.0, 2.0, 5.0):
            assert weighted_chi2_sf(x, lam, 3) == pytest.approx(np.mean(draws >= x), abs=3e-3)

    def test_tail_is_continuous(self):
        lam = [0.55, 0.2, 0.1, 0.1, 0.05]
        xs = np.linspace(5, 25, 81)
        ps = [weighted_chi2_sf(x, lam, 1) for x in xs]
        assert all(b < a for a, b in zip(ps, ps[1:]))
        ratios = np.array(ps[1:]) / np.array(ps[:-1])
        assert np.all(np.abs(np.diff(np.log(ratios))) < 0.05)

    def test_law_selection(self, rng):
        tied = [rng.integers(0, 10, 40), rng.integers(0, 10, 40)]
        untied = [rng.normal(size=40), rng.normal(size=40)]
        assert ad_ksample(tied, "discrete").law == "tie-conditional"
        assert ad_ksample(untied, "discrete").law == "untied"
        assert ad_ksample(tied, "continuous").law == "untied"

    def test_tied_null_calibration(self):
        gen = np.random.default_rng(8)
        ps = [ad_ksample([gen.integers(0, 15, 60), gen.integers(0, 15, 50)], "discrete").p_value
              for _ in range(300)]
        assert ks_uniform_distance(ps) < 0.08


def exact_oracle(x, y):
    """All-splits relabelling p-value using scipy's statistic."""
    pooled = np.concatenate([x, y])
    obs = anderson_ksamp([x, y], midrank=False).statistic
    hits = total = 0
    for idx in itertools.combinations(range(len(pooled)), len(x)):
        mask = np.zeros(len(pooled), bool)
        mask[list(idx)] = True
        total += 1
        hits += anderson_ksamp([pooled[mask], pooled[~mask]], midrank=False).statistic >= obs - 1e-9
    return hits / total


@pytest.mark.filterwarnings("ignore::UserWarning")
class TestResampling:
    def test_exact_small_case(self):
        x = np.array([1.0, 5.0, 2.0, 9.0, 4.0])
        y = np.array([3.0, 7.0, 8.0, 6.0, 11.0, 10.0])
        r = ad_ksample([x, y], method="exact")
        assert r.p_value == pytest.approx(exact_oracle(x, y), abs=1e-12)
        assert r.n_resamples == n_labelings([5, 6]) == 462

    def test_permutation_approximates_exact(self):
        x = np.array([1.0, 5.0, 2.0, 9.0, 4.0, 12.0])
        y = np.array([3.0, 7.0, 8.0, 6.0, 11.0, 10.0, 13.0])
        ex = ad_ksample([x, y], method="exact").p_value
        pm = ad_ksample([x, y], method="permutation", n_resamples=20000, seed=1).p_value
        assert abs(ex - pm) < 0.01

    def test_permutation_reproducible(self, rng):
        a, b = rng.normal(size=20), rng.normal(0.5, size=25)
        p1 = ad_ksample([a, b], method="permutation", n_resamples=500, seed=3).p_value
        p2 = ad_ksample([a, b], method="permutation", n_resamples=500, seed=3).p_value
        assert p1 == p2

    def test_exact_limit(self):
        with pytest.raises(ADError, match="max_exact"):
            ad_ksample([np.arange(20.0), np.arange(20.0) + 0.5], method="exact", max_exact=1000)

    def test_describe(self, rng):
        r = ad_ksample([rng.normal(size=50), rng.normal(5, size=50)])
        assert r.describe().endswith("(0)") or "<0.001" in r.describe()
