"""Nonparametric statistics against scipy oracles and brute enumeration."""

import math
from itertools import combinations

import numpy as np
import pytest
import scipy.special
import scipy.stats

from resgcn.stats import (
    Histogram,
    chi2_sf,
    histogram,
    kruskal_wallis,
    mann_whitney_u,
    midranks,
    normal_sf,
    write_histogram_csv,
)
from resgcn.tensor import ConfigError, ContractError


def brute_force_mw_p(a, b):
    """Independent exact two-sided p: enumerate all rank assignments."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n1 = a.size
    pooled = np.concatenate([a, b])
    ranks = scipy.stats.rankdata(pooled)
    base = n1 * (n1 + 1) / 2.0
    mu = n1 * b.size / 2.0
    dev_obs = abs(ranks[:n1].sum() - base - mu)
    hits = total = 0
    for subset in combinations(range(pooled.size), n1):
        u = ranks[list(subset)].sum() - base
        total += 1
        if abs(u - mu) >= dev_obs - 1e-12:
            hits += 1
    return hits / total


class TestSpecialFunctions:
    def test_normal_sf_matches_scipy(self):
        for z in np.linspace(-6, 6, 49):
            assert abs(normal_sf(z) - scipy.stats.norm.sf(z)) < 1e-14

    def test_chi2_sf_matches_scipy_tight(self):
        for df in (1, 2, 3, 5, 10, 30):
            for x in (0.001, 0.5, 1.0, 2.5, float(df), 2.0 * df, 5.0 * df):
                want = scipy.stats.chi2.sf(x, df)
                got = chi2_sf(x, df)
                assert abs(got - want) < 1e-10, (
                    f"df={df} x={x}: {got} vs {want}")

    def test_chi2_sf_edge_cases(self):
        assert chi2_sf(0.0, 3) == 1.0
        assert chi2_sf(-1.0, 3) == 1.0
        assert chi2_sf(1e4, 2) < 1e-300
        with pytest.raises(ConfigError):
            chi2_sf(1.0, 0)

    def test_incomplete_gamma_identity(self):
        # P + Q = 1 across both evaluation branches.
        from resgcn.stats import _gamma_p, _gamma_q_cf
        for a in (0.5, 1.0, 2.5, 7.0):
            for x in (0.1, a, a + 5.0):
                p = _gamma_p(a, x)
                want = scipy.special.gammainc(a, x)
                assert abs(p - want) < 1e-12
                if x >= a + 1.0:
                    q = _gamma_q_cf(a, x)
                    assert abs(q - scipy.special.gammaincc(a, x)) < 1e-12


class TestMidranks:
    def test_no_ties_is_argsort_rank(self):
        rng = np.random.default_rng(0)
        v = rng.permutation(10).astype(float)
        r = midranks(v)
        assert np.array_equal(np.sort(r), np.arange(1.0, 11.0))
        assert np.array_equal(r, scipy.stats.rankdata(v))

    def test_ties_share_average_rank(self):
        v = np.array([3.0, 1.0, 3.0, 2.0, 3.0])
        assert np.array_equal(midranks(v), np.array([4.0, 1.0, 4.0, 2.0, 4.0]))

    def test_matches_scipy_with_random_ties(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            v = rng.integers(0, 5, size=20).astype(float)
            assert np.array_equal(midranks(v), scipy.stats.rankdata(v))


class TestMannWhitney:
    def test_separated_samples_have_extreme_u(self):
        res = mann_whitney_u([1.0, 2.0], [3.0, 4.0])
        assert res.statistic == 0.0
        assert res.method == "mann-whitney-u/exact"
        # All C(4,2)=6 assignments; deviations >= 2 occur for U in {0, 4}.
        assert np.isclose(res.p_value, 2.0 / 6.0)

    def test_exact_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n1 = int(rng.integers(1, 6))
            n2 = int(rng.integers(1, 6))
            a = rng.integers(0, 6, size=n1).astype(float)  # ties likely
            b = rng.integers(0, 6, size=n2).astype(float)
            res = mann_whitney_u(a, b)
            assert res.method == "mann-whitney-u/exact"
            assert np.isclose(res.p_value, brute_force_mw_p(a, b), atol=1e-12)

    def test_exact_matches_scipy_without_ties(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            a = rng.standard_normal(6)
            b = rng.standard_normal(5) + 0.5
            res = mann_whitney_u(a, b)
            want = scipy.stats.mannwhitneyu(a, b, alternative="two-sided",
                                            method="exact")
            assert res.statistic == want.statistic
            assert np.isclose(res.p_value, want.pvalue, atol=1e-12)

    def test_normal_path_matches_scipy(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal(30)
        b = rng.standard_normal(25) + 0.8
        res = mann_whitney_u(a, b)
        assert res.method == "mann-whitney-u/normal"
        want = scipy.stats.mannwhitneyu(a, b, alternative="two-sided",
                                        method="asymptotic")
        assert np.isclose(res.statistic, want.statistic)
        assert np.isclose(res.p_value, want.pvalue, atol=1e-10)

    def test_normal_path_with_heavy_ties(self):
        rng = np.random.default_rng(4)
        a = rng.integers(0, 4, size=40).astype(float)
        b = rng.integers(1, 5, size=35).astype(float)
        res = mann_whitney_u(a, b)
        want = scipy.stats.mannwhitneyu(a, b, alternative="two-sided",
                                        method="asymptotic")
        assert np.isclose(res.p_value, want.pvalue, atol=1e-10)

    def test_identical_constant_samples(self):
        res = mann_whitney_u([1.0] * 20, [1.0] * 20)
        assert res.p_value == 1.0

    def test_empty_sample_rejected(self):
        with pytest.raises(ContractError):
            mann_whitney_u([], [1.0])

    def test_symmetry_in_sample_order(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal(7)
        b = rng.standard_normal(6)
        assert np.isclose(mann_whitney_u(a, b).p_value,
                          mann_whitney_u(b, a).p_value, atol=1e-12)


class TestKruskalWallis:
    def test_matches_scipy(self):
        rng = np.random.default_rng(6)
        groups = [rng.standard_normal(12),
                  rng.standard_normal(10) + 0.5,
                  rng.standard_normal(14) - 0.3]
        res = kruskal_wallis(groups)
        want = scipy.stats.kruskal(*groups)
        assert np.isclose(res.statistic, want.statistic, atol=1e-10)
        assert np.isclose(res.p_value, want.pvalue, atol=1e-10)

    def test_matches_scipy_with_ties(self):
        rng = np.random.default_rng(7)
        groups = [rng.integers(0, 4, size=15).astype(float) for _ in range(4)]
        res = kruskal_wallis(groups)
        want = scipy.stats.kruskal(*groups)
        assert np.isclose(res.statistic, want.statistic, atol=1e-10)
        assert np.isclose(res.p_value, want.pvalue, atol=1e-10)

    def test_all_identical_values(self):
        res = kruskal_wallis([[2.0, 2.0], [2.0, 2.0, 2.0]])
        assert res.statistic == 0.0
        assert res.p_value == 1.0

    def test_needs_two_nonempty_groups(self):
        with pytest.raises(ContractError):
            kruskal_wallis([[1.0, 2.0]])
        with pytest.raises(ContractError):
            kruskal_wallis([[1.0], []])


class TestHistogram:
    def test_counts_and_right_open_bins(self):
        h = histogram([0.0, 0.5, 0.99, 1.0, 1.5, 2.0], bins=2, lo=0.0, hi=2.0)
        # [0, 1) holds {0.0, 0.5, 0.99}; [1, 2] holds {1.0, 1.5, 2.0}.
        assert h.counts == [3, 3]
        assert h.edges == [0.0, 1.0, 2.0]
        assert h.clamped_low == 0
        assert h.clamped_high == 0

    def test_upper_edge_lands_in_last_bin(self):
        h = histogram([1.0], bins=4, lo=0.0, hi=1.0)
        assert h.counts == [0, 0, 0, 1]
        assert h.clamped_high == 0

    def test_out_of_range_clamps_into_end_bins(self):
        h = histogram([-5.0, 0.2, 3.0], bins=2, lo=0.0, hi=1.0)
        assert h.counts == [2, 1]
        assert h.clamped_low == 1
        assert h.clamped_high == 1
        assert h.total == 3

    def test_total_always_equals_sample_count(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            vals = rng.standard_normal(200) * 2
            h = histogram(vals, bins=7, lo=-1.0, hi=1.0)
            assert h.total == 200

    def test_invalid_configuration_rejected(self):
        with pytest.raises(ConfigError):
            histogram([1.0], bins=0, lo=0.0, hi=1.0)
        with pytest.raises(ConfigError):
            histogram([1.0], bins=3, lo=1.0, hi=1.0)

    def test_csv_round_trip(self, tmp_path):
        h = histogram([0.1, 0.4, 0.9], bins=3, lo=0.0, hi=1.0)
        path = tmp_path / "hist.csv"
        write_histogram_csv(h, str(path))
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "bin_lo,bin_hi,count"
        assert len(lines) == 4
        rows = [ln.split(",") for ln in lines[1:]]
        assert [int(r[2]) for r in rows] == h.counts
        # repr round-trip keeps the edges exact
        assert [float(r[0]) for r in rows] == h.edges[:-1]
