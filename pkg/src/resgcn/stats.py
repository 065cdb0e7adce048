"""Nonparametric tests and histogramming, implemented from first principles.

Only math and numpy are used here; no statistics library. The chi-square
survival function rests on a regularized incomplete gamma accurate to about
1e-10 over the relevant domain, the normal CDF on math.erfc.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .tensor import ConfigError, ContractError


@dataclass
class TestResult:
    statistic: float
    p_value: float
    method: str


@dataclass
class Histogram:
    counts: list[int]
    edges: list[float]
    clamped_low: int
    clamped_high: int

    @property
    def total(self) -> int:
        return int(sum(self.counts))


def normal_sf(z: float) -> float:
    """Upper tail of the standard normal."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if x < 0 or a <= 0:
        raise ConfigError(f"gamma_p domain error: a={a}, x={x}")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        # series expansion around 0
        term = 1.0 / a
        total = term
        n = a
        for _ in range(1000):
            n += 1.0
            term *= x / n
            total += term
            if abs(term) < abs(total) * 1e-16:
                break
        return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    return 1.0 - _gamma_q_cf(a, x)


def _gamma_q_cf(a: float, x: float) -> float:
    """Regularized upper incomplete gamma via Lentz continued fraction."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    f = d
    for i in range(1, 1000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        f *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return f * math.exp(-x + a * math.log(x) - math.lgamma(a))


def chi2_sf(x: float, df: int) -> float:
    """Chi-square survival function."""
    if df < 1:
        raise ConfigError(f"chi-square needs df >= 1, got {df}")
    if x <= 0.0:
        return 1.0
    a, half = df / 2.0, x / 2.0
    if half < a + 1.0:
        return min(1.0, max(0.0, 1.0 - _gamma_p(a, half)))
    return min(1.0, max(0.0, _gamma_q_cf(a, half)))


def midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the average of their rank span."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _tie_sizes(values: np.ndarray) -> np.ndarray:
    _, counts = np.unique(values, return_counts=True)
    return counts[counts > 1]


_EXACT_LIMIT = 8


def mann_whitney_u(a, b) -> TestResult:
    """Two-sided Mann-Whitney U test.

    Exact enumeration over rank assignments when both samples have at most
    8 observations; otherwise the tie-corrected normal approximation with
    continuity correction. The statistic is U for the first sample.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ContractError("mann_whitney_u: both samples must be non-empty")
    n1, n2 = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks = midranks(pooled)
    r1 = float(ranks[:n1].sum())
    u1 = r1 - n1 * (n1 + 1) / 2.0
    mu = n1 * n2 / 2.0

    if n1 <= _EXACT_LIMIT and n2 <= _EXACT_LIMIT:
        dev_obs = abs(u1 - mu)
        hits = 0
        total = 0
        base = n1 * (n1 + 1) / 2.0
        for subset in combinations(range(n1 + n2), n1):
            u = ranks[list(subset)].sum() - base
            total += 1
            if abs(u - mu) >= dev_obs - 1e-12:
                hits += 1
        return TestResult(u1, hits / total, "mann-whitney-u/exact")

    n = n1 + n2
    ties = _tie_sizes(pooled)
    tie_term = float((ties.astype(np.float64) ** 3 - ties).sum()) if ties.size else 0.0
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0:  # every observation tied
        return TestResult(u1, 1.0, "mann-whitney-u/normal")
    diff = u1 - mu
    if diff == 0:
        z = 0.0
    else:
        z = (diff - 0.5 * math.copysign(1.0, diff)) / math.sqrt(var)
    p = min(1.0, 2.0 * normal_sf(abs(z)))
    return TestResult(u1, p, "mann-whitney-u/normal")


def kruskal_wallis(groups) -> TestResult:
    """Kruskal-Wallis H test with tie correction; chi-square p-value."""
    arrays = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(arrays) < 2:
        raise ContractError("kruskal_wallis needs at least two groups")
    if any(g.size == 0 for g in arrays):
        raise ContractError("kruskal_wallis: all groups must be non-empty")
    pooled = np.concatenate(arrays)
    n = pooled.size
    ranks = midranks(pooled)
    h = 0.0
    i = 0
    for g in arrays:
        r = ranks[i:i + g.size].sum()
        h += r * r / g.size
        i += g.size
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)
    ties = _tie_sizes(pooled)
    tie_term = float((ties.astype(np.float64) ** 3 - ties).sum()) if ties.size else 0.0
    correction = 1.0 - tie_term / (n ** 3 - n)
    if correction <= 0:  # all observations identical
        return TestResult(0.0, 1.0, "kruskal-wallis")
    h /= correction
    p = chi2_sf(h, len(arrays) - 1)
    return TestResult(h, p, "kruskal-wallis")


def histogram(values, bins: int, lo: float, hi: float) -> Histogram:
    """Fixed-range histogram; bins are right-open except the last.

    Out-of-range values are clamped into the end bins and reported, so the
    counts always sum to the sample count.
    """
    if bins < 1:
        raise ConfigError(f"need at least one bin, got {bins}")
    if not hi > lo:
        raise ConfigError(f"histogram range is empty: [{lo}, {hi}]")
    values = np.asarray(values, dtype=np.float64)
    counts = np.zeros(bins, dtype=np.int64)
    width = (hi - lo) / bins
    below = above = 0
    for v in values:
        if v < lo:
            below += 1
            idx = 0
        elif v >= hi:
            if v > hi:
                above += 1
            idx = bins - 1
        else:
            idx = min(int((v - lo) / width), bins - 1)
        counts[idx] += 1
    edges = [lo + i * width for i in range(bins)] + [hi]
    return Histogram(counts.tolist(), edges, below, above)


def write_histogram_csv(hist: Histogram, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("bin_lo,bin_hi,count\n")
        for i, c in enumerate(hist.counts):
            fh.write(f"{hist.edges[i]!r},{hist.edges[i + 1]!r},{c}\n")
