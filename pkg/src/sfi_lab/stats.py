"""Paired tests, effect sizes and t-based confidence intervals.

The Student t distribution is evaluated through the regularized incomplete
beta function (Lentz continued fraction), so nothing here depends on a
statistics package.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from sfi_lab.errors import DomainError
from sfi_lab.metrics import midranks

EXACT_WILCOXON_MAX_N = 25


@dataclass(frozen=True)
class TestResult:
    """Outcome of a paired comparison. ``p_value is None`` marks degenerate input."""

    __test__ = False  # not a pytest class

    statistic: float | None
    p_value: float | None
    estimate: float  # mean (t) or median (Wilcoxon) of the paired differences
    ci_low: float | None
    ci_high: float | None
    n: int
    df: float | None = None
    effect_size: float | None = None

    @property
    def degenerate(self) -> bool:
        return self.p_value is None

    def as_dict(self) -> dict:
        d = asdict(self)
        d["degenerate"] = self.degenerate
        return d


def _betacf(a: float, b: float, x: float) -> float:
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 10_000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x={x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def t_sf(t: float, df: float) -> float:
    """P(T > t) for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + t * t))
    return tail if t >= 0 else 1.0 - tail


def t_cdf(t: float, df: float) -> float:
    return 1.0 - t_sf(t, df)


def t_ppf(q: float, df: float) -> float:
    """Quantile of Student's t by bisection on the CDF."""
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile level {q} outside (0, 1)")
    if q == 0.5:
        return 0.0
    if q < 0.5:
        return -t_ppf(1.0 - q, df)
    lo, hi = 0.0, 1.0
    while t_cdf(hi, df) < q:
        lo, hi = hi, hi * 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, df) < q:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _as_pair(x, y) -> np.ndarray:
    a = np.asarray(x, dtype=float).reshape(-1)
    b = np.asarray(y, dtype=float).reshape(-1)
    if len(a) != len(b):
        raise DomainError(f"paired samples differ in length ({len(a)} vs {len(b)})")
    return a - b


def mean_ci_t(sample, level: float = 0.95) -> tuple[float, float, float]:
    """(mean, low, high) with half-width t_{n-1} * s / sqrt(n)."""
    v = np.asarray(sample, dtype=float).reshape(-1)
    if len(v) < 2:
        raise DomainError("mean_ci_t needs at least 2 observations")
    mean = float(np.mean(v))
    half = t_ppf(0.5 + level / 2.0, len(v) - 1) * float(np.std(v, ddof=1)) / math.sqrt(len(v))
    return mean, mean - half, mean + half


def one_sample_t_test(values, popmean: float = 0.0, level: float = 0.95) -> TestResult:
    v = np.asarray(values, dtype=float).reshape(-1)
    n = len(v)
    if n < 2:
        raise DomainError("t test needs at least 2 observations")
    mean = float(np.mean(v))
    sd = float(np.std(v, ddof=1))
    if sd == 0.0:
        return TestResult(None, None, mean, mean, mean, n, df=n - 1)
    se = sd / math.sqrt(n)
    t = (mean - popmean) / se
    p = min(1.0, 2.0 * t_sf(abs(t), n - 1))
    _, lo, hi = mean_ci_t(v, level)
    return TestResult(t, p, mean, lo, hi, n, df=n - 1)


def paired_t_test(x, y, level: float = 0.95) -> TestResult:
    """Two-sided t test on the differences ``x - y``."""
    return one_sample_t_test(_as_pair(x, y), 0.0, level)


def _signed_rank_null(doubled_ranks: np.ndarray) -> np.ndarray:
    """Counts of each achievable doubled positive-rank sum over all 2^n sign patterns."""
    counts = np.zeros(int(doubled_ranks.sum()) + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks.astype(np.int64):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: len(counts) - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(x, y, method: str = "auto") -> TestResult:
    """Two-sided signed-rank test on ``x - y``.

    Zero differences are dropped and tied magnitudes get mid-ranks. The
    statistic is W+ - W-, so swapping the samples flips its sign. ``method``
    is "exact" (full null distribution), "approx" (normal with continuity
    correction) or "auto" (exact up to 25 nonzero differences).
    """
    d_all = _as_pair(x, y)
    if len(d_all) == 0:
        raise DomainError("wilcoxon_signed_rank needs at least one pair")
    median = float(np.median(d_all))
    lo, hi = (float(q) for q in np.percentile(d_all, [2.5, 97.5]))
    d = d_all[d_all != 0]
    n = len(d)
    if n == 0:
        return TestResult(None, None, median, lo, hi, len(d_all))
    ranks = midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    total = float(ranks.sum())
    statistic = 2.0 * w_plus - total
    if method == "auto":
        method = "exact" if n <= EXACT_WILCOXON_MAX_N else "approx"
    if method == "exact":
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        counts = _signed_rank_null(doubled)
        sums = np.arange(len(counts))
        observed = abs(2 * int(doubled[d > 0].sum()) - int(doubled.sum()))
        extreme = np.abs(2 * sums - int(doubled.sum())) >= observed
        p = float(counts[extreme].sum() / counts.sum())
    elif method == "approx":
        sd = math.sqrt(float(np.sum(ranks**2)) / 4.0)
        z = (abs(w_plus - total / 2.0) - 0.5) / sd
        p = min(1.0, 2.0 * norm_sf(z))
    else:
        raise DomainError(f"unknown method {method!r}")
    return TestResult(statistic, min(1.0, p), median, lo, hi, len(d_all))


def _two_samples(x, y) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(x, dtype=float).reshape(-1)
    b = np.asarray(y, dtype=float).reshape(-1)
    if len(a) < 2 or len(b) < 2:
        raise DomainError("effect sizes need at least 2 observations per sample")
    return a, b


def cohens_d_pooled(x, y) -> float | None:
    """(mean_x - mean_y) / pooled SD with (n-1) weights; None when the SD is 0."""
    a, b = _two_samples(x, y)
    n1, n2 = len(a), len(b)
    s2 = ((n1 - 1) * np.var(a, ddof=1) + (n2 - 1) * np.var(b, ddof=1)) / (n1 + n2 - 2)
    if s2 == 0:
        return None
    return float((np.mean(a) - np.mean(b)) / math.sqrt(s2))


def cohens_d_avgvar(x, y) -> float | None:
    """(mean_x - mean_y) / sqrt((var_x + var_y) / 2); None when both variances are 0."""
    a, b = _two_samples(x, y)
    s2 = (np.var(a, ddof=1) + np.var(b, ddof=1)) / 2.0
    if s2 == 0:
        return None
    return float((np.mean(a) - np.mean(b)) / math.sqrt(s2))


def interpret_d(d: float | None) -> str | None:
    if d is None:
        return None
    m = abs(d)
    if m < 0.2:
        return "negligible"
    if m < 0.5:
        return "small"
    if m < 0.8:
        return "medium"
    return "large"


def bonferroni(p: float | None, m: int) -> float | None:
    return None if p is None else min(1.0, p * m)
