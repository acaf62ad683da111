"""Percentiles, summaries, histograms, CDFs and the two-sample t-test."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np
from scipy import special

from ..errors import EmptySamples, InsufficientSamples, ZeroVariance

# (field name, percentile) in table column order, mean slotted in by summarize
SUMMARY_PERCENTILES = (
    ("median", 50),
    ("p5", 5),
    ("p25", 25),
    ("p90", 90),
    ("p95", 95),
    ("p99", 99),
    ("p999", 99.9),
    ("p9999", 99.99),
    ("p99999", 99.999),
)
TABLE_COLUMNS = ("median", "p5", "p25", "mean", "p90", "p95", "p99", "p999", "p9999", "p99999", "max")

FD_FLOOR_US = 5


def _sorted(samples):
    arr = np.asarray(samples)
    if arr.size == 0:
        raise EmptySamples("no samples")
    return np.sort(arr.ravel(), kind="stable")


def nearest_rank(p, n):
    """1-based nearest rank ``ceil(p/100 * n)``, computed exactly.

    Floats are read through their shortest decimal form so that ``99.9``
    means 999/10 and not its binary approximation.
    """
    frac = Fraction(repr(float(p))) if isinstance(p, (float, np.floating)) else Fraction(int(p))
    if not 0 < frac <= 100:
        raise ValueError(f"percentile {p} outside (0, 100]")
    return max(1, math.ceil(frac * n / 100))


def _pick(sorted_arr, p):
    return sorted_arr[nearest_rank(p, len(sorted_arr)) - 1].item()


def percentile(samples, p):
    """Nearest-rank percentile; ``percentile(s, 100) == max(s)``."""
    return _pick(_sorted(samples), p)


def _exact_mean(arr):
    if np.issubdtype(arr.dtype, np.integer):
        return int(arr.sum(dtype=np.int64)) / arr.size
    return math.fsum(arr.tolist()) / arr.size


@dataclass(frozen=True)
class StatsSummary:
    count: int
    median: float
    p5: float
    p25: float
    mean: float
    p90: float
    p95: float
    p99: float
    p999: float
    p9999: float
    p99999: float
    max: float
    min: float

    def row(self):
        return [getattr(self, c) for c in TABLE_COLUMNS]

    def as_dict(self):
        return asdict(self)


def summarize(samples):
    arr = _sorted(samples)
    fields = {name: _pick(arr, p) for name, p in SUMMARY_PERCENTILES}
    return StatsSummary(
        count=int(arr.size),
        mean=_exact_mean(arr),
        max=arr[-1].item(),
        min=arr[0].item(),
        **fields,
    )


@dataclass(frozen=True)
class Histogram:
    bin_width_us: int
    edges: np.ndarray
    counts: np.ndarray

    @property
    def bins(self):
        return dict(zip(self.edges.tolist(), self.counts.tolist()))

    @property
    def total(self):
        return int(self.counts.sum())


def freedman_diaconis_width(sorted_arr):
    iqr = _pick(sorted_arr, 75) - _pick(sorted_arr, 25)
    width = 2 * iqr / sorted_arr.size ** (1 / 3)
    return max(FD_FLOOR_US, math.ceil(width))


def histogram(samples, bin_width_us=0):
    """Counts per half-open bin ``[edge, edge + width)``, edges on multiples of the width.

    ``bin_width_us <= 0`` picks the width by Freedman-Diaconis, floored at 5 us.
    """
    arr = _sorted(samples)
    width = bin_width_us if bin_width_us > 0 else freedman_diaconis_width(arr)
    edges = np.floor_divide(arr, width) * width
    uniq, counts = np.unique(edges, return_counts=True)
    return Histogram(width, uniq, counts)


@dataclass(frozen=True)
class CdfPoints:
    values: np.ndarray
    fractions: np.ndarray

    def __len__(self):
        return len(self.values)

    def points(self):
        return list(zip(self.values.tolist(), self.fractions.tolist()))


def cdf(samples, min_fraction=0.0):
    """Empirical CDF, one point per distinct value.

    ``min_fraction`` keeps only the upper part of the curve, e.g. 0.95 for a
    view of the slowest 5% of observations.
    """
    arr = _sorted(samples)
    uniq, counts = np.unique(arr, return_counts=True)
    cum = np.cumsum(counts)
    fractions = cum / arr.size
    fractions[-1] = 1.0
    keep = fractions >= min_fraction
    return CdfPoints(uniq[keep], fractions[keep])


@dataclass(frozen=True)
class TResult:
    t_statistic: float
    p_value: float
    df: float


def two_sample_t(a, b):
    """Student's two-sample t-test with pooled variance, two-sided.

    Means and sums of squares use exactly rounded summation, so the result
    does not depend on sample order. Above 1000 degrees of freedom the p-value
    comes from the normal approximation; it underflows to 0 for extreme t.
    """
    a = np.asarray(a, dtype=float).ravel().tolist()
    b = np.asarray(b, dtype=float).ravel().tolist()
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise InsufficientSamples(f"need at least 2 samples per side, got {na} and {nb}")
    ma = math.fsum(a) / na
    mb = math.fsum(b) / nb
    ssa = math.fsum((x - ma) ** 2 for x in a)
    ssb = math.fsum((x - mb) ** 2 for x in b)
    df = na + nb - 2
    se = math.sqrt((ssa + ssb) / df * (1 / na + 1 / nb))
    if se == 0:
        if ma == mb:
            raise ZeroVariance("both samples are constant and equal")
        return TResult(math.copysign(math.inf, ma - mb), 0.0, float(df))
    t = (ma - mb) / se
    if df > 1000:
        p = math.erfc(abs(t) / math.sqrt(2))
    else:
        p = 2 * float(special.stdtr(df, -abs(t)))
    return TResult(t, min(1.0, max(0.0, p)), float(df))
