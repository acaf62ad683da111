"""Slow, obviously-correct reference computations used as test oracles.

Deliberately written with different arithmetic than the library (Decimal
instead of Fraction, plain Python lists instead of numpy).
"""

from collections import Counter
from decimal import ROUND_CEILING, Decimal
from fractions import Fraction
import math

FIELDS = {
    "median": 50, "p5": 5, "p25": 25, "p90": 90, "p95": 95, "p99": 99,
    "p999": 99.9, "p9999": 99.99, "p99999": 99.999,
}


def rank(p, n):
    r = (Decimal(str(p)) * n / 100).to_integral_value(rounding=ROUND_CEILING)
    return max(1, int(r))


def percentile(xs, p):
    ordered = sorted(xs)
    return ordered[rank(p, len(ordered)) - 1]


def summary(xs):
    ordered = sorted(xs)
    out = {name: ordered[rank(p, len(ordered)) - 1] for name, p in FIELDS.items()}
    out["count"] = len(ordered)
    out["mean"] = float(Fraction(sum(ordered), len(ordered)))
    out["max"] = ordered[-1]
    out["min"] = ordered[0]
    return out


def pooled_t(a, b):
    na, nb = len(a), len(b)
    ma, mb = sum(a) / na, sum(b) / nb
    va = sum((x - ma) ** 2 for x in a) / (na - 1)
    vb = sum((x - mb) ** 2 for x in b) / (nb - 1)
    sp2 = ((na - 1) * va + (nb - 1) * vb) / (na + nb - 2)
    return (ma - mb) / math.sqrt(sp2 * (1 / na + 1 / nb))


def quorum(replies, k):
    values = sorted(replies)
    return values[k - 1] if len(values) >= k else None


def histogram(xs, width):
    return dict(sorted(Counter((x // width) * width for x in xs).items()))
