"""Numerical special functions for the hypothesis tests.

The regularized incomplete gamma function is implemented here (series for
small arguments, continued fraction otherwise) rather than pulled from a
numeric library, so the chi-square tail needs nothing beyond the standard
library. The normal tail uses math.erfc.
"""

from __future__ import annotations

import math

_EPS = 1e-16
_MAX_ITER = 500


def _lower_gamma_series(s: float, x: float) -> float:
    """P(s, x) by series expansion; accurate for x < s + 1."""
    term = 1.0 / s
    total = term
    a = s
    for _ in range(_MAX_ITER):
        a += 1.0
        term *= x / a
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + s * math.log(x) - math.lgamma(s))


def _upper_gamma_cf(s: float, x: float) -> float:
    """Q(s, x) by modified Lentz continued fraction; accurate for x >= s + 1."""
    tiny = 1e-300
    b = x + 1.0 - s
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + s * math.log(x) - math.lgamma(s))


def regularized_gamma_lower(s: float, x: float) -> float:
    """P(s, x), the regularized lower incomplete gamma function."""
    if s <= 0:
        raise ValueError("shape must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 0.0
    if x < s + 1.0:
        return min(1.0, _lower_gamma_series(s, x))
    return max(0.0, 1.0 - _upper_gamma_cf(s, x))


def regularized_gamma_upper(s: float, x: float) -> float:
    """Q(s, x) = 1 - P(s, x)."""
    if s <= 0:
        raise ValueError("shape must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 1.0
    if x < s + 1.0:
        return max(0.0, 1.0 - _lower_gamma_series(s, x))
    return min(1.0, _upper_gamma_cf(s, x))


def chi2_sf(x: float, df: int) -> float:
    """Survival function of the chi-square distribution."""
    if df < 1:
        raise ValueError("df must be >= 1")
    return regularized_gamma_upper(df / 2.0, x / 2.0)


def normal_sf(z: float) -> float:
    """P(Z >= z) for a standard normal variable."""
    return math.erfc(z / math.sqrt(2.0)) / 2.0
