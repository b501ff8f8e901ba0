"""Special functions and the F / normal quantiles used by the test and the interval.

Everything here is scalar, dependency-free and pure. ``ln_gamma`` uses the
Lanczos approximation with g = 7 and the usual nine-term coefficient set
(relative error around 1e-15 on the positive axis). The regularized incomplete
beta function is a modified-Lentz continued fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConvergenceError

__all__ = [
    "FDist",
    "ln_gamma",
    "ln_beta",
    "reg_inc_beta",
    "f_cdf",
    "f_sf",
    "f_upper_quantile",
    "normal_cdf",
    "normal_quantile",
]

LANCZOS_G = 7.0
LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_HALF_LN_2PI = 0.5 * math.log(2.0 * math.pi)

CF_MAX_ITER = 300
CF_EPS = 1e-14
_FPMIN = 1e-300


@dataclass(frozen=True)
class FDist:
    """Fisher F distribution with ``d1`` numerator and ``d2`` denominator df."""

    d1: int
    d2: int

    def __post_init__(self):
        if int(self.d1) != self.d1 or int(self.d2) != self.d2:
            raise ValueError(f"degrees of freedom must be integers, got ({self.d1}, {self.d2})")
        if self.d1 < 1 or self.d2 < 1:
            raise ValueError(f"degrees of freedom must be >= 1, got ({self.d1}, {self.d2})")


def ln_gamma(x: float) -> float:
    """Natural log of the gamma function for ``x > 0``."""
    x = float(x)
    if not x > 0.0 or math.isinf(x):
        raise ValueError(f"ln_gamma requires a finite x > 0, got {x}")
    if x < 0.5:
        # reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
        return math.log(math.pi / math.sin(math.pi * x)) - ln_gamma(1.0 - x)
    z = x - 1.0
    acc = LANCZOS_COEF[0]
    for k in range(1, len(LANCZOS_COEF)):
        acc += LANCZOS_COEF[k] / (z + k)
    t = z + LANCZOS_G + 0.5
    return _HALF_LN_2PI + (z + 0.5) * math.log(t) - t + math.log(acc)


def ln_beta(a: float, b: float) -> float:
    return ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)


def _beta_cf(x: float, a: float, b: float) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) <= CF_EPS:
            return h
    raise ConvergenceError(
        f"incomplete beta continued fraction did not converge in {CF_MAX_ITER} "
        f"iterations (x={x}, a={a}, b={b})"
    )


def reg_inc_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    x, a, b = float(x), float(a), float(b)
    if not (a > 0.0 and b > 0.0):
        raise ValueError(f"reg_inc_beta requires a, b > 0, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"reg_inc_beta requires 0 <= x <= 1, got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = a * math.log(x) + b * math.log1p(-x) - ln_beta(a, b)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        val = front * _beta_cf(x, a, b) / a
    else:
        val = 1.0 - front * _beta_cf(1.0 - x, b, a) / b
    return min(1.0, max(0.0, val))


def _beta_pdf(x: float, a: float, b: float) -> float:
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return math.exp((a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) - ln_beta(a, b))


def f_cdf(dist: FDist, x: float) -> float:
    """P(F <= x) for F ~ F(d1, d2)."""
    x = float(x)
    if x < 0.0 or math.isnan(x):
        raise ValueError(f"f_cdf requires x >= 0, got {x}")
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    d1, d2 = dist.d1, dist.d2
    return reg_inc_beta(d1 * x / (d1 * x + d2), 0.5 * d1, 0.5 * d2)


def f_sf(dist: FDist, x: float) -> float:
    """Upper tail P(F > x), computed without the 1 - cdf cancellation."""
    x = float(x)
    if x < 0.0 or math.isnan(x):
        raise ValueError(f"f_sf requires x >= 0, got {x}")
    if x == 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    d1, d2 = dist.d1, dist.d2
    return reg_inc_beta(d2 / (d1 * x + d2), 0.5 * d2, 0.5 * d1)


def _inv_reg_inc_beta(p: float, a: float, b: float, max_iter: int = 200) -> float:
    # bracketed Newton on y in (0, 1); bisection whenever Newton leaves the bracket
    lo, hi = 0.0, 1.0
    y = a / (a + b)
    for _ in range(max_iter):
        g = reg_inc_beta(y, a, b) - p
        if abs(g) <= 1e-14:
            return y
        if g > 0.0:
            hi = y
        else:
            lo = y
        dens = _beta_pdf(y, a, b)
        step_ok = False
        if dens > 0.0 and math.isfinite(dens):
            y_new = y - g / dens
            step_ok = lo < y_new < hi
        if not step_ok:
            y_new = 0.5 * (lo + hi)
        if hi - lo <= 4e-16 * max(hi, 1e-300) or y_new == y:
            return y_new
        y = y_new
    raise ConvergenceError(f"inverse incomplete beta did not converge (p={p}, a={a}, b={b})")


def f_upper_quantile(dist: FDist, delta: float) -> float:
    """The delta upper quantile q of F(d1, d2), i.e. f_cdf(dist, q) = 1 - delta."""
    delta = float(delta)
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    a, b = 0.5 * dist.d1, 0.5 * dist.d2
    y = _inv_reg_inc_beta(1.0 - delta, a, b)
    if y >= 1.0:
        raise ConvergenceError(f"F quantile overflow for {dist} at delta={delta}")
    return dist.d2 * y / (dist.d1 * (1.0 - y))


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-float(z) / math.sqrt(2.0))


# Acklam's rational approximation, refined below by Halley steps
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)


def normal_quantile(p: float) -> float:
    """Standard normal quantile: z with Phi(z) = p."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"normal_quantile requires 0 < p < 1, got {p}")
    p_low = 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        z = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    elif p <= 1.0 - p_low:
        q = p - 0.5
        r = q * q
        z = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
            ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        )
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        z = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    for _ in range(2):
        if p < 0.5:
            err = normal_cdf(z) - p
        else:
            # Phi(z) - p written via the upper tail to keep precision near p = 1
            err = (1.0 - p) - 0.5 * math.erfc(z / math.sqrt(2.0))
        dens = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        if dens == 0.0:
            break
        u = err / dens
        z = z - u / (1.0 + 0.5 * z * u)
    return z
