"""The high-dimensional F-test for the target random effect and the interval for sigma_nu^2."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NumericalError
from .ew import EwFit
from .projections import MixedData, ProjectionSet, Whitening
from .special import FDist, f_sf, f_upper_quantile, normal_quantile

__all__ = [
    "TestResult",
    "VarianceEstimates",
    "CiResult",
    "f_ew_test",
    "f_statistic",
    "variance_estimates",
    "ci_sigma_nu",
]


@dataclass(frozen=True)
class TestResult:
    f_stat: float
    df: tuple
    p_value: float
    delta: float
    reject: bool
    critical_value: float

    __test__ = False  # keep pytest from collecting this as a test class

    def to_dict(self) -> dict:
        return {
            "f_stat": self.f_stat,
            "df": list(self.df),
            "p_value": self.p_value,
            "delta": self.delta,
            "reject": self.reject,
            "critical_value": self.critical_value,
        }


@dataclass(frozen=True)
class VarianceEstimates:
    """Plug-in variance estimates.

    ``sigma_nu2`` / ``sigma_gamma2`` are the reported values (set to 0 when
    negative and truncation is on); the ``*_raw`` fields keep the untruncated
    statistics, which is what the interval is centered on.
    """

    sigma_eps2: float
    sigma_nu2: float
    sigma_nu2_raw: float
    d_bar_hat: float
    sigma_a2: float
    sigma_b2: float
    n_a: int
    n_b: int
    n_c: int = 0
    sigma_gamma2: Optional[float] = None
    sigma_gamma2_raw: Optional[float] = None
    lambda_bar_hat: Optional[float] = None
    truncated: dict = field(default_factory=dict)

    @property
    def nu_prior_var(self) -> float:
        """Plug-in for sigma_nu^2 itself: sigma_nu2 / d_hat."""
        return self.sigma_nu2 / self.d_bar_hat

    @property
    def gamma_prior_var(self) -> float:
        if self.sigma_gamma2 is None or not self.lambda_bar_hat:
            return 0.0
        return self.sigma_gamma2 / self.lambda_bar_hat

    def to_dict(self) -> dict:
        return {
            "sigma_eps2": self.sigma_eps2,
            "sigma_nu2": self.sigma_nu2,
            "sigma_nu2_raw": self.sigma_nu2_raw,
            "sigma_gamma2": self.sigma_gamma2,
            "sigma_gamma2_raw": self.sigma_gamma2_raw,
            "d_bar_hat": self.d_bar_hat,
            "lambda_bar_hat": self.lambda_bar_hat,
            "sigma_a2": self.sigma_a2,
            "sigma_b2": self.sigma_b2,
            "n_a": self.n_a,
            "n_b": self.n_b,
            "n_c": self.n_c,
            "truncated": dict(self.truncated),
        }


@dataclass(frozen=True)
class CiResult:
    lower: float
    upper: float
    level: float
    center: float

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def to_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "level": self.level, "center": self.center}


# relative squared residual below which the B block counts as fitted exactly
ZERO_RESID_TOL = 1e-24


def f_statistic(a_resid: np.ndarray, b_resid: np.ndarray, scale: float = 0.0) -> float:
    """Ratio of mean squares. ``scale`` is ||BY||^2; a denominator at or below
    ZERO_RESID_TOL * scale is treated as zero."""
    n_a, n_b = a_resid.size, b_resid.size
    if n_b == 0:
        raise NumericalError("n_b = 0: there is no pure-noise block to scale the F statistic")
    den = float(b_resid @ b_resid)
    if den <= ZERO_RESID_TOL * scale or den == 0.0:
        raise NumericalError("F statistic undefined: the B-block residual is zero")
    return (float(a_resid @ a_resid) / n_a) / (den / n_b)


def _decide(f_stat: float, n_a: int, n_b: int, delta: float) -> TestResult:
    dist = FDist(n_a, n_b)
    crit = f_upper_quantile(dist, delta)
    p_value = f_sf(dist, f_stat)
    # the quantile is only accurate to ~1e-10 in probability, so decide on the
    # p-value and keep the two criteria consistent by construction
    reject = p_value < delta
    return TestResult(
        f_stat=f_stat,
        df=(n_a, n_b),
        p_value=p_value,
        delta=delta,
        reject=bool(reject),
        critical_value=crit,
    )


def f_ew_test(data: MixedData, pset: ProjectionSet, fit: EwFit, delta: float = 0.05) -> TestResult:
    """F test of sigma_nu^2 = 0 using residuals of a fit on the stacked (AY; BY) data."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    resid = data.Y - data.X @ fit.beta_hat
    by = pset.B @ data.Y
    f_stat = f_statistic(pset.A @ resid, pset.B @ resid, scale=float(by @ by))
    return _decide(f_stat, pset.n_a, pset.n_b, delta)


def variance_estimates(
    data: MixedData,
    pset: ProjectionSet,
    wh: Whitening,
    fit: EwFit,
    truncate: bool = True,
) -> VarianceEstimates:
    """Estimate sigma_eps^2, sigma_nu^2 (scaled by d_bar) and sigma_gamma^2 (scaled by lambda_bar).

    ``pset`` should be ``wh.projections`` when whitening dropped rows; a
    mismatch in n_a is rejected.
    """
    if pset.n_b == 0:
        raise NumericalError("n_b = 0: sigma_eps^2 cannot be estimated (no pure-noise block)")
    if pset.n_a != wh.d.size:
        raise ValueError(f"whitening has {wh.d.size} eigenvalues but the projection set has n_a={pset.n_a}")
    n = data.n
    resid = data.Y - data.X @ fit.beta_hat
    b_resid = pset.B @ resid
    sigma_eps2 = float(b_resid @ b_resid) / pset.n_b

    tr_d_inv = wh.trace_d_inv
    wa = wh.whiten_a(pset.A @ resid)
    sigma_nu2_raw = float(wa @ wa) / tr_d_inv - sigma_eps2
    d_hat = pset.n_a / tr_d_inv

    truncated = {"nu": False, "gamma": False}
    sigma_nu2 = sigma_nu2_raw
    if truncate and sigma_nu2 < 0.0:
        sigma_nu2 = 0.0
        truncated["nu"] = True

    sigma_gamma2 = sigma_gamma2_raw = lambda_hat = None
    n_c = 0
    if wh.lam.size and pset.n_c == wh.lam.size:
        n_c = pset.n_c
        tr_l_inv = wh.trace_lam_inv
        wc = wh.whiten_c(pset.C @ resid)
        sigma_gamma2_raw = float(wc @ wc) / tr_l_inv - sigma_eps2
        lambda_hat = n_c / tr_l_inv
        sigma_gamma2 = sigma_gamma2_raw
        if truncate and sigma_gamma2 < 0.0:
            sigma_gamma2 = 0.0
            truncated["gamma"] = True

    per_k = sigma_nu2 / d_hat + sigma_eps2 / wh.d
    sigma_a2 = 2.0 * n * float(per_k @ per_k) / tr_d_inv**2
    sigma_b2 = 2.0 * n * sigma_eps2**2 / pset.n_b
    return VarianceEstimates(
        sigma_eps2=sigma_eps2,
        sigma_nu2=sigma_nu2,
        sigma_nu2_raw=sigma_nu2_raw,
        d_bar_hat=d_hat,
        sigma_a2=sigma_a2,
        sigma_b2=sigma_b2,
        n_a=pset.n_a,
        n_b=pset.n_b,
        n_c=n_c,
        sigma_gamma2=sigma_gamma2,
        sigma_gamma2_raw=sigma_gamma2_raw,
        lambda_bar_hat=lambda_hat,
        truncated=truncated,
    )


def ci_sigma_nu(est: VarianceEstimates, n: int, level: float = 0.95) -> CiResult:
    """Asymptotic normal interval for sigma_nu^2 centered at sigma_nu2_raw / d_hat."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if not est.d_bar_hat > 0.0:
        raise NumericalError(f"d_hat must be positive, got {est.d_bar_hat}")
    scale2 = est.sigma_a2 + est.sigma_b2
    if not scale2 > 0.0:
        raise NumericalError("sigma_a^2 + sigma_b^2 must be positive to form the interval")
    z = normal_quantile(1.0 - (1.0 - level) / 2.0)
    center = est.sigma_nu2_raw / est.d_bar_hat
    half = z * math.sqrt(scale2) / (est.d_bar_hat * math.sqrt(n))
    return CiResult(lower=center - half, upper=center + half, level=level, center=center)
