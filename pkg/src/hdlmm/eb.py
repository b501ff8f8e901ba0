"""Empirical Bayes prediction of eta = mu + Z nu.

The estimators share one shape,

    eta_hat = m + s_nu Z Z^T (s_nu Z Z^T + s_gamma W W^T + s_eps I)^{-1} (Y - m),

with either plug-ins (``eb_estimate``), the truth (``oracle_estimate``), or a
least-squares fit on a known support (``ls_variants``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NumericalError
from .ew import EwFit, support_fit
from .inference import TestResult, VarianceEstimates, f_ew_test, variance_estimates
from .projections import MixedData, ProjectionSet, Whitening

__all__ = [
    "EbEstimate",
    "OracleInputs",
    "spd_solve",
    "shrink",
    "eb_estimate",
    "oracle_estimate",
    "ls_variants",
    "LsVariants",
]

PIVOT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class EbEstimate:
    eta_hat: np.ndarray
    mu_hat: np.ndarray
    plugins: Optional[VarianceEstimates] = None


@dataclass(frozen=True)
class OracleInputs:
    """True mean and variance components.

    sigma_nu2 and sigma_gamma2 may be 0 (the simulation's null settings);
    sigma_eps2 must be positive so the marginal covariance is invertible.
    """

    mu: np.ndarray
    sigma_nu2: float
    sigma_gamma2: float
    sigma_eps2: float

    def __post_init__(self):
        if self.sigma_nu2 < 0 or self.sigma_gamma2 < 0:
            raise ValueError("variance components must be nonnegative")
        if not self.sigma_eps2 > 0:
            raise ValueError("sigma_eps2 must be positive")


def spd_solve(M, rhs) -> np.ndarray:
    """Solve M x = rhs for symmetric positive definite M by Cholesky."""
    M = np.asarray(M, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"spd_solve needs a square matrix, got {M.shape}")
    scale = float(np.max(np.abs(np.diag(M)))) if M.size else 0.0
    if not scale > 0.0:
        raise NumericalError("spd_solve: matrix has no positive diagonal entry")
    try:
        factor = cho_factor(M, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"spd_solve: matrix is not positive definite ({exc})") from exc
    pivots = np.diag(factor[0]) ** 2
    if pivots.min() <= PIVOT_TOL * scale:
        raise NumericalError(
            f"spd_solve: pivot {pivots.min():.3e} below {PIVOT_TOL:g} x max diagonal"
        )
    return cho_solve(factor, rhs, check_finite=False)


def shrink(Y, mean, Z, W, s_nu: float, s_gamma: float, s_eps: float) -> np.ndarray:
    """Posterior mean of mean + Z nu given Y under Gaussian priors with the given variances."""
    Y = np.asarray(Y, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if s_nu == 0.0:
        return mean.copy()
    ZZt = Z @ Z.T
    cov = s_nu * ZZt + s_eps * np.eye(Y.size)
    if s_gamma > 0.0 and W.shape[1]:
        cov += s_gamma * (W @ W.T)
    return mean + s_nu * (ZZt @ spd_solve(cov, Y - mean))


def eb_estimate(data: MixedData, fit_full: EwFit, est: VarianceEstimates) -> EbEstimate:
    """Plug-in empirical Bayes estimate of eta.

    ``fit_full`` is the exponential-weighting fit of Y on X over all rows. The
    nonnegative (truncated) plug-ins are used. Without a C block the nuisance
    variance cannot be estimated and its term is dropped.
    """
    if not est.sigma_eps2 > 0.0:
        raise NumericalError(f"sigma_eps^2 plug-in must be positive, got {est.sigma_eps2}")
    mu_hat = data.X @ fit_full.beta_hat
    s_nu = max(est.nu_prior_var, 0.0)
    if data.r and est.sigma_gamma2 is None:
        warnings.warn(
            "n_c = 0: sigma_gamma^2 is unavailable, dropping the nuisance term from the EB estimate",
            RuntimeWarning,
            stacklevel=2,
        )
    s_gamma = max(est.gamma_prior_var, 0.0)
    eta = shrink(data.Y, mu_hat, data.Z, data.W, s_nu, s_gamma, est.sigma_eps2)
    return EbEstimate(eta_hat=eta, mu_hat=mu_hat, plugins=est)


def oracle_estimate(data: MixedData, oracle: OracleInputs) -> EbEstimate:
    """Bayes estimator of eta given the true mean and variance components."""
    mu = np.asarray(oracle.mu, dtype=float)
    eta = shrink(data.Y, mu, data.Z, data.W, oracle.sigma_nu2, oracle.sigma_gamma2, oracle.sigma_eps2)
    return EbEstimate(eta_hat=eta, mu_hat=mu.copy())


@dataclass(frozen=True, eq=False)
class LsVariants:
    f_ls: TestResult
    var_ls: VarianceEstimates
    eta_ls: EbEstimate
    var_ls_full: VarianceEstimates

    def __iter__(self):
        return iter((self.f_ls, self.var_ls, self.eta_ls))


def ls_variants(
    data: MixedData,
    pset: ProjectionSet,
    wh: Whitening,
    sparse_set,
    delta: float = 0.05,
    truncate: bool = True,
) -> LsVariants:
    """Test, variance estimates and EB estimate with least squares on a known support.

    Mirrors the EW pipeline: the test and the interval statistics use the
    least-squares fit on the stacked (AY; BY) data, the EB estimate uses the
    fit on all rows. Unpacks as ``(f_ls, var_ls, eta_ls)``.
    """
    support = sorted(set(int(j) for j in sparse_set))
    if not support:
        raise ValueError("sparse_set must be non-empty")
    if len(support) >= min(pset.n_a, pset.n_b):
        raise ValueError(
            f"|sparse_set| = {len(support)} must be below min(n_a, n_b) = {min(pset.n_a, pset.n_b)}"
        )
    Q = pset.Q
    fit_q = support_fit(Q @ data.Y, Q @ data.X, support)
    f_ls = f_ew_test(data, pset, fit_q, delta)
    var_ls = variance_estimates(data, pset, wh, fit_q, truncate=truncate)

    fit_full = support_fit(data.Y, data.X, support)
    var_full = variance_estimates(data, pset, wh, fit_full, truncate=True)
    eta_ls = eb_estimate(data, fit_full, var_full)
    return LsVariants(f_ls=f_ls, var_ls=var_ls, eta_ls=eta_ls, var_ls_full=var_full)
