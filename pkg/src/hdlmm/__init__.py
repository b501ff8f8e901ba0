"""Inference for high-dimensional Gaussian linear mixed models.

Y = X beta + Z nu + W gamma + eps with a sparse, high-dimensional beta. The
fixed effects are removed by exponential-weighting aggregation on projected
data; the projections A, B and C isolate the target random effect, pure noise
and the nuisance random effect.
"""

from .data import DatasetSpec, load_dataset, read_dataset, write_dataset
from .eb import EbEstimate, OracleInputs, eb_estimate, ls_variants, oracle_estimate, spd_solve
from .errors import ConvergenceError, HdlmmError, IdentifiabilityError, NumericalError
from .ew import EwConfig, EwFit, choose_alpha, estimate_sparsity, exact_ew, fit_ew, ls_fit, mh_ew
from .inference import CiResult, TestResult, VarianceEstimates, ci_sigma_nu, f_ew_test, variance_estimates
from .pipeline import Analysis
from .projections import (
    MixedData,
    ProjectionSet,
    Whitening,
    build_projections,
    orthonormal_complement,
    symmetric_eig,
    whiten,
)
from .sim import SimConfig, SimResult, format_table, table_grid, run_study
from .special import FDist, f_cdf, f_sf, f_upper_quantile, ln_gamma, normal_cdf, normal_quantile, reg_inc_beta

__version__ = "0.1.0"

__all__ = [
    "Analysis",
    "CiResult",
    "ConvergenceError",
    "DatasetSpec",
    "EbEstimate",
    "EwConfig",
    "EwFit",
    "FDist",
    "HdlmmError",
    "IdentifiabilityError",
    "MixedData",
    "NumericalError",
    "OracleInputs",
    "ProjectionSet",
    "SimConfig",
    "SimResult",
    "TestResult",
    "VarianceEstimates",
    "Whitening",
    "build_projections",
    "choose_alpha",
    "ci_sigma_nu",
    "eb_estimate",
    "estimate_sparsity",
    "exact_ew",
    "f_cdf",
    "f_ew_test",
    "f_sf",
    "f_upper_quantile",
    "fit_ew",
    "format_table",
    "ln_gamma",
    "load_dataset",
    "ls_fit",
    "ls_variants",
    "mh_ew",
    "normal_cdf",
    "normal_quantile",
    "oracle_estimate",
    "orthonormal_complement",
    "table_grid",
    "read_dataset",
    "reg_inc_beta",
    "run_study",
    "spd_solve",
    "symmetric_eig",
    "variance_estimates",
    "whiten",
    "write_dataset",
]
