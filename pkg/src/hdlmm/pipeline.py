"""End-to-end analysis of one dataset: projections, model size, EW fits, inference."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .eb import EbEstimate, eb_estimate
from .errors import NumericalError
from .ew import EwConfig, EwFit, choose_alpha, estimate_sparsity, fit_ew
from .inference import CiResult, TestResult, VarianceEstimates, ci_sigma_nu, f_ew_test, variance_estimates
from .projections import MixedData, build_projections, whiten

__all__ = ["Analysis", "derived_seed"]

# purposes mixed into the user seed; the simulation uses the same layout per trial
_SEED_ES, _SEED_FIT_Q, _SEED_FIT_FULL = 0, 1, 2


def derived_seed(seed: int, purpose: int) -> int:
    return int(np.random.SeedSequence([int(seed), purpose]).generate_state(1, np.uint64)[0])


@dataclass(eq=False)
class Analysis:
    """Lazily evaluated pipeline for one dataset.

    ``ew.u`` fixes the model size; when it is None the size is estimated by
    exponential screening on the B block. ``ew.alpha`` None means 4 ||Y||^2 / n.
    """

    data: MixedData
    ew: EwConfig = EwConfig()
    seed: int = 0
    c_orthogonal_to_a: bool = True

    @cached_property
    def whitening(self):
        pset = build_projections(self.data.Z, self.data.W, c_orthogonal_to_a=self.c_orthogonal_to_a)
        return whiten(pset, self.data.Z, self.data.W)

    @property
    def projections(self):
        return self.whitening.projections

    def _require_noise_block(self, need: int = 1):
        n_b = self.projections.n_b
        if n_b < need:
            raise NumericalError(
                f"n_b = {n_b}: the pure-noise block is too small (v + r leaves no residual degrees of freedom)"
            )

    @cached_property
    def alpha(self) -> float:
        return self.ew.alpha if self.ew.alpha is not None else choose_alpha(self.data.Y)

    @cached_property
    def u(self) -> int:
        pset = self.projections
        if self.ew.u is not None:
            u = self.ew.u
        else:
            self._require_noise_block(2)
            cfg = self.ew.replace(alpha=self.alpha, seed=derived_seed(self.seed, _SEED_ES))
            u = estimate_sparsity(pset.B @ self.data.Y, pset.B @ self.data.X, cfg)
        return int(min(u, pset.n_a + pset.n_b - 1, self.data.p))

    def _cfg(self, purpose: int) -> EwConfig:
        return self.ew.replace(u=self.u, alpha=self.alpha, seed=derived_seed(self.seed, purpose))

    @cached_property
    def fit_q(self) -> EwFit:
        """EW fit on the stacked (AY; BY) data, used by the test and the interval."""
        self._require_noise_block()
        Q = self.projections.Q
        return fit_ew(Q @ self.data.Y, Q @ self.data.X, self._cfg(_SEED_FIT_Q))

    @cached_property
    def fit_full(self) -> EwFit:
        """EW fit on all rows, used for the EB mean."""
        return fit_ew(self.data.Y, self.data.X, self._cfg(_SEED_FIT_FULL))

    def test(self, delta: float = 0.05) -> TestResult:
        return f_ew_test(self.data, self.projections, self.fit_q, delta)

    def variances(self, truncate: bool = True) -> VarianceEstimates:
        return variance_estimates(self.data, self.projections, self.whitening, self.fit_q, truncate=truncate)

    def ci(self, level: float = 0.95) -> CiResult:
        return ci_sigma_nu(self.variances(), self.data.n, level)

    def eb(self, warn: bool = True) -> EbEstimate:
        est = variance_estimates(self.data, self.projections, self.whitening, self.fit_full, truncate=True)
        if warn:
            return eb_estimate(self.data, self.fit_full, est)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return eb_estimate(self.data, self.fit_full, est)

    def summary(self) -> dict:
        pset = self.projections
        return {
            "n": self.data.n,
            "p": self.data.p,
            "v": self.data.v,
            "r": self.data.r,
            "n_a": pset.n_a,
            "n_b": pset.n_b,
            "n_c": pset.n_c,
            "u": self.u,
            "alpha": self.alpha,
        }
