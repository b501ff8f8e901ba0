"""Monte Carlo study: equicorrelated fixed effects, down-sampled crossed random effects.

One design (X, Z, W) is drawn per study and kept fixed; each trial redraws
(nu, gamma, eps) and records the test decision, the interval for sigma_nu^2
and the prediction losses of the oracle, least-squares and EW estimators.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .eb import OracleInputs, eb_estimate, ls_variants, oracle_estimate
from .errors import HdlmmError
from .ew import EwConfig, choose_alpha, estimate_sparsity, fit_ew
from .inference import ci_sigma_nu, f_ew_test, variance_estimates
from .projections import MixedData, build_projections, whiten

__all__ = [
    "SimConfig",
    "Design",
    "Response",
    "TrialRecord",
    "SimResult",
    "equicorr_sqrt_apply",
    "gen_design",
    "gen_response",
    "run_study",
    "aggregate",
    "table_grid",
    "format_table",
    "SCHEMA",
]

SCHEMA = "hdlmm.sim/1"


@dataclass(frozen=True)
class SimConfig:
    n: int = 200
    p: int = 500
    s: int = 3
    rho: float = 0.0
    v: int = 25
    r: int = 25
    sigma_nu2: float = 0.0
    sigma_gamma2: float = 0.0
    sigma_eps2: float = 1.0
    n_trials: int = 100
    delta: float = 0.05
    ci_level: float = 0.95
    seed: int = 0
    use_ls_oracle: bool = True
    ew: EwConfig = field(default_factory=EwConfig)
    redraw_design: bool = False
    c_orthogonal_to_a: bool = True

    def __post_init__(self):
        if not 1 <= self.s <= self.p:
            raise ValueError(f"need 1 <= s <= p, got s={self.s}, p={self.p}")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")
        if self.n > self.v * self.r:
            raise ValueError(f"n={self.n} exceeds the {self.v}x{self.r} crossed grid")
        if min(self.sigma_nu2, self.sigma_gamma2) < 0 or not self.sigma_eps2 > 0:
            raise ValueError("variances must be nonnegative with sigma_eps2 > 0")
        if self.n_trials < 1:
            raise ValueError("n_trials must be positive")
        if not 0 < self.delta < 1 or not 0 < self.ci_level < 1:
            raise ValueError("delta and ci_level must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ew"] = asdict(self.ew)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SimConfig fields: {sorted(unknown)}")
        if isinstance(d.get("ew"), dict):
            d["ew"] = EwConfig(**d["ew"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Design:
    X: np.ndarray
    Z: np.ndarray
    W: np.ndarray
    beta: np.ndarray
    cells: np.ndarray

    @property
    def mu(self) -> np.ndarray:
        return self.X @ self.beta


@dataclass(frozen=True, eq=False)
class Response:
    Y: np.ndarray
    nu: np.ndarray
    gamma: np.ndarray
    eps: np.ndarray
    eta: np.ndarray


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    u: int
    f_stat: float
    reject: bool
    correct_f: bool
    ci_lower: float
    ci_upper: float
    covered: bool
    sigma_nu2_hat: float
    sigma_eps2_hat: float
    truncated_nu: bool
    loss_oracle: float
    loss_ew: float
    f_ls: float = float("nan")
    correct_f_ls: Optional[bool] = None
    ci_ls_lower: float = float("nan")
    ci_ls_upper: float = float("nan")
    covered_ls: Optional[bool] = None
    loss_ls: float = float("nan")
    acceptance_rate: float = float("nan")

    @property
    def ci_length(self) -> float:
        return self.ci_upper - self.ci_lower

    @property
    def ci_ls_length(self) -> float:
        return self.ci_ls_upper - self.ci_ls_lower

    @property
    def ci_length_clipped(self) -> float:
        """Length of the interval intersected with [0, inf)."""
        return max(self.ci_upper, 0.0) - max(self.ci_lower, 0.0)


@dataclass(frozen=True, eq=False)
class SimResult:
    config: SimConfig
    records: tuple
    n_skipped: int
    failures: tuple
    n_a: int
    n_b: int
    n_c: int
    ave_cov_f: float
    ave_cov_ci: float
    ave_len_ci: float
    ave_loss_oracle: float
    ave_loss_ew: float
    ave_cov_f_ls: float = float("nan")
    ave_cov_ci_ls: float = float("nan")
    ave_len_ci_ls: float = float("nan")
    ave_loss_ls: float = float("nan")
    ave_len_ci_clipped: float = float("nan")

    def metrics(self) -> dict:
        return {
            "ave_cov_f_ls": self.ave_cov_f_ls,
            "ave_cov_f": self.ave_cov_f,
            "ave_cov_ci_ls": self.ave_cov_ci_ls,
            "ave_cov_ci": self.ave_cov_ci,
            "ave_len_ci_ls": self.ave_len_ci_ls,
            "ave_len_ci": self.ave_len_ci,
            "ave_loss_oracle": self.ave_loss_oracle,
            "ave_loss_ls": self.ave_loss_ls,
            "ave_loss_ew": self.ave_loss_ew,
            "ave_len_ci_clipped": self.ave_len_ci_clipped,
        }

    def to_dict(self, include_records: bool = True) -> dict:
        out = {
            "schema": SCHEMA,
            "config": self.config.to_dict(),
            "n_a": self.n_a,
            "n_b": self.n_b,
            "n_c": self.n_c,
            "n_trials_completed": len(self.records),
            "n_skipped": self.n_skipped,
            "failures": list(self.failures),
            "metrics": _jsonable(self.metrics()),
        }
        if include_records:
            out["records"] = [_jsonable(asdict(r)) for r in self.records]
        return out

    def records_csv(self) -> str:
        buf = io.StringIO()
        names = [f.name for f in fields(TrialRecord)]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(names)
        for rec in self.records:
            writer.writerow([_csv_cell(getattr(rec, k)) for k in names])
        return buf.getvalue()


def _jsonable(d: dict) -> dict:
    out = {}
    for k, val in d.items():
        if isinstance(val, float) and not math.isfinite(val):
            out[k] = None
        elif isinstance(val, np.generic):
            out[k] = val.item()
        else:
            out[k] = val
    return out


def _csv_cell(val):
    if val is None:
        return ""
    if isinstance(val, float):
        return repr(val)
    return val


def equicorr_sqrt_apply(g, rho: float) -> np.ndarray:
    """Apply the symmetric square root of the equicorrelation matrix.

    Sigma^{1/2} = a I + (b / p) J with a = sqrt(1 - rho) and
    b = sqrt(1 + (p - 1) rho) - sqrt(1 - rho). Works along the last axis, so a
    matrix of standard normal rows maps to rows with covariance Sigma.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    g = np.asarray(g, dtype=float)
    p = g.shape[-1]
    a = math.sqrt(1.0 - rho)
    b = math.sqrt(1.0 + (p - 1) * rho) - a
    return a * g + (b / p) * g.sum(axis=-1, keepdims=True)


def _onehot(idx: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((idx.size, k))
    out[np.arange(idx.size), idx] = 1.0
    return out


def gen_design(cfg: SimConfig, rng: np.random.Generator) -> Design:
    if cfg.n > cfg.v * cfg.r:
        raise ValueError(f"n={cfg.n} exceeds the {cfg.v}x{cfg.r} crossed grid")
    X = equicorr_sqrt_apply(rng.standard_normal((cfg.n, cfg.p)), cfg.rho)
    beta = np.zeros(cfg.p)
    beta[: cfg.s] = 1.0
    cells = rng.choice(cfg.v * cfg.r, size=cfg.n, replace=False)
    Z = _onehot(cells // cfg.r, cfg.v)
    W = _onehot(cells % cfg.r, cfg.r)
    return Design(X=X, Z=Z, W=W, beta=beta, cells=cells)


def gen_response(design: Design, cfg: SimConfig, rng: np.random.Generator) -> Response:
    n = design.X.shape[0]
    nu = math.sqrt(cfg.sigma_nu2) * rng.standard_normal(design.Z.shape[1])
    gamma = math.sqrt(cfg.sigma_gamma2) * rng.standard_normal(design.W.shape[1])
    eps = math.sqrt(cfg.sigma_eps2) * rng.standard_normal(n)
    mu = design.mu
    eta = mu + design.Z @ nu
    Y = eta + design.W @ gamma + eps
    return Response(Y=Y, nu=nu, gamma=gamma, eps=eps, eta=eta)


def _design_rng(cfg: SimConfig, trial: int = 0) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, 0, trial])


def _trial_rng(cfg: SimConfig, trial: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, 1, trial])


def _chain_seed(cfg: SimConfig, trial: int, purpose: int) -> int:
    return int(np.random.SeedSequence([cfg.seed, 2, trial, purpose]).generate_state(1, np.uint64)[0])


class _Prepared:
    """Design-only quantities shared by every trial of a study."""

    def __init__(self, cfg: SimConfig, design: Design):
        self.design = design
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            pset = build_projections(design.Z, design.W, c_orthogonal_to_a=cfg.c_orthogonal_to_a)
        self.wh = whiten(pset, design.Z, design.W)
        self.pset = self.wh.projections
        self.Q = self.pset.Q
        self.QX = self.Q @ design.X
        self.BX = self.pset.B @ design.X


def _run_trial(cfg: SimConfig, prep: _Prepared, trial: int) -> TrialRecord:
    design, pset, wh = prep.design, prep.pset, prep.wh
    resp = gen_response(design, cfg, _trial_rng(cfg, trial))
    data = MixedData(resp.Y, design.X, design.Z, design.W)
    n = data.n

    base = cfg.ew.replace(alpha=cfg.ew.alpha if cfg.ew.alpha is not None else choose_alpha(resp.Y))
    u = cfg.ew.u
    if u is None:
        u = estimate_sparsity(
            pset.B @ resp.Y, prep.BX, base.replace(seed=_chain_seed(cfg, trial, 0))
        )
    u = min(u, pset.n_a + pset.n_b - 1, design.X.shape[1])

    fit_q = fit_ew(prep.Q @ resp.Y, prep.QX, base.replace(u=u, seed=_chain_seed(cfg, trial, 1)))
    test = f_ew_test(data, pset, fit_q, cfg.delta)
    est_q = variance_estimates(data, pset, wh, fit_q, truncate=True)
    ci = ci_sigma_nu(est_q, n, cfg.ci_level)

    fit_full = fit_ew(resp.Y, design.X, base.replace(u=u, seed=_chain_seed(cfg, trial, 2)))
    est_full = variance_estimates(data, pset, wh, fit_full, truncate=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        eta_ew = eb_estimate(data, fit_full, est_full)
    oracle = oracle_estimate(
        data, OracleInputs(design.mu, cfg.sigma_nu2, cfg.sigma_gamma2, cfg.sigma_eps2)
    )

    has_effect = cfg.sigma_nu2 > 0
    rec = dict(
        trial=trial,
        u=int(u),
        f_stat=test.f_stat,
        reject=test.reject,
        correct_f=test.reject == has_effect,
        ci_lower=ci.lower,
        ci_upper=ci.upper,
        covered=ci.contains(cfg.sigma_nu2),
        sigma_nu2_hat=est_q.sigma_nu2,
        sigma_eps2_hat=est_q.sigma_eps2,
        truncated_nu=bool(est_q.truncated["nu"]),
        loss_oracle=float(np.sum((oracle.eta_hat - resp.eta) ** 2) / n),
        loss_ew=float(np.sum((eta_ew.eta_hat - resp.eta) ** 2) / n),
        acceptance_rate=float(fit_q.acceptance_rate),
    )
    if cfg.use_ls_oracle:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            ls = ls_variants(data, pset, wh, range(cfg.s), cfg.delta)
        ci_ls = ci_sigma_nu(ls.var_ls, n, cfg.ci_level)
        rec.update(
            f_ls=ls.f_ls.f_stat,
            correct_f_ls=ls.f_ls.reject == has_effect,
            ci_ls_lower=ci_ls.lower,
            ci_ls_upper=ci_ls.upper,
            covered_ls=ci_ls.contains(cfg.sigma_nu2),
            loss_ls=float(np.sum((ls.eta_ls.eta_hat - resp.eta) ** 2) / n),
        )
    return TrialRecord(**rec)


def aggregate(records, cfg: SimConfig, n_skipped=0, failures=(), dims=(0, 0, 0)) -> SimResult:
    """Average per-trial records into the coverage / length / loss metrics.

    AveCov for the test is the percentage of correct decisions: non-rejections
    when sigma_nu^2 = 0, rejections otherwise.
    """
    records = tuple(sorted(records, key=lambda r: r.trial))

    def pct(vals):
        vals = [bool(x) for x in vals if x is not None]
        return 100.0 * sum(vals) / len(vals) if vals else float("nan")

    def mean(vals):
        vals = [float(x) for x in vals if x is not None and math.isfinite(x)]
        return math.fsum(vals) / len(vals) if vals else float("nan")

    kw = dict(
        ave_cov_f=pct(r.correct_f for r in records),
        ave_cov_ci=pct(r.covered for r in records),
        ave_len_ci=mean(r.ci_length for r in records),
        ave_len_ci_clipped=mean(r.ci_length_clipped for r in records),
        ave_loss_oracle=mean(r.loss_oracle for r in records),
        ave_loss_ew=mean(r.loss_ew for r in records),
    )
    if cfg.use_ls_oracle:
        kw.update(
            ave_cov_f_ls=pct(r.correct_f_ls for r in records),
            ave_cov_ci_ls=pct(r.covered_ls for r in records),
            ave_len_ci_ls=mean(r.ci_ls_length for r in records),
            ave_loss_ls=mean(r.loss_ls for r in records),
        )
    n_a, n_b, n_c = dims
    return SimResult(
        config=cfg,
        records=records,
        n_skipped=n_skipped,
        failures=tuple(failures),
        n_a=n_a,
        n_b=n_b,
        n_c=n_c,
        **kw,
    )


def _trial_or_failure(args):
    cfg, prep, trial = args
    if prep is None:
        prep = _Prepared(cfg, gen_design(cfg, _design_rng(cfg, trial)))
    try:
        return _run_trial(cfg, prep, trial)
    except (HdlmmError, ValueError, np.linalg.LinAlgError) as exc:
        return f"trial {trial}: {type(exc).__name__}: {exc}"


def run_study(cfg: SimConfig, n_jobs: int = 1, progress=None) -> SimResult:
    """Run ``cfg.n_trials`` trials and aggregate them.

    Trials that raise a numerical or validation error are skipped and listed in
    ``failures``. Results do not depend on ``n_jobs``: every trial draws from
    its own stream keyed by (seed, trial index).
    """
    prep = None if cfg.redraw_design else _Prepared(cfg, gen_design(cfg, _design_rng(cfg)))
    jobs = [(cfg, prep, t) for t in range(cfg.n_trials)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(_trial_or_failure, jobs))
    else:
        outcomes = []
        for job in jobs:
            outcomes.append(_trial_or_failure(job))
            if progress is not None:
                progress(job[2], outcomes[-1])
    records = [o for o in outcomes if isinstance(o, TrialRecord)]
    failures = [o for o in outcomes if isinstance(o, str)]
    if prep is not None:
        dims = (prep.pset.n_a, prep.pset.n_b, prep.pset.n_c)
    else:
        dims = (0, 0, 0)
    return aggregate(records, cfg, n_skipped=len(failures), failures=failures, dims=dims)


def table_grid(sigma_nu2: float, sigma_gamma2: float, **overrides) -> list:
    """The eight (rho, v, r) columns of one simulation table, in table order."""
    base = SimConfig(sigma_nu2=sigma_nu2, sigma_gamma2=sigma_gamma2)
    base = replace(base, **overrides) if overrides else base
    return [
        replace(base, rho=rho, v=v, r=r)
        for rho in (0.0, 0.8)
        for v in (25, 50)
        for r in (25, 50)
    ]


TABLE_ROWS = (
    ("AveCov", "F_LS", "ave_cov_f_ls", "{:.0f}"),
    ("AveCov", "F_EW", "ave_cov_f", "{:.0f}"),
    ("AveCov", "sigma_nu2_LS", "ave_cov_ci_ls", "{:.0f}"),
    ("AveCov", "sigma_nu2_EW", "ave_cov_ci", "{:.0f}"),
    ("AveLen", "sigma_nu2_LS", "ave_len_ci_ls", "{:.2f}"),
    ("AveLen", "sigma_nu2_EW", "ave_len_ci", "{:.2f}"),
    ("AveLoss", "eta_oracle", "ave_loss_oracle", "{:.2f}"),
    ("AveLoss", "eta_LS", "ave_loss_ls", "{:.2f}"),
    ("AveLoss", "eta_EW", "ave_loss_ew", "{:.2f}"),
)


def _fmt(fmt, val):
    return "NA" if val is None or not math.isfinite(val) else fmt.format(val)


def format_table(results, style: str = "markdown") -> str:
    """Lay results out as the simulation tables: one column per configuration."""
    header = [("", "rho"), ("", "v"), ("", "r")]
    cols = [r.config for r in results]
    head_vals = [[f"{c.rho:g}" for c in cols], [str(c.v) for c in cols], [str(c.r) for c in cols]]
    body = []
    for metric, label, attr, fmt in TABLE_ROWS:
        body.append((metric, label, [_fmt(fmt, getattr(res, attr)) for res in results]))
    if style == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for (m, lab), vals in zip(header, head_vals):
            w.writerow([m, lab, *vals])
        for m, lab, vals in body:
            w.writerow([m, lab, *vals])
        return buf.getvalue()
    if style != "markdown":
        raise ValueError(f"unknown table style {style!r}")
    lines = []
    for i, ((m, lab), vals) in enumerate(zip(header, head_vals)):
        lines.append("| " + " | ".join([m, lab, *vals]) + " |")
        if i == 0:
            lines.append("|" + "---|" * (2 + len(vals)))
    for m, lab, vals in body:
        lines.append("| " + " | ".join([m, lab, *vals]) + " |")
    return "\n".join(lines) + "\n"
