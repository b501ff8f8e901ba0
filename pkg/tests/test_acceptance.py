"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line
that is printed in the terminal summary.

The two study fixtures run the full-size null and alternative settings
(n=200, p=500, 100 trials each) and take several minutes on one core.
"""

import math
import time
import warnings

import numpy as np
import pytest
from scipy import stats
from scipy.linalg import toeplitz

from conftest import crossed_design, record
from hdlmm.ew import EwConfig, exact_ew, mh_ew, support_fit
from hdlmm.inference import f_ew_test, variance_estimates
from hdlmm.projections import MixedData, build_projections, invariant_report, invariants_hold, whiten
from hdlmm.sim import SimConfig, gen_design, run_study
from hdlmm.special import FDist, f_upper_quantile, normal_quantile
from test_special import quad_f_quantile

pytestmark = pytest.mark.acceptance


def timed_study(cfg):
    t0 = time.perf_counter()
    res = run_study(cfg)
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def null_study():
    return timed_study(SimConfig(sigma_nu2=0.0, sigma_gamma2=0.0, n_trials=100, seed=0))


@pytest.fixture(scope="module")
def alt_study():
    return timed_study(SimConfig(sigma_nu2=1.0, sigma_gamma2=0.0, n_trials=100, seed=0))


def quiet_whiten(Z, W):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pset = build_projections(Z, W)
    return whiten(pset, Z, W)


def test_1_null_calibration(null_study):
    res, elapsed = null_study
    m = res.metrics()
    ok = abs(m["ave_cov_f"] - 91.0) <= 8.0 and elapsed <= 30 * 60
    detail = f"AveCov(F_EW)={m['ave_cov_f']:.0f} (target 91 +/- 8), {len(res.records)} trials ({res.n_skipped} skipped) in {elapsed:.0f}s"
    assert record("1", ok, detail), detail


def test_2_power(alt_study):
    res, _ = alt_study
    cov = res.metrics()["ave_cov_f"]
    detail = f"AveCov(F_EW)={cov:.0f} (need >= 95)"
    assert record("2", cov >= 95.0, detail), detail


def test_3_interval(null_study, alt_study):
    m1 = null_study[0].metrics()
    m3 = alt_study[0].metrics()
    ok1 = m1["ave_cov_ci"] >= 95.0 and 0.06 <= m1["ave_len_ci"] <= 0.25
    ok3 = abs(m3["ave_cov_ci"] - 80.0) <= 15.0 and abs(m3["ave_len_ci"] - 1.10) <= 0.5
    detail = (
        f"null: cov={m1['ave_cov_ci']:.0f} len={m1['ave_len_ci']:.3f} (clipped at 0: {m1['ave_len_ci_clipped']:.3f}); "
        f"alt: cov={m3['ave_cov_ci']:.0f} len={m3['ave_len_ci']:.3f}"
    )
    assert record("3", ok1 and ok3, detail), detail


def test_4_eb_loss_gap(alt_study):
    m = alt_study[0].metrics()
    ok = abs(m["ave_loss_oracle"] - 0.11) <= 0.04 and m["ave_loss_ew"] <= 0.6
    detail = f"AveLoss oracle={m['ave_loss_oracle']:.3f} (0.11 +/- 0.04), EW={m['ave_loss_ew']:.3f} (<= 0.6)"
    assert record("4", ok, detail), detail


def test_5_mh_matches_exact():
    rng = np.random.default_rng(5)
    n, p = 40, 8
    X = rng.standard_normal((n, p))
    y = 0.6 * X[:, 0] - 0.5 * X[:, 3] + rng.standard_normal(n)
    cfg = EwConfig(u=2, chain_len=50000, burn_in=2000, seed=11)
    t0 = time.perf_counter()
    ex = exact_ew(y, X, cfg)
    mh = mh_ew(y, X, cfg)
    elapsed = time.perf_counter() - t0
    gap = float(np.max(np.abs(mh.beta_hat - ex.beta_hat)))
    bound = 0.05 * (1 + float(np.max(np.abs(ex.beta_hat))))
    tv = 0.5 * sum(abs(mh.visit_freq.get(m, 0.0) - w) for m, w in ex.weights.items())
    ok = gap <= bound and tv <= 0.05 and elapsed <= 60
    detail = f"sup gap={gap:.4f} (<= {bound:.4f}), TV={tv:.4f} (<= 0.05), {elapsed:.1f}s"
    assert record("5", ok, detail), detail


def test_6a_f_ls_null_distribution():
    # null study design, LS fit on the true support with the (AY; BY) data
    cfg = SimConfig()
    d = gen_design(cfg, np.random.default_rng([cfg.seed, 0, 0]))
    pset = quiet_whiten(d.Z, d.W).projections
    rng = np.random.default_rng(61)
    Q = pset.Q
    QX = Q @ d.X
    support = np.flatnonzero(d.beta)
    fs = []
    for _ in range(2000):
        Y = d.mu + rng.standard_normal(cfg.n)
        fit = support_fit(Q @ Y, QX, support)
        fs.append(f_ew_test(MixedData(Y, d.X, d.Z, d.W), pset, fit).f_stat)
    pval = stats.kstest(fs, stats.f(pset.n_a, pset.n_b).cdf).pvalue
    detail = f"KS p={pval:.3f} vs F({pset.n_a},{pset.n_b}) over 2000 reps (need > 0.01)"
    assert record("6a", pval > 0.01, detail), detail


def test_6b_sigma_nu_normality():
    # large crossed design so that n_a is well into the asymptotic regime
    rng = np.random.default_rng(62)
    v, r, n, p = 150, 10, 1000, 50
    Z, W = crossed_design(rng, v, r, n)
    wh = quiet_whiten(Z, W)
    pset = wh.projections
    X = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[:3] = 1.0
    Q = pset.Q
    QX = Q @ X
    stat, plug = [], []
    for _ in range(2000):
        Y = X @ beta + rng.standard_normal(n)
        fit = support_fit(Q @ Y, QX, [0, 1, 2])
        est = variance_estimates(MixedData(Y, X, Z, W), pset, wh, fit, truncate=False)
        # sigma_nu^2 = 0, so the centering d_bar sigma_nu^2 vanishes
        stat.append(math.sqrt(n) * est.sigma_nu2_raw)
        plug.append(est.sigma_a2 + est.sigma_b2)
    stat = np.array(stat)
    var, plug_mean = float(stat.var(ddof=1)), float(np.mean(plug))
    pval = stats.kstest(stat, stats.norm(0.0, math.sqrt(var)).cdf).pvalue
    rel = abs(var - plug_mean) / plug_mean
    ok = pval > 0.01 and rel <= 0.15
    detail = f"KS p={pval:.3f} (> 0.01), var={var:.2f} vs plug-in {plug_mean:.2f} ({100 * rel:.1f}% <= 15%), n_a={pset.n_a}"
    assert record("6b", ok, detail), detail


def test_7_special_functions():
    cases = [(d1, d2, delta) for d1, d2 in ((2, 10), (10, 10), (175, 175)) for delta in (0.05, 0.01)]
    errs = [abs(f_upper_quantile(FDist(d1, d2), delta) - float(quad_f_quantile(d1, d2, delta))) for d1, d2, delta in cases]
    z_err = abs(normal_quantile(0.975) - 1.959964)
    ok = max(errs) <= 1e-6 and z_err <= 1e-6
    detail = f"max quantile error={max(errs):.2e}, |z_0.975 - 1.959964|={z_err:.2e} (<= 1e-6)"
    assert record("7", ok, detail), detail


def test_8_projection_invariants():
    rng = np.random.default_rng(8)
    failed, worst = 0, 0.0
    for _ in range(50):
        v, r = (int(k) for k in rng.integers(3, 15, size=2))
        n = int(rng.integers(v + r + 2, v * r + 1))
        Z, W = crossed_design(rng, v, r, n)
        wh = quiet_whiten(Z, W)
        rep = invariant_report(wh.projections, Z, W, wh)
        errors = [val for k, val in rep.items() if k not in ("az_norm", "cw_norm", "d_min")]
        worst = max(worst, max(errors))
        failed += not invariants_hold(rep, tol=1e-8, recon_tol=1e-8)
    detail = f"{50 - failed}/50 designs pass, worst error {worst:.1e} (<= 1e-8)"
    assert record("8", failed == 0, detail), detail


def test_9_prediction_risk_correlated_errors():
    rng = np.random.default_rng(9)
    n, p, s, phi = 400, 50, 3, 0.3
    sigma = toeplitz(phi ** np.arange(n))
    lam_max = float(np.linalg.eigvalsh(sigma)[-1])
    root = np.linalg.cholesky(sigma)
    cfg = EwConfig(u=3, alpha=13.0)
    risks = []
    for _ in range(50):
        X = rng.standard_normal((n, p))
        beta = np.zeros(p)
        beta[:s] = 1.0
        mu = X @ beta
        Y = mu + root @ rng.standard_normal(n)
        fit = exact_ew(Y, X, cfg)
        risks.append(float(np.sum((fit.fitted - mu) ** 2)) / n)
    risk = float(np.mean(risks))
    ok = risk <= 0.15 and lam_max <= 2.0
    detail = f"mean ||X b - mu||^2/n={risk:.4f} (<= 0.15) over 50 reps, lambda_max={lam_max:.3f}"
    assert record("9", ok, detail), detail
