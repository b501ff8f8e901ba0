"""Exponential-weighting aggregation over models of a fixed size u.

Each model m (a size-u subset of the columns of X) gets the least-squares fit
beta_m and weight proportional to exp(-RSS_m / alpha). With few models the
weights are enumerated exactly; otherwise a Metropolis-Hastings chain over
subsets with single-swap proposals approximates the aggregate by averaging
beta_m over the visited states.

The working model size u is picked by exponential screening: a
variable-dimension chain with a size prior, after which a coordinate counts as
selected when its chain-averaged coefficient exceeds 1/n in absolute value.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

__all__ = [
    "EwConfig",
    "EwFit",
    "ls_fit",
    "exact_ew",
    "mh_ew",
    "fit_ew",
    "support_fit",
    "choose_alpha",
    "estimate_sparsity",
    "log_size_prior",
]

LS_RCOND = 1e-10
GRAM_TOL = 1e-12

# stream tags mixed into the seed so EW and screening chains never share draws
_EW_STREAM = 0
_ES_STREAM = 1


@dataclass(frozen=True)
class EwConfig:
    """Tuning for the exponential-weighting fit.

    ``u=None`` asks the caller to estimate the model size; ``alpha=None`` asks
    for the 4 ||Y||^2 / n default.
    """

    u: Optional[int] = None
    alpha: Optional[float] = None
    chain_len: int = 10000
    burn_in: int = 2000
    n_chains: int = 4
    seed: int = 0
    exact_threshold: int = 20000

    def __post_init__(self):
        if self.u is not None and self.u < 1:
            raise ValueError(f"u must be a positive integer, got {self.u}")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.chain_len < 1 or self.n_chains < 1 or self.exact_threshold < 1:
            raise ValueError("chain_len, n_chains and exact_threshold must be positive")
        if not 0 <= self.burn_in < self.chain_len:
            raise ValueError(f"need 0 <= burn_in < chain_len, got {self.burn_in}, {self.chain_len}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def replace(self, **kwargs) -> "EwConfig":
        return replace(self, **kwargs)


@dataclass(frozen=True, eq=False)
class EwFit:
    beta_hat: np.ndarray
    fitted: np.ndarray
    alpha: float
    u: int
    mode: str
    weights: Optional[dict] = None
    visit_freq: Optional[dict] = None
    acceptance_rate: float = float("nan")
    n_accepted: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.beta_hat)


def ls_fit(M, y):
    """Minimum-norm least squares of y on the columns of M.

    Returns ``(coef, rss)``. Singular values below 1e-10 times the largest are
    treated as zero.
    """
    M = np.asarray(M, dtype=float)
    y = np.asarray(y, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    coef = np.linalg.lstsq(M, y, rcond=LS_RCOND)[0]
    resid = y - M @ coef
    return coef, float(resid @ resid)


def choose_alpha(Y) -> float:
    """Temperature 4 ||Y||^2 / n."""
    Y = np.asarray(Y, dtype=float).ravel()
    if Y.size < 1:
        raise ValueError("choose_alpha needs at least one observation")
    ss = float(Y @ Y)
    if ss == 0.0:
        raise ValueError("choose_alpha is undefined for an all-zero response")
    return 4.0 * ss / Y.size


def _check_u(u, p, rows):
    if u is None:
        raise ValueError("EwConfig.u must be set before fitting")
    if u > p:
        raise ValueError(f"model size u={u} exceeds the number of covariates p={p}")
    if u > max(rows - 1, 1):
        raise ValueError(f"model size u={u} too large for {rows} working rows")


def _alpha_for(cfg: EwConfig, y) -> float:
    return cfg.alpha if cfg.alpha is not None else choose_alpha(y)


def _gram_coefs(G_sub: np.ndarray, b_sub: np.ndarray) -> np.ndarray:
    """Batched minimum-norm solutions of G_sub c = b_sub via eigendecomposition."""
    vals, vecs = np.linalg.eigh(G_sub)
    top = vals[..., -1:]
    ok = vals > GRAM_TOL * np.maximum(top, 1e-300)
    inv = np.where(ok, 1.0 / np.where(ok, vals, 1.0), 0.0)
    proj = np.einsum("...ji,...j->...i", vecs, b_sub) * inv
    return np.einsum("...ij,...j->...i", vecs, proj)


def _spd_coefs(G_sub: np.ndarray, b_sub: np.ndarray) -> np.ndarray:
    """Batched solve of G_sub c = b_sub; Cholesky when well conditioned, else minimum norm."""
    try:
        L = np.linalg.cholesky(G_sub)
    except np.linalg.LinAlgError:
        return _gram_coefs(G_sub, b_sub)
    piv = np.diagonal(L, axis1=-2, axis2=-1) ** 2
    diag = np.diagonal(G_sub, axis1=-2, axis2=-1)
    if np.any(piv.min(axis=-1) <= GRAM_TOL * diag.max(axis=-1)):
        return _gram_coefs(G_sub, b_sub)
    return np.linalg.solve(G_sub, b_sub[..., None])[..., 0]


def _batch_rss(X, y, models, coefs, chunk=2048):
    out = np.empty(models.shape[0])
    for s in range(0, models.shape[0], chunk):
        m = models[s : s + chunk]
        pred = np.einsum("nku,ku->kn", X[:, m], coefs[s : s + chunk])
        r = y[None, :] - pred
        out[s : s + chunk] = np.einsum("kn,kn->k", r, r)
    return out


def exact_ew(Qy, QX, cfg: EwConfig) -> EwFit:
    """Exponential weighting by enumerating every size-u model."""
    y = np.asarray(Qy, dtype=float).ravel()
    X = np.asarray(QX, dtype=float)
    k, p = X.shape
    u = cfg.u
    _check_u(u, p, k)
    n_models = math.comb(p, u)
    if n_models > cfg.exact_threshold:
        raise ValueError(
            f"C({p},{u}) = {n_models} models exceeds exact_threshold={cfg.exact_threshold}"
        )
    alpha = _alpha_for(cfg, y)
    models = np.array(list(itertools.combinations(range(p), u)), dtype=np.intp)
    G = X.T @ X
    Xty = X.T @ y
    coefs = _gram_coefs(G[models[:, :, None], models[:, None, :]], Xty[models])
    rss = _batch_rss(X, y, models, coefs)
    logw = -(rss - rss.min()) / alpha
    w = np.exp(logw)
    w /= w.sum()
    beta = np.zeros(p)
    np.add.at(beta, models.ravel(), (w[:, None] * coefs).ravel())
    weights = {tuple(int(j) for j in m): float(wi) for m, wi in zip(models, w)}
    return EwFit(
        beta_hat=beta,
        fitted=X @ beta,
        alpha=alpha,
        u=u,
        mode="exact",
        weights=weights,
        diagnostics={"n_models": n_models, "min_rss": float(rss.min())},
    )


def _chain_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream, index])


def mh_ew(Qy, QX, cfg: EwConfig) -> EwFit:
    """Metropolis-Hastings approximation of the exponential-weighting estimator.

    Chains run in lockstep but each draws only from its own stream, seeded by
    (seed, chain index). A proposal swaps one included and one excluded
    covariate, both picked uniformly, and is accepted with probability
    min(1, exp((RSS_current - RSS_proposed) / alpha)). After burn-in the
    per-model least-squares coefficients are averaged over states and chains.
    """
    y = np.asarray(Qy, dtype=float).ravel()
    X = np.asarray(QX, dtype=float)
    k, p = X.shape
    u = cfg.u
    _check_u(u, p, k)
    if u >= p:
        raise ValueError("mh_ew needs u < p: no swap proposal is possible")
    alpha = _alpha_for(cfg, y)
    C, T = cfg.n_chains, cfg.chain_len
    G = X.T @ X
    Xty = X.T @ y

    rngs = [_chain_rng(cfg.seed, _EW_STREAM, c) for c in range(C)]
    state = np.stack([rng.permutation(p) for rng in rngs])  # first u entries = model
    pick_in = np.stack([rng.integers(0, u, size=T) for rng in rngs])
    pick_out = np.stack([rng.integers(0, p - u, size=T) for rng in rngs])
    log_unif = np.log(np.stack([rng.random(T) for rng in rngs]))

    rows = np.arange(C)

    yy = float(y @ y)

    def evaluate(models):
        b = Xty[models]
        coefs = _spd_coefs(G[models[:, :, None], models[:, None, :]], b)
        # RSS = |y|^2 - b^T c holds for the minimum-norm solution too
        rss = np.maximum(yy - np.einsum("cu,cu->c", b, coefs), 0.0)
        return coefs, rss

    cur = state[:, :u].copy()
    row = u * cur.itemsize
    cur_coef, cur_rss = evaluate(cur)
    beta_sum = np.zeros((C, p))
    visits: Counter = Counter()
    accepted = 0
    for t in range(T):
        i = pick_in[:, t]
        j = u + pick_out[:, t]
        prop = cur.copy()
        prop[rows, i] = state[rows, j]
        prop_coef, prop_rss = evaluate(prop)
        acc = log_unif[:, t] < (cur_rss - prop_rss) / alpha
        if acc.any():
            a = rows[acc]
            ia, ja = i[acc], j[acc]
            old = state[a, ia]
            state[a, ia] = state[a, ja]
            state[a, ja] = old
            cur[a] = prop[a]
            cur_coef[a] = prop_coef[a]
            cur_rss[a] = prop_rss[a]
            accepted += int(acc.sum())
        if t >= cfg.burn_in:
            beta_sum[rows[:, None], cur] += cur_coef
            raw = np.sort(cur, axis=1).tobytes()
            visits.update(raw[c * row : (c + 1) * row] for c in range(C))

    kept = (T - cfg.burn_in) * C
    beta = beta_sum.sum(axis=0) / kept
    freq = {
        tuple(int(j) for j in np.frombuffer(key, dtype=cur.dtype)): cnt / kept for key, cnt in visits.items()
    }
    return EwFit(
        beta_hat=beta,
        fitted=X @ beta,
        alpha=alpha,
        u=u,
        mode="mh",
        visit_freq=freq,
        acceptance_rate=accepted / (T * C),
        n_accepted=accepted,
        diagnostics={"n_models_visited": len(freq), "n_chains": C, "chain_len": T},
    )


def fit_ew(y, X, cfg: EwConfig) -> EwFit:
    """Exact enumeration when C(p, u) <= exact_threshold, MH otherwise."""
    p = np.asarray(X).shape[1]
    if cfg.u is not None and (cfg.u >= p or math.comb(p, cfg.u) <= cfg.exact_threshold):
        return exact_ew(y, X, cfg)
    return mh_ew(y, X, cfg)


def support_fit(y, X, support) -> EwFit:
    """Least squares restricted to a fixed support, packaged like an EW fit."""
    X = np.asarray(X, dtype=float)
    support = np.asarray(sorted(set(int(j) for j in support)), dtype=np.intp)
    if support.size == 0:
        raise ValueError("support must be non-empty")
    coef, rss = ls_fit(X[:, support], y)
    beta = np.zeros(X.shape[1])
    beta[support] = coef
    return EwFit(
        beta_hat=beta,
        fitted=X @ beta,
        alpha=float("nan"),
        u=int(support.size),
        mode="ls",
        diagnostics={"rss": rss},
    )


def log_size_prior(k: int, p: int) -> float:
    """log pi(m) for |m| = k: -k log(2 e p / max(k, 1))."""
    return -k * math.log(2.0 * math.e * p / max(k, 1))


def _draw_excluded(rng, in_model, p, first_try):
    # uniform over excluded indices by rejection; first_try is a pre-drawn uniform
    j = int(first_try * p)
    if not in_model[j]:
        return j
    if in_model.sum() * 2 > p:
        excl = np.flatnonzero(~in_model)
        return int(excl[rng.integers(0, excl.size)])
    while True:
        j = int(rng.integers(0, p))
        if not in_model[j]:
            return j


def _chol_fit(G_rows, Xty, yy, model, g_scale):
    """Least squares on a small model from Gram entries via scalar Cholesky.

    Returns ``(coef, rss)`` or None when a pivot is numerically zero, in which
    case the caller falls back to the minimum-norm solve.
    """
    k = len(model)
    L = [[0.0] * k for _ in range(k)]
    for a in range(k):
        ga = G_rows[model[a]]
        for b in range(a + 1):
            acc = ga[model[b]]
            La, Lb = L[a], L[b]
            for c in range(b):
                acc -= La[c] * Lb[c]
            if a == b:
                if acc <= GRAM_TOL * g_scale:
                    return None
                La[a] = math.sqrt(acc)
            else:
                La[b] = acc / Lb[b]
    z = [0.0] * k
    for a in range(k):
        acc = Xty[model[a]]
        for c in range(a):
            acc -= L[a][c] * z[c]
        z[a] = acc / L[a][a]
    coef = [0.0] * k
    for a in range(k - 1, -1, -1):
        acc = z[a]
        for c in range(a + 1, k):
            acc -= L[c][a] * coef[c]
        coef[a] = acc / L[a][a]
    rss = yy - sum(zi * zi for zi in z)
    return coef, max(rss, 0.0)


def estimate_sparsity(By, BX, cfg: EwConfig, n: Optional[int] = None, return_beta: bool = False):
    """Exponential-screening estimate of the model size u.

    Runs ``cfg.n_chains`` variable-dimension chains targeting
    exp(-RSS_m / alpha_es) pi(m), with alpha_es = 4 ||By||^2 / n_b and |m|
    capped at n_b / (2 log p). Moves add, remove or swap one covariate with
    equal probability. ``n`` sets the 1/n selection threshold and defaults to
    the number of rows of ``By``.
    """
    y = np.asarray(By, dtype=float).ravel()
    X = np.asarray(BX, dtype=float)
    nb, p = X.shape
    if nb < 2:
        raise ValueError(f"estimate_sparsity needs at least 2 rows, got {nb}")
    n = nb if n is None else n
    yy = float(y @ y)
    if yy == 0.0:
        beta = np.zeros(p)
        return (1, beta) if return_beta else 1
    alpha = 4.0 * yy / nb
    cap = max(1, min(p, nb - 1, int(nb / (2.0 * math.log(max(p, 2))))))
    G = X.T @ X
    Xty = X.T @ y
    log_prior = [log_size_prior(k, p) for k in range(cap + 2)]

    G_rows = G.tolist()
    Xty_l = Xty.tolist()
    g_scale = float(np.max(np.diag(G))) if p else 1.0

    def rss_of(model):
        if not model:
            return [], yy
        fit = _chol_fit(G_rows, Xty_l, yy, model, g_scale)
        if fit is not None:
            return fit
        m = np.asarray(model, dtype=np.intp)
        coef = _gram_coefs(G[np.ix_(m, m)], Xty[m])
        r = y - X[:, m] @ coef
        return coef.tolist(), float(r @ r)

    T = cfg.chain_len
    beta_sum = np.zeros(p)
    kept = 0
    for c in range(cfg.n_chains):
        rng = _chain_rng(cfg.seed, _ES_STREAM, c)
        model: list = []
        in_model = np.zeros(p, dtype=bool)
        coef, rss = rss_of(model)
        moves = rng.integers(0, 3, size=T).tolist()
        unif = np.log(rng.random(T)).tolist()
        pick_in = rng.random(T).tolist()
        pick_out = rng.random(T).tolist()
        for t in range(T):
            k = len(model)
            move = moves[t]
            log_q = 0.0
            if move == 0:  # add
                if k >= cap:
                    prop = None
                else:
                    j = _draw_excluded(rng, in_model, p, pick_out[t])
                    prop = model + [j]
                    log_q = math.log(p - k) - math.log(k + 1)
            elif move == 1:  # remove
                if k == 0:
                    prop = None
                else:
                    i = int(pick_in[t] * k)
                    prop = model[:i] + model[i + 1 :]
                    log_q = math.log(k) - math.log(p - k + 1)
            else:  # swap
                if k == 0 or k == p:
                    prop = None
                else:
                    i = int(pick_in[t] * k)
                    j = _draw_excluded(rng, in_model, p, pick_out[t])
                    prop = model[:i] + model[i + 1 :] + [j]
            if prop is not None:
                p_coef, p_rss = rss_of(prop)
                log_ratio = (rss - p_rss) / alpha + log_prior[len(prop)] - log_prior[k] + log_q
                if unif[t] < log_ratio:
                    for j in model:
                        in_model[j] = False
                    model = prop
                    for j in model:
                        in_model[j] = True
                    coef, rss = p_coef, p_rss
            if t >= cfg.burn_in:
                for j, cj in zip(model, coef):
                    beta_sum[j] += cj
                kept += 1
    beta = beta_sum / kept
    u = max(1, int(np.sum(np.abs(beta) > 1.0 / n)))
    return (u, beta) if return_beta else u
