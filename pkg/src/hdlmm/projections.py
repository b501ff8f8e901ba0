"""Projection matrices A, B, C and the whitening eigendecompositions.

A isolates the target effect Z free of the nuisance design W, B spans the
orthogonal complement of (W, Z) and C isolates W free of Z and of A. All three
have orthonormal rows and are mutually orthogonal, so the projected noise
blocks are independent.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConvergenceError, IdentifiabilityError

__all__ = [
    "MixedData",
    "ProjectionSet",
    "Whitening",
    "orthonormal_complement",
    "build_projections",
    "symmetric_eig",
    "whiten",
    "invariant_report",
    "invariants_hold",
    "GS_RANK_TOL",
    "EIG_RANK_TOL",
]

GS_RANK_TOL = 1e-10
EIG_RANK_TOL = 1e-9
JACOBI_MAX_SWEEPS = 100
JACOBI_TOL = 1e-12


def _as_matrix(a, n: int, name: str) -> np.ndarray:
    if a is None:
        return np.zeros((n, 0))
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] != n:
        raise ValueError(f"{name} must have {n} rows, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True, eq=False)
class MixedData:
    """Observed data of the model Y = X beta + Z nu + W gamma + eps.

    ``W`` may have zero columns (no nuisance effect). The low-dimensional
    requirement v + r < n is not enforced here; a design violating it shows up
    downstream as n_b = 0.
    """

    Y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    W: np.ndarray = None

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float).ravel()
        n = Y.shape[0]
        if n < 1:
            raise ValueError("Y must have at least one entry")
        if not np.all(np.isfinite(Y)):
            raise ValueError("Y contains non-finite entries")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "X", _as_matrix(self.X, n, "X"))
        object.__setattr__(self, "Z", _as_matrix(self.Z, n, "Z"))
        object.__setattr__(self, "W", _as_matrix(self.W, n, "W"))
        if self.Z.shape[1] < 1:
            raise ValueError("Z must have at least one column")

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def v(self) -> int:
        return self.Z.shape[1]

    @property
    def r(self) -> int:
        return self.W.shape[1]

    def with_response(self, Y) -> "MixedData":
        return MixedData(Y, self.X, self.Z, self.W)


@dataclass(frozen=True, eq=False)
class ProjectionSet:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    rank_tol: float = GS_RANK_TOL

    @property
    def n_a(self) -> int:
        return self.A.shape[0]

    @property
    def n_b(self) -> int:
        return self.B.shape[0]

    @property
    def n_c(self) -> int:
        return self.C.shape[0]

    @property
    def Q(self) -> np.ndarray:
        """Stacked (A; B)."""
        return np.vstack([self.A, self.B])

    @property
    def gamma_available(self) -> bool:
        return self.n_c > 0


@dataclass(frozen=True, eq=False)
class Whitening:
    """Eigen pairs of A Z Z^T A^T = V diag(d) V^T and C W W^T C^T = Gamma diag(lam) Gamma^T.

    ``projections`` is the projection set the pairs refer to; it differs from
    the input set only when eigenvalues fell below the retention tolerance and
    the corresponding rows were dropped.
    """

    d: np.ndarray
    V: np.ndarray
    lam: np.ndarray
    Gamma: np.ndarray
    projections: ProjectionSet
    rank_tol: float = EIG_RANK_TOL
    dropped_a: int = 0
    dropped_c: int = 0

    @property
    def trace_d_inv(self) -> float:
        return float(np.sum(1.0 / self.d))

    @property
    def trace_lam_inv(self) -> float:
        return float(np.sum(1.0 / self.lam)) if self.lam.size else 0.0

    def whiten_a(self, a_resid: np.ndarray) -> np.ndarray:
        """D^{-1/2} V^T applied to an A-block vector."""
        return (self.V.T @ a_resid) / np.sqrt(self.d)

    def whiten_c(self, c_resid: np.ndarray) -> np.ndarray:
        return (self.Gamma.T @ c_resid) / np.sqrt(self.lam)


def orthonormal_complement(cols, against=None, rank_tol: float = GS_RANK_TOL) -> np.ndarray:
    """Orthonormal rows spanning span(cols) minus rowspan(against).

    Columns are processed one at a time (modified Gram-Schmidt order): each is
    orthogonalized against ``against`` and every row accepted so far, with a
    second full pass to restore orthogonality lost to cancellation. A column
    whose remaining norm is at most ``rank_tol`` times its original norm is
    treated as dependent and dropped.

    Parameters
    ----------
    cols : (n, k) array
    against : (m, n) array with orthonormal rows, optional

    Returns
    -------
    (j, n) array with orthonormal rows, j <= k.
    """
    cols = np.asarray(cols, dtype=float)
    if cols.ndim == 1:
        cols = cols[:, None]
    n, k = cols.shape
    if against is None:
        against = np.zeros((0, n))
    against = np.asarray(against, dtype=float).reshape(-1, n)
    m = against.shape[0]
    if m and np.max(np.abs(against @ against.T - np.eye(m))) > 1e-8:
        raise ValueError("orthonormal_complement: rows of 'against' must be orthonormal")
    basis = np.empty((m + min(k, n), n))
    basis[:m] = against
    size = m
    out_start = m
    for j in range(k):
        v = cols[:, j].copy()
        norm0 = np.linalg.norm(v)
        if norm0 == 0.0:
            continue
        Q = basis[:size]
        for _ in range(2):
            v -= Q.T @ (Q @ v)
        norm = np.linalg.norm(v)
        if norm <= rank_tol * norm0:
            continue
        if size == basis.shape[0]:
            break
        basis[size] = v / norm
        size += 1
    return basis[out_start:size].copy()


def build_projections(
    Z, W=None, rank_tol: float = GS_RANK_TOL, c_orthogonal_to_a: bool = True
) -> ProjectionSet:
    """Build A, B, C from the random-effect designs.

    C is obtained from the columns of W orthogonalized against col(Z) and then
    against the rows of A. In a connected crossed design span(Z) and rows(A)
    together cover all of col(W, Z) once v >= r, so n_c comes out 0 there and
    r - v otherwise. With ``c_orthogonal_to_a=False`` the second step is
    skipped: C then spans col(W) minus col(Z), still annihilates Z and is
    orthogonal to B, but is no longer orthogonal to A.

    Raises
    ------
    IdentifiabilityError
        If Z lies entirely in the column space of W (n_a = 0).
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    n = Z.shape[0]
    W = _as_matrix(W, n, "W")

    basis_w = orthonormal_complement(W, None, rank_tol)
    A = orthonormal_complement(Z, basis_w, rank_tol)
    if A.shape[0] == 0:
        raise IdentifiabilityError(
            "Z lies in the column space of W: the target random effect is unidentifiable (n_a = 0)"
        )
    B = orthonormal_complement(np.eye(n), np.vstack([basis_w, A]), rank_tol)

    basis_z = orthonormal_complement(Z, None, rank_tol)
    if c_orthogonal_to_a:
        # rows(A) overlap span(Z); orthonormalize the union before projecting
        c_against = np.vstack([basis_z, orthonormal_complement(A.T, basis_z, rank_tol)])
    else:
        c_against = basis_z
    C = orthonormal_complement(W, c_against, rank_tol)
    if C.shape[0]:
        # CZ = 0 is the hard constraint; drop any row that violates it numerically
        keep = np.max(np.abs(C @ Z), axis=1) <= 1e-8 * max(1.0, np.max(np.abs(Z)))
        C = C[keep]
    if C.shape[0] == 0 and W.shape[1]:
        warnings.warn(
            "n_c = 0: no direction isolates W from Z; gamma whitening is unavailable",
            RuntimeWarning,
            stacklevel=2,
        )
    return ProjectionSet(A=A, B=B, C=C, rank_tol=rank_tol)


def symmetric_eig(M, max_sweeps: int = JACOBI_MAX_SWEEPS, tol: float = JACOBI_TOL):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(values, vectors)`` with values in descending order and the
    matching orthonormal eigenvectors as columns.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"symmetric_eig needs a square matrix, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if M.size and np.max(np.abs(M - M.T)) > 1e-8 * scale:
        raise ValueError("symmetric_eig needs a symmetric matrix")
    k = M.shape[0]
    a = 0.5 * (M + M.T)
    vecs = np.eye(k)
    fro = np.linalg.norm(a)
    threshold = tol * fro
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= threshold:
            break
        for p in range(k - 1):
            for q in range(p + 1, k):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp = vecs[:, p].copy()
                vq = vecs[:, q].copy()
                vecs[:, p] = c * vp - s * vq
                vecs[:, q] = s * vp + c * vq
    else:
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off > threshold:
            raise ConvergenceError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")
    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    return values[order], vecs[:, order]


def _retained_pairs(P: np.ndarray, R: np.ndarray, rank_tol: float):
    values, vecs = symmetric_eig(P @ R @ R.T @ P.T)
    top = values[0] if values.size else 0.0
    keep = values > rank_tol * top if top > 0 else np.zeros(values.shape, dtype=bool)
    return values, vecs, keep


def whiten(pset: ProjectionSet, Z, W=None, rank_tol: float = EIG_RANK_TOL) -> Whitening:
    """Eigendecompose A Z Z^T A^T (and C W W^T C^T when n_c > 0).

    Eigenpairs with eigenvalue at or below ``rank_tol`` times the largest are
    discarded. When that happens the affected projection rows are rotated onto
    the retained eigenvectors (rows V_k^T A), so the returned projections carry
    the reduced n_a / n_c and the eigenvectors become the identity.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    W = _as_matrix(W, Z.shape[0], "W")
    if pset.n_a < 1:
        raise IdentifiabilityError("whiten requires n_a >= 1")

    A, C = pset.A, pset.C
    values, vecs, keep = _retained_pairs(A, Z, rank_tol)
    if not keep.any():
        raise IdentifiabilityError("no eigenvalue of A Z Z^T A^T exceeds the rank tolerance")
    dropped_a = int((~keep).sum())
    d, V = values[keep], vecs[:, keep]
    if dropped_a:
        A = V.T @ A
        V = np.eye(d.size)

    dropped_c = 0
    if C.shape[0] and W.shape[1]:
        lvals, lvecs, lkeep = _retained_pairs(C, W, rank_tol)
        dropped_c = int((~lkeep).sum())
        lam, Gamma = lvals[lkeep], lvecs[:, lkeep]
        if dropped_c:
            C = Gamma.T @ C
            Gamma = np.eye(lam.size)
    else:
        lam, Gamma = np.zeros(0), np.zeros((0, 0))
        C = C[:0]

    proj = pset if not (dropped_a or dropped_c) else ProjectionSet(A=A, B=pset.B, C=C, rank_tol=pset.rank_tol)
    return Whitening(
        d=d,
        V=V,
        lam=lam,
        Gamma=Gamma,
        projections=proj,
        rank_tol=rank_tol,
        dropped_a=dropped_a,
        dropped_c=dropped_c,
    )


def invariant_report(pset: ProjectionSet, Z, W=None, wh: Optional[Whitening] = None) -> dict:
    """Largest violation of each projection and whitening invariant.

    Keys name the invariant; values are max-abs errors (0 for empty blocks).
    Signal retention is reported as ``az_norm`` / ``cw_norm`` (should be > 0).
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    W = _as_matrix(W, Z.shape[0], "W")
    A, B, C = pset.A, pset.B, pset.C

    def mx(M):
        return float(np.max(np.abs(M))) if M.size else 0.0

    rep = {
        "AAt_minus_I": mx(A @ A.T - np.eye(pset.n_a)),
        "BBt_minus_I": mx(B @ B.T - np.eye(pset.n_b)),
        "CCt_minus_I": mx(C @ C.T - np.eye(pset.n_c)),
        "ABt": mx(A @ B.T),
        "ACt": mx(A @ C.T),
        "BCt": mx(B @ C.T),
        "AW": mx(A @ W),
        "BW": mx(B @ W),
        "BZ": mx(B @ Z),
        "CZ": mx(C @ Z),
        "az_norm": mx(A @ Z),
        "cw_norm": mx(C @ W) if pset.n_c else float("nan"),
    }
    if wh is not None:
        P = wh.projections
        M = P.A @ Z @ Z.T @ P.A.T
        rep["VtV_minus_I"] = mx(wh.V.T @ wh.V - np.eye(wh.d.size))
        rep["VDVt_minus_AZZtAt"] = mx(wh.V @ np.diag(wh.d) @ wh.V.T - M)
        rep["d_min"] = float(wh.d.min())
        if wh.lam.size:
            L = P.C @ W @ W.T @ P.C.T
            rep["GtG_minus_I"] = mx(wh.Gamma.T @ wh.Gamma - np.eye(wh.lam.size))
            rep["GLGt_minus_CWWtCt"] = mx(wh.Gamma @ np.diag(wh.lam) @ wh.Gamma.T - L)
    return rep


ERROR_KEYS = (
    "AAt_minus_I",
    "BBt_minus_I",
    "CCt_minus_I",
    "ABt",
    "ACt",
    "BCt",
    "AW",
    "BW",
    "BZ",
    "CZ",
    "VtV_minus_I",
    "GtG_minus_I",
)


def invariants_hold(report: dict, tol: float = 1e-8, recon_tol: float = 1e-7) -> bool:
    ok = all(report.get(k, 0.0) <= tol for k in ERROR_KEYS)
    ok &= report["az_norm"] > tol
    if not np.isnan(report["cw_norm"]):
        ok &= report["cw_norm"] > tol
    for k in ("VDVt_minus_AZZtAt", "GLGt_minus_CWWtCt"):
        ok &= report.get(k, 0.0) <= recon_tol
    return bool(ok)
