import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import crossed_design, max_abs
from hdlmm.errors import ConvergenceError, IdentifiabilityError
from hdlmm.projections import (
    MixedData,
    ProjectionSet,
    build_projections,
    invariant_report,
    invariants_hold,
    orthonormal_complement,
    symmetric_eig,
    whiten,
)


def quiet_build(Z, W=None, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return build_projections(Z, W, **kw)


def rank(M):
    return int(np.linalg.matrix_rank(M)) if M.size else 0


class TestMixedData:
    def test_shapes_and_defaults(self):
        d = MixedData(np.ones(4), np.ones((4, 3)), np.eye(4)[:, :2])
        assert (d.n, d.p, d.v, d.r) == (4, 3, 2, 0)
        assert d.W.shape == (4, 0)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            MixedData(np.array([1.0, np.nan]), np.ones((2, 1)), np.ones((2, 1)))
        with pytest.raises(ValueError):
            MixedData(np.ones(2), np.array([[1.0], [np.inf]]), np.ones((2, 1)))

    def test_rejects_row_mismatch(self):
        with pytest.raises(ValueError):
            MixedData(np.ones(3), np.ones((2, 1)), np.ones((3, 1)))


class TestOrthonormalComplement:
    def test_identity_columns(self):
        out = orthonormal_complement(np.eye(3)[:, :2])
        assert out.shape == (2, 3)
        assert max_abs(out @ out.T - np.eye(2)) < 1e-14
        # spans e1, e2
        assert max_abs(out[:, 2]) < 1e-14

    def test_fully_contained(self):
        v = np.array([[1.0], [1.0]]) / np.sqrt(2)
        assert orthonormal_complement(v, v.T).shape == (0, 2)

    def test_against_hand_gram_schmidt(self):
        cols = np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
        against = np.ones((1, 3)) / np.sqrt(3)
        out = orthonormal_complement(cols, against)
        # hand Gram-Schmidt: remove the mean, then orthonormalize
        c1 = cols[:, 0] - cols[:, 0].mean()
        e1 = c1 / np.linalg.norm(c1)
        c2 = cols[:, 1] - cols[:, 1].mean()
        c2 = c2 - (c2 @ e1) * e1
        e2 = c2 / np.linalg.norm(c2)
        assert out.shape == (2, 3)
        np.testing.assert_allclose(np.abs(out), np.abs(np.vstack([e1, e2])), atol=1e-14)
        assert max_abs(out @ against.T) < 1e-14

    def test_drops_dependent_columns(self, rng):
        base = rng.standard_normal((20, 3))
        cols = np.hstack([base, base @ rng.standard_normal((3, 4))])
        out = orthonormal_complement(cols)
        assert out.shape[0] == 3

    def test_ill_conditioned_stays_orthonormal(self):
        # Lauchli-type columns where classical Gram-Schmidt loses orthogonality
        eps = 1e-7
        M = np.vstack([np.ones((1, 4)), eps * np.eye(4)])
        out = orthonormal_complement(M)
        assert out.shape[0] == 4
        assert max_abs(out @ out.T - np.eye(4)) < 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 12), st.integers(1, 6), st.integers(0, 4), st.integers(0, 2**32 - 1))
    def test_span_and_orthogonality(self, n, k, m, seed):
        rng = np.random.default_rng(seed)
        m = min(m, n - 1)
        against = orthonormal_complement(rng.standard_normal((n, m))) if m else None
        cols = rng.standard_normal((n, k))
        out = orthonormal_complement(cols, against)
        if out.shape[0]:
            assert max_abs(out @ out.T - np.eye(out.shape[0])) < 1e-12
            if against is not None and against.shape[0]:
                assert max_abs(out @ against.T) < 1e-12
        # dimension of span(cols) minus span(against)
        stacked = cols if against is None else np.hstack([cols, against.T])
        expected = rank(stacked) - (0 if against is None else against.shape[0])
        assert out.shape[0] == expected


class TestBuildProjections:
    def test_four_row_example(self):
        Z = np.array([[1.0, 0], [1, 0], [0, 1], [0, 1]])
        W = np.ones((4, 1))
        with pytest.warns(RuntimeWarning, match="n_c = 0"):
            ps = build_projections(Z, W)
        assert (ps.n_a, ps.n_b, ps.n_c) == (1, 2, 0)
        np.testing.assert_allclose(np.abs(ps.A[0]), [0.5] * 4, atol=1e-14)
        assert ps.A[0, 0] * ps.A[0, 2] < 0 and ps.A[0, 0] * ps.A[0, 1] > 0

    def test_contained_target_raises(self):
        W = np.kron(np.eye(2), np.ones((3, 1)))
        Z = W[:, :1] + W[:, 1:]
        with pytest.raises(IdentifiabilityError):
            build_projections(Z, W)

    def test_six_row_crossed(self):
        cells = list(itertools.product(range(2), range(3)))
        Z = np.array([[1.0 if a == i else 0.0 for i in range(2)] for a, _ in cells])
        W = np.array([[1.0 if b == j else 0.0 for j in range(3)] for _, b in cells])
        ps = quiet_build(Z, W)
        assert (ps.n_a, ps.n_b) == (1, 2)
        assert ps.n_c <= 2
        assert invariants_hold(invariant_report(ps, Z, W))

    def test_no_nuisance(self, rng):
        Z, _ = crossed_design(rng, 5, 4, 20)
        ps = quiet_build(Z)
        assert (ps.n_a, ps.n_b, ps.n_c) == (5, 15, 0)

    def test_rank_accounting(self, rng):
        for _ in range(10):
            Z, W = crossed_design(rng, 6, 9, 40)
            ps = quiet_build(Z, W)
            rWZ, rW = rank(np.hstack([W, Z])), rank(W)
            assert ps.n_a == rWZ - rW
            assert ps.n_b == 40 - rWZ
            assert 40 - ps.n_a - ps.n_b - ps.n_c >= 0

    def test_nc_when_r_exceeds_v(self, rng):
        # with C orthogonal to A the nuisance block only survives when r > v
        Z, W = crossed_design(rng, 5, 9, 40)
        ps = quiet_build(Z, W)
        assert ps.n_c == 4
        rep = invariant_report(ps, Z, W)
        assert invariants_hold(rep)
        assert rep["cw_norm"] > 0.1

    def test_against_must_be_orthonormal(self):
        with pytest.raises(ValueError):
            orthonormal_complement(np.eye(3), np.array([[1.0, 1.0, 0.0]]))

    def test_c_not_orthogonal_to_a_option(self, rng):
        Z, W = crossed_design(rng, 6, 6, 30)
        ps = quiet_build(Z, W)
        ps2 = quiet_build(Z, W, c_orthogonal_to_a=False)
        assert ps2.n_c == rank(np.hstack([W, Z])) - rank(Z)
        assert ps2.n_c > ps.n_c
        rep = invariant_report(ps2, Z, W)
        assert rep["CZ"] < 1e-8 and rep["BCt"] < 1e-8 and rep["CCt_minus_I"] < 1e-8
        assert rep["ACt"] > 1e-3

    def test_random_crossed_invariants(self, rng):
        for _ in range(20):
            v, r = rng.integers(3, 9, size=2)
            n = int(rng.integers(v + r + 2, v * r + 1))
            Z, W = crossed_design(rng, v, r, n)
            ps = quiet_build(Z, W)
            wh = whiten(ps, Z, W)
            assert invariants_hold(invariant_report(wh.projections, Z, W, wh))


class TestSymmetricEig:
    def test_diagonal(self):
        vals, vecs = symmetric_eig(np.diag([1.0, 3.0]))
        np.testing.assert_allclose(vals, [3.0, 1.0])
        np.testing.assert_allclose(np.abs(vecs), [[0, 1], [1, 0]], atol=1e-15)

    def test_two_by_two(self):
        vals, vecs = symmetric_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
        np.testing.assert_allclose(vals, [3.0, 1.0], atol=1e-14)
        s = 1 / np.sqrt(2)
        np.testing.assert_allclose(np.abs(vecs), [[s, s], [s, s]], atol=1e-14)
        assert vecs[0, 1] * vecs[1, 1] < 0

    def test_three_by_three_characteristic_polynomial(self):
        M = np.array([[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 1.0]])
        vals, _ = symmetric_eig(M)
        # each value is a root of det(M - t I)
        for t in vals:
            assert abs(np.linalg.det(M - t * np.eye(3))) < 1e-10
        assert vals.sum() == pytest.approx(np.trace(M), abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 12), st.integers(0, 2**32 - 1))
    def test_reconstruction(self, k, seed):
        rng = np.random.default_rng(seed)
        G = rng.standard_normal((k, k))
        M = G + G.T
        vals, vecs = symmetric_eig(M)
        assert np.all(np.diff(vals) <= 0)
        assert max_abs(vecs.T @ vecs - np.eye(k)) < 1e-10
        assert max_abs(vecs @ np.diag(vals) @ vecs.T - M) <= 1e-7 * max(1.0, np.linalg.norm(M))
        np.testing.assert_allclose(vals, np.sort(np.linalg.eigvalsh(M))[::-1], atol=1e-9)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            symmetric_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_sweep_cap(self, rng):
        G = rng.standard_normal((8, 8))
        with pytest.raises(ConvergenceError):
            symmetric_eig(G + G.T, max_sweeps=1)


class TestWhiten:
    def test_scalar_case(self):
        Z = np.array([[1.0], [1.0], [0.0], [0.0]])
        a = np.array([[1.0, 0.0, 0.0, 0.0]])
        a2 = np.array([[1.0, 1.0, 0.0, 0.0]]) / np.sqrt(2)
        wh = whiten(ProjectionSet(a2, np.zeros((0, 4)), np.zeros((0, 4))), Z)
        np.testing.assert_allclose(wh.d, [2.0])
        np.testing.assert_allclose(np.abs(wh.V), [[1.0]])
        wh1 = whiten(ProjectionSet(a, np.zeros((0, 4)), np.zeros((0, 4))), Z)
        np.testing.assert_allclose(wh1.d, [1.0])

    def test_balanced_one_way(self):
        c = 4
        Z = np.kron(np.eye(3), np.ones((c, 1)))
        ps = quiet_build(Z, np.ones((3 * c, 1)))
        wh = whiten(ps, Z, np.ones((3 * c, 1)))
        assert wh.d.size == 2
        np.testing.assert_allclose(wh.d, [c, c], atol=1e-12)
        assert wh.trace_d_inv == pytest.approx(2 / c)

    def test_rank_deficient_truncation(self):
        n = 6
        Z = np.zeros((n, 2))
        Z[:3, 0] = 1.0
        # A has two rows but A Z Z^T A^T has rank 1
        u = Z[:, 0] / np.sqrt(3)
        w = np.zeros(n)
        w[3:] = 1 / np.sqrt(3)
        ps = ProjectionSet(np.vstack([u, w]), np.zeros((0, n)), np.zeros((0, n)))
        wh = whiten(ps, Z)
        assert wh.dropped_a == 1
        assert wh.projections.n_a == 1
        np.testing.assert_allclose(wh.d, [3.0], atol=1e-12)
        rep = invariant_report(wh.projections, Z, None, wh)
        assert rep["VDVt_minus_AZZtAt"] < 1e-10

    def test_no_surviving_eigenvalue(self):
        n = 4
        Z = np.array([[1.0], [1.0], [0.0], [0.0]])
        a = np.array([[0.0, 0.0, 1.0, 0.0]])
        with pytest.raises(IdentifiabilityError):
            whiten(ProjectionSet(a, np.zeros((0, n)), np.zeros((0, n))), Z)

    def test_permutation_invariance(self, rng):
        Z, W = crossed_design(rng, 7, 5, 30)
        wh = whiten(quiet_build(Z, W), Z, W)
        perm = rng.permutation(7)
        wh2 = whiten(quiet_build(Z[:, perm], W), Z[:, perm], W)
        np.testing.assert_allclose(np.sort(wh.d), np.sort(wh2.d), atol=1e-10)

    def test_whitened_noise_expectation(self, rng):
        Z, W = crossed_design(rng, 6, 5, 25)
        wh = whiten(quiet_build(Z, W), Z, W)
        A = wh.projections.A
        sigma2 = 1.7
        reps = 4000
        eps = np.sqrt(sigma2) * rng.standard_normal((reps, Z.shape[0]))
        w = (eps @ A.T @ wh.V) / np.sqrt(wh.d)
        stat = np.sum(w**2, axis=1)
        target = sigma2 * wh.trace_d_inv
        se = stat.std(ddof=1) / np.sqrt(reps)
        assert abs(stat.mean() - target) < 3 * se
