import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from fracbasis import pcg as pg
from fracbasis.sparse import as_csr

from conftest import random_spd


def dense_case(n, seed, cond=200.0, with_mass=True):
    rng = np.random.default_rng(seed)
    A = as_csr(random_spd(n, rng, cond))
    M = as_csr(random_spd(n, rng, 5.0)) if with_mass else None
    b = rng.standard_normal(n)
    return A, M, b, rng


def test_identity_system_one_step():
    b = np.arange(1.0, 7.0)
    res = pg.pcg(as_csr(sp.identity(6)), b, max_iters=5, tol=1e-14)
    assert res.iterations == 1 and res.reason == pg.TOL_REACHED
    assert np.allclose(res.x, b, rtol=1e-15)


def test_exact_preconditioner_one_step():
    A, M, b, _ = dense_case(10, 0)
    d = 0.5
    inv = np.linalg.inv(A.toarray() + d * M.toarray())
    res = pg.pcg(A, b, lambda r: inv @ r, M=M, d=d, max_iters=5, tol=1e-10)
    assert res.iterations == 1 and res.reason == pg.TOL_REACHED


def test_finite_termination_three_eigenvalues():
    rng = np.random.default_rng(1)
    Q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    A = as_csr((Q * np.array([1.0, 1.0, 2.0, 2.0, 5.0, 5.0])) @ Q.T)
    b = rng.standard_normal(6)
    res = pg.pcg(A, b, max_iters=3)
    assert res.iterations == 3
    assert np.linalg.norm(b - A @ res.x) <= 1e-10 * np.linalg.norm(b)


def test_zero_rhs_and_zero_iterations():
    A = as_csr(sp.identity(3))
    res = pg.pcg(A, np.zeros(3))
    assert res.reason == pg.TOL_REACHED and res.iterations == 0
    assert pg.pcg(A, np.ones(3), max_iters=0).reason == pg.MAX_ITERS


def test_breakdown_is_reported():
    A = as_csr(sp.identity(4))
    res = pg.pcg(A, np.ones(4), lambda r: -r, max_iters=5)
    assert res.reason == pg.BREAKDOWN and res.iterations == 0
    indefinite = as_csr(sp.diags([1.0, -1.0, 2.0, 3.0]))
    res = pg.pcg(indefinite, np.array([1.0, 1.0, 0.0, 0.0]), max_iters=5)
    assert res.reason == pg.BREAKDOWN


def test_nonzero_initial_guess():
    A, M, b, rng = dense_case(12, 2)
    x_true = np.linalg.solve(A.toarray() + M.toarray(), b)
    res = pg.pcg(A, b, M=M, d=1.0, max_iters=12, x0=x_true + 1e-3 * rng.standard_normal(12))
    assert np.allclose(res.x, x_true, rtol=1e-9)


@given(st.integers(0, 2**32 - 1), st.integers(8, 30), st.floats(0.0, 2.0))
def test_invariants_on_dense_instances(seed, n, d):
    A, M, b, rng = dense_case(n, seed)
    Ad = A.toarray() + d * M.toarray()
    Bd = random_spd(n, rng, 20.0)
    x_true = np.linalg.solve(Ad, b)
    k = min(n - 2, 10)
    res = pg.pcg(A, b, lambda r: Bd @ r, M=M, d=d, max_iters=k, keep_iterates=True)
    assert res.reason == pg.MAX_ITERS and res.iterations == k
    P = res.directions
    l = res.energies
    assert np.all(l > 0)
    G = P.T @ Ad @ P / np.sqrt(np.outer(l, l))
    # plain PCG keeps neighbouring directions conjugate; global conjugacy needs reorthogonalization
    assert np.abs(np.diag(G, 1)).max() <= 1e-8
    reo = pg.pcg(A, b, lambda r: Bd @ r, M=M, d=d, max_iters=k, reorthogonalize=True)
    Pr = reo.directions / np.sqrt(reo.energies)
    assert np.abs(Pr.T @ Ad @ Pr - np.eye(k)).max() <= 1e-10

    # successive preconditioned residuals are orthogonal, r_k^T z_{k-1} = 0
    R = np.column_stack([b - Ad @ x for x in res.iterates])
    Z = Bd @ R
    cross = R.T @ Z
    scale = np.sqrt(np.outer(np.diag(cross), np.diag(cross)))
    assert np.abs(np.diag(cross / scale, -1)).max() <= 1e-8

    # energy error is monotone and obeys the PCG bound
    errs = [np.sqrt((x_true - x) @ Ad @ (x_true - x)) for x in res.iterates]
    assert all(b_ <= a * (1 + 1e-10) + 1e-14 * errs[0] for a, b_ in zip(errs, errs[1:]))
    w = np.linalg.eigvals(Bd @ Ad).real
    kappa = w.max() / w.min()
    q = (np.sqrt(kappa) - 1) / (np.sqrt(kappa) + 1)
    for j, e in enumerate(errs):
        assert e <= 2 * q**j * errs[0] * (1 + 1e-8) + 1e-13 * errs[0]


def test_krylov_span_identity_with_exact_preconditioner():
    n, s, d, m = 12, 0.3, 1.0, 6
    A, _, b, _ = dense_case(n, 5, with_mass=False)
    Binv = np.linalg.inv(A.toarray() + s * np.eye(n))
    res = pg.pcg(A, b, lambda r: Binv @ r, d=d, max_iters=m)
    K = np.column_stack([np.linalg.matrix_power(Binv, j) @ b for j in range(1, m + 1)])
    Q1, _ = np.linalg.qr(res.directions)
    Q2, _ = np.linalg.qr(K)
    angles = np.arccos(np.clip(np.linalg.svd(Q1.T @ Q2, compute_uv=False), -1, 1))
    assert angles.max() <= 1e-6


def test_reorthogonalized_directions_match_plain_in_benign_case():
    A, M, b, _ = dense_case(20, 6, cond=50)
    plain = pg.pcg(A, b, M=M, d=0.5, max_iters=6)
    reo = pg.pcg(A, b, M=M, d=0.5, max_iters=6, reorthogonalize=True)
    assert np.allclose(plain.directions, reo.directions, rtol=1e-8, atol=1e-10 * np.abs(plain.directions).max())
    assert np.allclose(plain.x, reo.x, rtol=1e-10)


def test_reorthogonalization_restores_conjugacy():
    # a spectrum with a few far outliers makes plain CG lose global conjugacy
    rng = np.random.default_rng(8)
    n = 400
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.concatenate([np.linspace(1, 2, n - 4), [1e4, 3e4, 1e5, 4e5]])
    A = as_csr((Q * lam) @ Q.T)
    b = rng.standard_normal(n)

    def defect(res):
        P = res.directions / np.sqrt(res.energies)
        return np.abs(P.T @ (A @ P) - np.eye(P.shape[1])).max()

    plain = pg.pcg(A, b, max_iters=14)
    reo = pg.pcg(A, b, max_iters=14, reorthogonalize=True)
    assert defect(reo) <= 1e-10
    assert defect(plain) > 0.5


def test_cg_solve():
    A, _, b, _ = dense_case(30, 9, with_mass=False)
    x, info = pg.cg_solve(A.dot, b, tol=1e-12)
    assert info.converged and info.relative_residual <= 1e-12
    assert np.linalg.norm(A @ x - b) <= 1.01e-12 * np.linalg.norm(b) + 1e-15
    x0, info0 = pg.cg_solve(A.dot, np.zeros(30))
    assert info0.iterations == 0 and not x0.any()
    _, short = pg.cg_solve(A.dot, b, tol=1e-14, maxiter=2)
    assert not short.converged and short.iterations == 2
