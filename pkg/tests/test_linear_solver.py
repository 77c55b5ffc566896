from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wgnet.linear_solver import (BorderedSystem, ConvergenceError, CSRMatrix, NotSPDError,
                                 bordered_solve, cg_solve, cholesky, dense_bordered_solve,
                                 dense_spd_solve)


def random_spd(rng, n, density=0.2):
    M = rng.standard_normal((n, n)) * (rng.random((n, n)) < density)
    return M @ M.T + n * np.eye(n)


def laplacian_1d(n):
    rows = np.concatenate([np.arange(n), np.arange(n - 1), np.arange(1, n)])
    cols = np.concatenate([np.arange(n), np.arange(1, n), np.arange(n - 1)])
    vals = np.concatenate([2 * np.ones(n), -np.ones(n - 1), -np.ones(n - 1)])
    return CSRMatrix.from_coo(rows, cols, vals, n, symmetric=True)


def test_coo_duplicates_summed():
    A = CSRMatrix.from_coo([0, 0, 1, 0], [0, 1, 1, 0], [1.0, 2.0, 3.0, 4.0], 2)
    assert np.array_equal(A.toarray(), [[5.0, 2.0], [0.0, 3.0]])


def test_coo_assembly_order_independent(rng):
    r = rng.integers(0, 30, 400)
    c = rng.integers(0, 30, 400)
    v = rng.standard_normal(400)
    A = CSRMatrix.from_coo(r, c, v, 30)
    p = rng.permutation(400)
    B = CSRMatrix.from_coo(r[p], c[p], v[p], 30)
    x = rng.standard_normal(30)
    assert np.allclose(A.matvec(x), B.matvec(x), rtol=1e-14, atol=1e-14)
    assert np.allclose(A.toarray() @ x, A.matvec(x))


def test_cg_identity_one_iteration(rng):
    b = rng.standard_normal(20)
    info = {}
    x = cg_solve(CSRMatrix.identity(20), b, info=info)
    assert np.allclose(x, b)
    assert info["iterations"] == 1


def test_cg_diag():
    A = CSRMatrix.from_dense(np.diag([1.0, 4.0]), symmetric=True)
    x = cg_solve(A, np.array([1.0, 4.0]), preconditioner="none")
    assert np.allclose(x, [1.0, 1.0])


def test_cg_residual_tolerance(rng):
    A = laplacian_1d(200)
    b = rng.standard_normal(200)
    info = {}
    x = cg_solve(A, b, rel_tol=1e-10, info=info)
    assert np.linalg.norm(b - A.matvec(x)) <= 1e-10 * np.linalg.norm(b)
    assert info["residual"] <= 1e-10


def test_cg_reports_nonconvergence(rng):
    with pytest.raises(ConvergenceError):
        cg_solve(laplacian_1d(200), rng.standard_normal(200), rel_tol=1e-12, max_iter=3)


def test_cg_zero_rhs():
    assert np.array_equal(cg_solve(laplacian_1d(5), np.zeros(5)), np.zeros(5))


def test_dense_identity():
    assert np.allclose(dense_spd_solve(np.eye(3), [1.0, 2.0, 3.0]), [1, 2, 3])


def test_dense_hilbert_against_rational_inverse():
    n = 4
    H = [[Fraction(1, i + j + 1) for j in range(n)] for i in range(n)]
    # exact inverse by Gauss-Jordan in rationals
    aug = [row[:] + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(H)]
    for i in range(n):
        piv = aug[i][i]
        aug[i] = [v / piv for v in aug[i]]
        for r in range(n):
            if r != i:
                f = aug[r][i]
                aug[r] = [a - f * b for a, b in zip(aug[r], aug[i])]
    Hinv = np.array([[float(v) for v in row[n:]] for row in aug])
    r = np.array([1.0, -2.0, 3.0, 0.5])
    y = dense_spd_solve(np.array([[float(v) for v in row] for row in H]), r)
    assert np.allclose(y, Hinv @ r, rtol=1e-10)


def test_dense_rejects_indefinite():
    with pytest.raises(NotSPDError, match="matrix not SPD"):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_bordered_m0_equals_cg(rng):
    A = laplacian_1d(50)
    b = rng.standard_normal(50)
    res = bordered_solve(BorderedSystem(A, np.zeros((50, 0)), np.zeros((0, 0)), b, np.zeros(0)))
    assert np.allclose(res.x, cg_solve(A, b), atol=1e-12)
    assert res.redundant == []


def test_bordered_redundant_column(rng):
    n = 60
    A = laplacian_1d(n)
    b = rng.standard_normal(n)
    w = rng.standard_normal(n)
    Bc = A.matvec(w)
    system = BorderedSystem(A, Bc[:, None], [[w @ Bc]], b, [w @ b])
    res = bordered_solve(system)
    assert res.redundant == [True]
    assert res.alpha[0] == 0.0
    assert np.allclose(res.x, cg_solve(A, b), atol=1e-8)
    # same solution as the dense least-norm solve up to the null direction
    K = np.block([[A.toarray(), Bc[:, None]], [Bc[None, :], np.array([[w @ Bc]])]])
    sol = np.concatenate([res.x, res.alpha])
    assert np.linalg.norm(K @ sol - np.concatenate([b, [w @ b]])) <= 1e-8 * np.linalg.norm(b)


@settings(max_examples=25, deadline=None)
@given(st.integers(5, 300), st.integers(1, 4), st.integers(0, 2**31))
def test_bordered_matches_dense(n, m, seed):
    rng = np.random.default_rng(seed)
    Ad = random_spd(rng, n, 3.0 / n)
    B = rng.standard_normal((n, m))
    X = rng.standard_normal((m, m))
    D = B.T @ np.linalg.solve(Ad, B) + X @ X.T + np.eye(m)
    b, g = rng.standard_normal(n), rng.standard_normal(m)
    system = BorderedSystem(CSRMatrix.from_dense(Ad, True), B, D, b, g)
    res = bordered_solve(system, rel_tol=1e-12)
    x, a = dense_bordered_solve(system)
    scale = np.linalg.norm(np.concatenate([x, a]))
    assert np.linalg.norm(np.concatenate([res.x - x, res.alpha - a])) <= 1e-8 * scale
    assert not any(res.redundant)


def test_symmetry_check(rng):
    A = CSRMatrix.from_dense(random_spd(rng, 10), True)
    assert A.is_symmetric()
    N = CSRMatrix.from_dense(np.triu(np.ones((4, 4))))
    assert not N.is_symmetric()
