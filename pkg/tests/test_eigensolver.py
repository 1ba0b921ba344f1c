import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from hdg_eigs.eigensolver import (ConvergenceError, fix_signs, solve_dense, solve_pencil,
                                  solve_shift_invert)

from _common import pencil_for


def laplace_1d(n):
    # -u'' on (0, 1), eigenvalues 4 (n+1)^2 sin^2(j pi / (2 (n+1)))
    h = 1.0 / (n + 1)
    A = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]) / h ** 2
    exact = 4 / h ** 2 * np.sin(np.arange(1, n + 1) * np.pi * h / 2) ** 2
    return A.tocsr(), sp.identity(n, format="csr"), exact


def test_two_by_two_examples():
    r = solve_dense(np.diag([2.0, 5.0]), np.eye(2), 1)
    assert r.eigenvalues[0] == pytest.approx(2.0, abs=1e-14)
    r = solve_dense(np.array([[2.0, 1.0], [1.0, 2.0]]), np.eye(2), 2)
    np.testing.assert_allclose(r.eigenvalues, [1.0, 3.0], atol=1e-14)
    r = solve_dense(np.diag([2.0, 5.0]), np.diag([2.0, 1.0]), 2)
    np.testing.assert_allclose(r.eigenvalues, [1.0, 5.0], atol=1e-14)


def test_dense_rejects_bad_input():
    with pytest.raises(ValueError):
        solve_dense(np.eye(2), np.eye(2), 3)
    with pytest.raises(ValueError):
        solve_dense(np.eye(2), np.diag([1.0, -1.0]), 1)
    with pytest.raises(ValueError):
        solve_dense(np.eye(10), np.eye(10), 1, max_dim=5)


def test_shift_invert_on_1d_laplacian():
    A, M, exact = laplace_1d(400)
    r = solve_shift_invert(A, M, 6)
    np.testing.assert_allclose(r.eigenvalues, exact[:6], rtol=1e-11)
    assert r.path == "shift-invert"
    assert r.relative_residuals.max() <= 1e-10


@pytest.mark.parametrize("family,k,gamma", [("gradient", 1, 1.0), ("gradient", 2, 15.0),
                                            ("divergence", 1, 50.0)])
def test_shift_invert_agrees_with_dense(family, k, gamma):
    _, pencil = pencil_for(family, k, gamma, 8)
    d = solve_pencil(pencil, 10)
    s = solve_pencil(pencil, 10, dense_threshold=0)
    assert d.path == "dense" and s.path == "shift-invert"
    np.testing.assert_allclose(s.eigenvalues, d.eigenvalues, rtol=1e-10)
    # eigenvalues below the first computed one must not exist (inertia check)
    A = pencil.dense_A()
    sigma = 0.5 * d.eigenvalues[0]
    _, D, _ = scipy.linalg.ldl(A - sigma * pencil.M_u.toarray())
    assert np.all(np.linalg.eigvalsh(D) > 0)


def test_no_missed_eigenvalues_sylvester_inertia():
    _, pencil = pencil_for("gradient", 1, 10.0, 8)
    r = solve_pencil(pencil, 10, dense_threshold=0)
    A, M = pencil.dense_A(), pencil.M_u.toarray()
    # number of eigenvalues below sigma = number of negative pivots of A - sigma M
    for j in range(9):
        if r.eigenvalues[j + 1] - r.eigenvalues[j] < 1e-8 * r.eigenvalues[j]:
            continue
        sigma = 0.5 * (r.eigenvalues[j] + r.eigenvalues[j + 1])
        _, D, _ = scipy.linalg.ldl(A - sigma * M)
        assert np.sum(np.linalg.eigvalsh(D) < 0) == j + 1


def test_m_orthonormal_eigenvectors():
    _, pencil = pencil_for("divergence", 1, 0.0, 16)
    for r in (solve_pencil(pencil, 8), solve_pencil(pencil, 8, dense_threshold=0)):
        X, M = r.eigenvectors, pencil.M_u
        assert np.abs(X.T @ (M @ X) - np.eye(8)).max() <= 1e-10


def test_deterministic():
    _, pencil = pencil_for("gradient", 1, 1.0, 8)
    a = solve_pencil(pencil, 4, dense_threshold=0, seed=3)
    b = solve_pencil(pencil, 4, dense_threshold=0, seed=3)
    assert np.array_equal(a.eigenvalues, b.eigenvalues)
    assert np.array_equal(a.eigenvectors, b.eigenvectors)


def test_sign_convention():
    X = fix_signs(np.array([[1.0, -3.0], [-2.0, 1.0]]))
    np.testing.assert_array_equal(X, [[-1.0, 3.0], [2.0, -1.0]])
    _, pencil = pencil_for("gradient", 1, 1.0, 4)
    X = solve_pencil(pencil, 3).eigenvectors
    idx = np.argmax(np.abs(X), axis=0)
    assert np.all(X[idx, np.arange(3)] > 0)


def test_iteration_cap_raises_with_partial_result():
    A, M, _ = laplace_1d(300)
    with pytest.raises(ConvergenceError) as info:
        solve_shift_invert(A, M, 4, maxiter=1)
    assert len(info.value.result.eigenvalues) == 4


def test_factorization_retry_on_indefinite_shift():
    # sigma above lambda_1 makes A - sigma M indefinite; the solver backs off
    A, M, exact = laplace_1d(100)
    r = solve_shift_invert(A, M, 2, sigma=1.05 * exact[0])
    np.testing.assert_allclose(r.eigenvalues, exact[:2], rtol=1e-10)
    assert r.meta["sigma"] < exact[0]
