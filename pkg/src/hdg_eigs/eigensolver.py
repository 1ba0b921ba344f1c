"""
Smallest eigenpairs of SPD pencils A x = lambda M x.

Two routes: a dense Cholesky reduction to a standard symmetric problem for
small systems, and a shift-invert block Lanczos iteration (full
M-reorthogonalization, explicit restarts) on (A - sigma M)^{-1} M for large
ones. Both return :class:`EigenResult` with M-orthonormal eigenvectors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "EigenResult",
    "ConvergenceError",
    "DENSE_THRESHOLD",
    "solve_dense",
    "solve_shift_invert",
    "solve_pencil",
    "fix_signs",
]

log = logging.getLogger(__name__)

DENSE_THRESHOLD = 5000
DEFAULT_TOL = 1e-10


class ConvergenceError(RuntimeError):
    """Iteration cap reached; ``result`` holds the best pairs found."""

    def __init__(self, message: str, result: "EigenResult"):
        super().__init__(message)
        self.result = result


@dataclass
class EigenResult:
    """Ascending eigenvalues with M-orthonormal eigenvectors (columns).

    ``residuals`` are ||A x - lambda M x||_2; ``relative_residuals`` divide
    by ||A||_max ||x||_2.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    relative_residuals: np.ndarray
    path: str
    iterations: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.eigenvalues)


def fix_signs(X: np.ndarray) -> np.ndarray:
    """Flip columns so that their largest-magnitude entry is positive."""
    X = np.array(X, dtype=float, copy=True)
    if X.size == 0:
        return X
    idx = np.argmax(np.abs(X), axis=0)
    s = np.sign(X[idx, np.arange(X.shape[1])])
    s[s == 0] = 1.0
    return X * s


def _as_matvec(A) -> Callable[[np.ndarray], np.ndarray]:
    if callable(A) and not hasattr(A, "shape"):
        return A
    if hasattr(A, "matvec") and not (sp.issparse(A) or isinstance(A, np.ndarray)):
        return A.matvec
    return lambda X: A @ X


def _residuals(Amul, M, lam, X, a_max):
    R = Amul(X) - (M @ X) * lam[None, :]
    res = np.linalg.norm(R, axis=0)
    rel = res / (a_max * np.linalg.norm(X, axis=0))
    return res, rel


def solve_dense(A, M, m: int, max_dim: int = DENSE_THRESHOLD) -> EigenResult:
    """m smallest eigenpairs by Cholesky reduction (M = L L^T).

    Solves L^{-1} A L^{-T} y = lambda y with LAPACK and maps back
    x = L^{-T} y.
    """
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    M = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or M.shape != (n, n):
        raise ValueError(f"A and M must be square of equal size, got {A.shape}, {M.shape}")
    if n > max_dim:
        raise ValueError(f"dense path limited to dimension {max_dim}, got {n}")
    if not 1 <= m <= n:
        raise ValueError(f"m={m} must lie in 1..{n}")
    try:
        L = sla.cholesky(M, lower=True)
    except sla.LinAlgError as exc:
        raise ValueError(f"M is not positive definite: {exc}") from exc
    Y = sla.solve_triangular(L, A, lower=True)
    Cm = sla.solve_triangular(L, Y.T, lower=True)
    Cm = 0.5 * (Cm + Cm.T)
    lam, Z = sla.eigh(Cm, subset_by_index=[0, m - 1], driver="evr")
    X = sla.solve_triangular(L.T, Z, lower=False)
    X = fix_signs(X)
    a_max = np.abs(A).max() or 1.0
    res, rel = _residuals(lambda V: A @ V, M, lam, X, a_max)
    return EigenResult(lam, X, res, rel, path="dense", iterations=1,
                       meta={"a_max": a_max})


def _m_orthonormalize(Z, M, basis, tol=1e-10):
    """Two passes of block Gram-Schmidt against ``basis`` in the M-inner
    product, then Cholesky-QR of the remainder; rank-deficient columns are
    dropped."""
    for _ in range(2):
        for V in basis:
            Z = Z - V @ (V.T @ (M @ Z))
    G = Z.T @ (M @ Z)
    G = 0.5 * (G + G.T)
    w, Q = np.linalg.eigh(G)
    keep = w > tol * max(w.max(), 1e-300)
    if not np.any(keep):
        return Z[:, :0]
    Z = Z @ (Q[:, keep] / np.sqrt(w[keep]))
    # one more pass to remove residual coupling
    for V in basis:
        Z = Z - V @ (V.T @ (M @ Z))
    G = Z.T @ (M @ Z)
    R = np.linalg.cholesky(0.5 * (G + G.T))
    return sla.solve_triangular(R, Z.T, lower=True).T


def _estimate_a_max(Amul, n, rng, samples=32):
    """max_i a_ii (= ||A||_max for SPD A) from a sample of unit columns."""
    idx = np.unique(np.concatenate([[0, n - 1], rng.integers(0, n, size=samples)]))
    E = np.zeros((n, len(idx)))
    E[idx, np.arange(len(idx))] = 1.0
    return float(np.abs(Amul(E)[idx, np.arange(len(idx))]).max())


def _factorize_shift(A, M, sigma):
    G = sp.csc_matrix(A - sigma * M)
    lu = spla.splu(G, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                   options={"SymmetricMode": True})
    piv = lu.U.diagonal()
    if np.any(piv <= 1e-12 * np.abs(G.diagonal()).max()):
        raise RuntimeError(f"A - sigma M not positive definite at sigma={sigma:g}")
    return lu.solve


def solve_shift_invert(A, M, m: int, sigma: float = 0.0, tol: float = DEFAULT_TOL,
                       maxiter: Optional[int] = None, seed: int = 0,
                       shifted_solve: Optional[Callable] = None,
                       block_size: Optional[int] = None,
                       max_basis: Optional[int] = None,
                       a_max: Optional[float] = None) -> EigenResult:
    """m smallest eigenpairs by shift-invert block Lanczos.

    Parameters
    ----------
    A : sparse matrix, ndarray or callable
        SPD operator; callables receive an (n, b) block.
    M : sparse matrix
        SPD mass matrix.
    sigma : float
        Shift below the smallest eigenvalue.
    shifted_solve : callable, optional
        ``shifted_solve(sigma)`` returns a function solving
        (A - sigma M) x = b. Required when A is given as a callable.
    maxiter : int, optional
        Cap on block operator applications, default ``300 * m``.
    a_max : float, optional
        ||A||_max used to scale residuals; sampled from the diagonal when
        omitted.

    Raises
    ------
    ConvergenceError
        If the relative residual of some pair is still above ``tol`` at
        the iteration cap.
    """
    M = sp.csr_matrix(M)
    n = M.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"m={m} must lie in 1..{n}")
    Amul = _as_matvec(A)
    rng = np.random.default_rng(seed)
    if maxiter is None:
        maxiter = 300 * m
    p = block_size or min(n, m + max(3, m // 2))
    max_basis = min(n, max_basis or max(6 * p, 40))

    if shifted_solve is None:
        if callable(A) and not hasattr(A, "shape"):
            raise ValueError("shifted_solve is required when A is a callable")
        shifted_solve = lambda s: _factorize_shift(sp.csr_matrix(A), M, s)

    solve = None
    for attempt in range(4):
        try:
            solve = shifted_solve(sigma)
            break
        except Exception as exc:  # factorization breakdown
            if attempt == 3:
                raise RuntimeError(f"shift-invert factorization failed after 3 retries: {exc}") from exc
            new = sigma - 0.1 * abs(sigma) if sigma != 0 else -1e-3
            log.warning("factorization failed at sigma=%g (%s); retrying at %g", sigma, exc, new)
            sigma = new

    if a_max is None:
        a_max = _estimate_a_max(Amul, n, rng)

    V0 = _m_orthonormalize(rng.standard_normal((n, p)), M, [])
    iterations = 0
    cycles = 0
    lam = X = rel = res = None
    while True:
        cycles += 1
        basis, images = [V0], []
        while True:
            Z = solve(M @ basis[-1])
            iterations += 1
            images.append(Z)
            if sum(b.shape[1] for b in basis) >= max_basis or iterations >= maxiter:
                break
            Z = _m_orthonormalize(Z, M, basis)
            if Z.shape[1] == 0:
                break
            basis.append(Z)
        basis = basis[:len(images)]
        V = np.hstack(basis)
        W = np.hstack(images)
        H = V.T @ (M @ W)
        H = 0.5 * (H + H.T)
        theta, Y = np.linalg.eigh(H)
        order = np.argsort(theta)[::-1]
        Y = Y[:, order]
        Xall = V @ Y[:, :p]
        X = Xall[:, :m]
        AX = Amul(X)
        # Rayleigh quotients with A directly are the reported eigenvalues
        lam = np.einsum("ij,ij->j", X, AX) / np.einsum("ij,ij->j", X, M @ X)
        Rm = AX - (M @ X) * lam[None, :]
        res = np.linalg.norm(Rm, axis=0)
        rel = res / (a_max * np.linalg.norm(X, axis=0))
        log.debug("cycle %d: iterations=%d max rel residual %.3e", cycles, iterations, rel.max())
        if rel.max() <= tol or iterations >= maxiter:
            break
        V0 = _m_orthonormalize(Xall, M, [])

    order = np.argsort(lam)
    lam, X, res, rel = lam[order], X[:, order], res[order], rel[order]
    X = fix_signs(X)
    result = EigenResult(lam, X, res, rel, path="shift-invert", iterations=iterations,
                         meta={"sigma": sigma, "cycles": cycles, "a_max": a_max})
    if rel.max() > tol:
        raise ConvergenceError(
            f"shift-invert did not converge in {iterations} iterations "
            f"(max relative residual {rel.max():.3e} > {tol:g})", result)
    return result


def solve_pencil(pencil, m: int, dense_threshold: int = DENSE_THRESHOLD,
                 tol: float = DEFAULT_TOL, maxiter: Optional[int] = None,
                 seed: int = 0) -> EigenResult:
    """Smallest m eigenpairs of a condensed HDG pencil, choosing the path
    by the U-block dimension."""
    n = pencil.size
    if n <= dense_threshold:
        return solve_dense(pencil.dense_A(), pencil.M_u, m, max_dim=max(dense_threshold, n))
    return solve_shift_invert(pencil.matvec, pencil.M_u, m, tol=tol, maxiter=maxiter,
                              seed=seed, shifted_solve=pencil.shifted_solve)
