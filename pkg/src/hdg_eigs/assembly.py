"""
HDG assembly and static condensation.

Unknowns are ordered [P | U | Uhat]: element-wise flux coefficients, element
-wise scalar coefficients and trace coefficients on interior edges (the
trace space vanishes on the boundary, so boundary trace unknowns are never
allocated). The discrete eigenproblem is

    K x = -lambda Mt x,   K = [[A_p, B1^T, B2^T], [B1, C11, C12^T], [B2, C12, C22]],

with Mt = diag(0, M, 0). Eliminating P element by element and Uhat through
one sparse factorization leaves the SPD pencil (A_u, M) on the U block.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh
from .shape import (
    AffineTriangle,
    EdgeBasis,
    LOCAL_EDGE_VERTICES,
    TriangleBasis,
    edge_rule,
    flux_monomials,
    triangle_rule,
)

__all__ = [
    "GRADIENT",
    "DIVERGENCE",
    "MethodConfig",
    "DofMap",
    "BlockSystem",
    "CondensedPencil",
    "CondensationError",
    "assemble",
    "condense",
    "reconstruct",
    "first_equation_residual",
    "write_coo",
]

log = logging.getLogger(__name__)

GRADIENT = "gradient"
DIVERGENCE = "divergence"


class CondensationError(RuntimeError):
    """Raised when the trace block cannot be factorized."""


@dataclass(frozen=True)
class MethodConfig:
    """HDG family, order, stabilization and coefficient.

    ``alpha`` maps checkerboard region ids (1..4) to diffusion values;
    ``None`` means alpha = 1 everywhere. ``k`` is ignored by the
    divergence-based family, whose spaces are fixed.
    """

    family: str = GRADIENT
    k: int = 1
    gamma: float = 1.0
    alpha: Optional[Mapping[int, float]] = None
    side_length: Optional[float] = None

    def __post_init__(self):
        if self.family not in (GRADIENT, DIVERGENCE):
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == GRADIENT:
            if self.k not in (1, 2):
                raise ValueError(f"gradient-based family supports k in {{1, 2}}, got {self.k}")
            if not self.gamma > 0:
                raise ValueError(f"gradient-based family needs gamma > 0, got {self.gamma}")
        elif not self.gamma >= 0:
            raise ValueError(f"divergence-based family needs gamma >= 0, got {self.gamma}")
        if self.alpha is not None:
            if any(not v > 0 for v in self.alpha.values()):
                raise ValueError("alpha values must be strictly positive")

    @property
    def u_order(self) -> int:
        return self.k if self.family == GRADIENT else 0

    @property
    def flux_order(self) -> int:
        return self.k - 1 if self.family == GRADIENT else 1

    @property
    def trace_order(self) -> int:
        return self.k if self.family == GRADIENT else 1

    @property
    def quad_degree(self) -> int:
        return 2 * self.trace_order + 2

    def tau(self, h_K: np.ndarray) -> np.ndarray:
        if self.family == GRADIENT:
            return self.gamma / h_K
        return self.gamma * h_K

    def label(self) -> str:
        if self.family == GRADIENT:
            return f"gradient(k={self.k}, gamma={self.gamma:g})"
        return f"divergence(gamma={self.gamma:g})"


@dataclass(frozen=True, eq=False)
class DofMap:
    """Global numbering of the three unknown blocks.

    ``element_p``/``element_u`` are (T, n_local) global indices in the full
    [P | U | Uhat] system; ``element_uhat`` is (T, 3 * n_trace) with ``-1``
    on boundary edges; ``edge_uhat`` is (E, n_trace), ``-1`` on boundary.
    ``*_block`` variants index inside their own block.
    """

    n_p: int
    n_u: int
    n_uhat: int
    element_p: np.ndarray
    element_u: np.ndarray
    element_uhat: np.ndarray
    edge_uhat: np.ndarray

    @property
    def size(self) -> int:
        return self.n_p + self.n_u + self.n_uhat

    @property
    def p_slice(self) -> slice:
        return slice(0, self.n_p)

    @property
    def u_slice(self) -> slice:
        return slice(self.n_p, self.n_p + self.n_u)

    @property
    def uhat_slice(self) -> slice:
        return slice(self.n_p + self.n_u, self.size)

    @property
    def element_u_block(self) -> np.ndarray:
        return self.element_u - self.n_p

    @property
    def element_uhat_block(self) -> np.ndarray:
        return np.where(self.element_uhat >= 0, self.element_uhat - self.n_p - self.n_u, -1)


@dataclass(frozen=True, eq=False)
class LocalMatrices:
    """Per-element dense blocks, leading axis is the element index."""

    A: np.ndarray   # (T, np, np)
    B: np.ndarray   # (T, nu + 3 nt, np): rows U then the three edges' traces
    C: np.ndarray   # (T, nu + 3 nt, nu + 3 nt)
    M: np.ndarray   # (T, nu, nu)


@dataclass(frozen=True, eq=False)
class BlockSystem:
    """Assembled sparse blocks of the HDG pencil (CSR)."""

    A_p: sp.csr_matrix
    B1: sp.csr_matrix
    B2: sp.csr_matrix
    C11: sp.csr_matrix
    C12: sp.csr_matrix
    C22: sp.csr_matrix
    M: sp.csr_matrix
    dofs: DofMap
    config: MethodConfig
    mesh: Mesh
    local: LocalMatrices = field(repr=False)

    def full_matrix(self) -> sp.csr_matrix:
        """K = [[A_p, B1^T, B2^T], [B1, C11, C12^T], [B2, C12, C22]]."""
        return sp.bmat([
            [self.A_p, self.B1.T, self.B2.T],
            [self.B1, self.C11, self.C12.T],
            [self.B2, self.C12, self.C22],
        ], format="csr")

    def full_mass(self) -> sp.csr_matrix:
        """Mt = diag(0, M, 0)."""
        d = self.dofs
        return sp.block_diag([
            sp.csr_matrix((d.n_p, d.n_p)), self.M, sp.csr_matrix((d.n_uhat, d.n_uhat)),
        ], format="csr")


def _element_alpha(mesh: Mesh, config: MethodConfig) -> np.ndarray:
    if config.alpha is None:
        return np.ones(mesh.num_triangles)
    alpha = np.asarray([config.alpha.get(int(r), 1.0) for r in mesh.subdomain])
    if len(set(config.alpha.values())) > 1 and mesh.n % 2:
        raise ValueError("piecewise-constant alpha needs an even n so that "
                         "interfaces align with the mesh")
    return alpha


def _local_matrices(mesh: Mesh, config: MethodConfig):
    T = mesh.num_triangles
    coords = mesh.vertices[mesh.triangles]
    geo = AffineTriangle(coords)
    h_K = mesh.h_K
    tau = config.tau(h_K)
    alpha = _element_alpha(mesh, config)

    ub = TriangleBasis(config.u_order)
    tb = EdgeBasis(config.trace_order)
    fo = config.flux_order
    nu, nt = ub.dim, tb.dim
    nm = 1 if fo == 0 else 3
    npl = 2 * nm

    rule = triangle_rule(config.quad_degree)
    W = geo.weights(rule)                           # (T, nq)
    phi = ub.eval(rule.points)                      # (nq, nu)
    X = geo.points(rule.points)
    mono, mgrad = flux_monomials(fo, X, geo.centroid, h_K)

    M = np.einsum("tq,qi,qj->tij", W, phi, phi)
    Mm = np.einsum("tq,tqa,tqb->tab", W, mono, mono)
    A = np.zeros((T, npl, npl))
    A[:, :nm, :nm] = Mm
    A[:, nm:, nm:] = Mm
    A /= alpha[:, None, None]

    nl = nu + 3 * nt
    B = np.zeros((T, nl, npl))
    C = np.zeros((T, nl, nl))
    # -(u, div q): flux basis index c * nm + m, div = d(mono_m)/dx_c
    phi_int = np.einsum("tq,qi->ti", W, phi)
    for c in range(2):
        B[:, :nu, c * nm:(c + 1) * nm] = -phi_int[:, :, None] * mgrad[:, None, :, c]

    er = edge_rule(config.quad_degree)
    for i in range(3):
        a, b = LOCAL_EDGE_VERTICES[i]
        ref = geo.edge_ref_points(i, er.points)
        phi_e = ub.eval(ref)                                   # (nqe, nu)
        Xe = geo.points(ref)
        mono_e, _ = flux_monomials(fo, Xe, geo.centroid, h_K)  # (T, nqe, nm)
        We = geo.edge_lengths[:, i, None] * er.weights[None, :]
        # trace functions live in the global edge parameterization,
        # lower vertex index -> higher
        va, vb = mesh.triangles[:, a], mesh.triangles[:, b]
        t = np.where((va < vb)[:, None], er.points[None, :], 1.0 - er.points[None, :])
        mu = tb.eval(t)                                        # (T, nqe, nt)
        nrm = geo.normals[:, i]                                # (T, 2)
        rows = slice(nu + i * nt, nu + (i + 1) * nt)
        for c in range(2):
            B[:, rows, c * nm:(c + 1) * nm] = (
                np.einsum("tq,tqa,tqm->tam", We, mu, mono_e) * nrm[:, c, None, None])
        Wt = We * tau[:, None]
        C[:, :nu, :nu] -= np.einsum("tq,qi,qj->tij", Wt, phi_e, phi_e)
        Cgu = np.einsum("tq,tqa,qj->taj", Wt, mu, phi_e)
        C[:, rows, :nu] += Cgu
        C[:, :nu, rows] += Cgu.transpose(0, 2, 1)
        C[:, rows, rows] -= np.einsum("tq,tqa,tqb->tab", Wt, mu, mu)
    return LocalMatrices(A=A, B=B, C=C, M=M), (nu, nt, npl)


def _dofmap(mesh: Mesh, nu: int, nt: int, npl: int) -> DofMap:
    T = mesh.num_triangles
    n_p, n_u = npl * T, nu * T
    interior = ~mesh.boundary_edge
    n_uhat = nt * int(interior.sum())
    edge_uhat = np.full((mesh.num_edges, nt), -1, dtype=np.int64)
    edge_uhat[interior] = (n_p + n_u + np.arange(n_uhat)).reshape(-1, nt)
    element_p = np.arange(n_p).reshape(T, npl)
    element_u = n_p + np.arange(n_u).reshape(T, nu)
    element_uhat = edge_uhat[mesh.triangle_edges].reshape(T, 3 * nt)
    for a in (element_p, element_u, element_uhat, edge_uhat):
        a.setflags(write=False)
    return DofMap(n_p, n_u, n_uhat, element_p, element_u, element_uhat, edge_uhat)


def _scatter(local: np.ndarray, rows: np.ndarray, cols: np.ndarray, shape) -> sp.csr_matrix:
    """Sum element blocks into a CSR matrix, skipping ``-1`` indices.

    Triplets are laid out in element order, so the result does not depend
    on how the element blocks were computed.
    """
    T, nr, nc = local.shape
    R = np.broadcast_to(rows[:, :, None], (T, nr, nc))
    Cc = np.broadcast_to(cols[:, None, :], (T, nr, nc))
    keep = (R >= 0) & (Cc >= 0)
    mat = sp.coo_matrix((local[keep], (R[keep], Cc[keep])), shape=shape)
    mat.sum_duplicates()
    return mat.tocsr()


def assemble(mesh: Mesh, config: MethodConfig):
    """Assemble the HDG blocks. Returns ``(BlockSystem, DofMap)``."""
    if config.side_length is not None and not np.isclose(config.side_length, mesh.side_length,
                                                         rtol=1e-14):
        raise ValueError(f"config side_length {config.side_length} does not match "
                         f"mesh side_length {mesh.side_length}")
    local, (nu, nt, npl) = _local_matrices(mesh, config)
    d = _dofmap(mesh, nu, nt, npl)
    pb = d.element_p
    ub = d.element_u_block
    gb = d.element_uhat_block
    sub_u = slice(0, nu)
    sub_g = slice(nu, nu + 3 * nt)
    A_p = _scatter(local.A, pb, pb, (d.n_p, d.n_p))
    B1 = _scatter(local.B[:, sub_u], ub, pb, (d.n_u, d.n_p))
    B2 = _scatter(local.B[:, sub_g], gb, pb, (d.n_uhat, d.n_p))
    C11 = _scatter(local.C[:, sub_u, sub_u], ub, ub, (d.n_u, d.n_u))
    C12 = _scatter(local.C[:, sub_g, sub_u], gb, ub, (d.n_uhat, d.n_u))
    C22 = _scatter(local.C[:, sub_g, sub_g], gb, gb, (d.n_uhat, d.n_uhat))
    M = _scatter(local.M, ub, ub, (d.n_u, d.n_u))
    system = BlockSystem(A_p, B1, B2, C11, C12, C22, M, d, config, mesh, local)
    return system, d


class _SPDFactor:
    """Sparse LU without row pivoting, used as a Cholesky surrogate.

    With ``diag_pivot_thresh=0`` SuperLU keeps the diagonal pivots of the
    symmetrically permuted matrix; all of them are positive iff the matrix
    is positive definite, which is checked.
    """

    def __init__(self, matrix: sp.spmatrix, what: str):
        self.shape = matrix.shape
        try:
            self._lu = spla.splu(sp.csc_matrix(matrix), permc_spec="MMD_AT_PLUS_A",
                                 diag_pivot_thresh=0.0,
                                 options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise CondensationError(f"factorization of {what} failed: {exc}") from exc
        piv = self._lu.U.diagonal()
        scale = np.abs(matrix.diagonal()).max() if matrix.shape[0] else 1.0
        if np.any(piv <= 1e-12 * scale):
            raise CondensationError(f"{what} is not positive definite "
                                    f"(min pivot {piv.min():.3e})")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self._lu.solve(np.asarray(rhs, dtype=float))


@dataclass(eq=False)
class CondensedPencil:
    """SPD pencil (A_u, M_u) on the U block with recovery maps.

    ``A_u = -(S11 - S12 S22^{-1} S21)`` where ``S = C - B A_p^{-1} B^T``
    restricted to (U, Uhat). ``A_u`` is only formed densely on request
    (:meth:`dense_A`); the sparse path works with :meth:`matvec` and
    :meth:`shifted_solve`.
    """

    S11: sp.csr_matrix
    S12: sp.csr_matrix
    S22: sp.csr_matrix
    M_u: sp.csr_matrix
    system: BlockSystem
    _S22_factor: _SPDFactor = field(repr=False)
    _dense_A: Optional[np.ndarray] = field(default=None, repr=False)
    _shift_cache: dict = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return self.S11.shape[0]

    def recover_uhat(self, U: np.ndarray) -> np.ndarray:
        """Uhat = -S22^{-1} S21 U."""
        if self.S22.shape[0] == 0:
            return np.zeros((0,) + np.shape(U)[1:])
        return self._S22_factor.solve(self.S12.T @ U)

    def matvec(self, X: np.ndarray) -> np.ndarray:
        """A_u X without forming A_u."""
        G = self.recover_uhat(X)
        return -(self.S11 @ X + self.S12 @ G)

    def dense_A(self) -> np.ndarray:
        if self._dense_A is None:
            Y = self._S22_factor.solve(self.S12.T.toarray()) if self.S22.shape[0] else 0.0
            # -S22 is factorized, so S12 S22^{-1} S21 = -S12 Y
            A = -self.S11.toarray() - self.S12 @ Y
            self._dense_A = 0.5 * (A + A.T)
        return self._dense_A

    def shifted_solve(self, sigma: float):
        """Return a solver for (A_u - sigma M_u) x = b.

        Uses the sparse joint (U, Uhat) system, whose Schur complement onto
        U is A_u - sigma M_u.
        """
        if sigma not in self._shift_cache:
            G = sp.bmat([[-self.S11 - sigma * self.M_u, -self.S12],
                         [-self.S12.T, -self.S22]], format="csc")
            fac = _SPDFactor(G, f"shifted pencil (sigma={sigma:g}) of {self.system.config.label()}")
            n = self.size

            def solve(b, fac=fac, n=n):
                b = np.asarray(b, dtype=float)
                pad = np.zeros((G.shape[0] - n,) + b.shape[1:])
                return fac.solve(np.concatenate([b, pad]))[:n]

            self._shift_cache[sigma] = solve
        return self._shift_cache[sigma]


def condense(system: BlockSystem) -> CondensedPencil:
    """Eliminate P element-wise and Uhat by one sparse factorization."""
    loc = system.local
    d = system.dofs
    nu = d.element_u.shape[1]
    # S_K = C_K - B_K A_K^{-1} B_K^T, computed per element
    AinvBt = np.linalg.solve(loc.A, loc.B.transpose(0, 2, 1))
    S = loc.C - loc.B @ AinvBt
    S = 0.5 * (S + S.transpose(0, 2, 1))
    ub = d.element_u_block
    gb = d.element_uhat_block
    su, sg = slice(0, nu), slice(nu, None)
    S11 = _scatter(S[:, su, su], ub, ub, (d.n_u, d.n_u))
    S12 = _scatter(S[:, su, sg], ub, gb, (d.n_u, d.n_uhat))
    S22 = _scatter(S[:, sg, sg], gb, gb, (d.n_uhat, d.n_uhat))
    if d.n_uhat:
        fac = _SPDFactor(-S22, f"-S22 for {system.config.label()}")
    else:
        fac = None
    return CondensedPencil(S11=S11, S12=S12, S22=S22, M_u=system.M, system=system,
                           _S22_factor=fac)


@dataclass(frozen=True, eq=False)
class Fields:
    """Full discrete field: flux, scalar and trace coefficient vectors."""

    P: np.ndarray
    U: np.ndarray
    Uhat: np.ndarray
    residual: float

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.P, self.U, self.Uhat])


def reconstruct(pencil: CondensedPencil, U: np.ndarray, eigenvalue: Optional[float] = None) -> Fields:
    """Recover (P, U, Uhat) from a U-block vector.

    The flux solves the first HDG equation exactly. If ``eigenvalue`` is
    given, the reported residual is ||K x + lambda Mt x||_2 / ||x||_2,
    otherwise it is the residual of the first equation alone.
    """
    U = np.asarray(U, dtype=float)
    system = pencil.system
    d = system.dofs
    if U.shape != (d.n_u,):
        raise ValueError(f"U must have shape ({d.n_u},), got {U.shape}")
    Uhat = pencil.recover_uhat(U)
    ub = d.element_u_block
    gb = d.element_uhat_block
    Uhat_pad = np.concatenate([Uhat, [0.0]])
    local_rhs = np.concatenate([U[ub], Uhat_pad[gb]], axis=1)   # gb == -1 -> 0
    P_loc = -np.linalg.solve(system.local.A,
                             np.einsum("tlp,tl->tp", system.local.B, local_rhs)[..., None])[..., 0]
    P = np.empty(d.n_p)
    P[d.element_p.ravel()] = P_loc.ravel()
    x = np.concatenate([P, U, Uhat])
    K = system.full_matrix()
    r = K @ x
    if eigenvalue is not None:
        r[d.u_slice] += eigenvalue * (system.M @ U)
    else:
        r = r[d.p_slice]
    nx = np.linalg.norm(x)
    return Fields(P=P, U=U, Uhat=Uhat, residual=float(np.linalg.norm(r) / nx) if nx else 0.0)


def first_equation_residual(system: BlockSystem, fields: Fields) -> np.ndarray:
    """Evaluate (p_h + grad_h u_h, q) - <u_h - uhat_h, q.n>_{dT} for all q.

    Computed directly by quadrature from the gradient form, independently
    of the assembled blocks. Returns one value per flux basis function.
    """
    mesh, config, d = system.mesh, system.config, system.dofs
    geo = AffineTriangle(mesh.vertices[mesh.triangles])
    ub = TriangleBasis(config.u_order)
    tb = EdgeBasis(config.trace_order)
    fo = config.flux_order
    nm = 1 if fo == 0 else 3
    rule = triangle_rule(config.quad_degree)
    W = geo.weights(rule)
    X = geo.points(rule.points)
    mono, _ = flux_monomials(fo, X, geo.centroid, mesh.h_K)
    U = fields.U[d.element_u_block]                         # (T, nu)
    P = fields.P[d.element_p].reshape(-1, 2, nm)            # (T, c, m)
    p_q = np.einsum("tcm,tqm->tqc", P, mono)
    grad = geo.grads(ub.grad(rule.points))                  # (T, nq, nu, 2)
    alpha = _element_alpha(mesh, config)
    g_q = np.einsum("tqic,ti->tqc", grad, U)
    # first equation with alpha: (alpha^{-1} p + grad u, q)
    res = np.einsum("tq,tqc,tqm->tcm", W, p_q / alpha[:, None, None] + g_q, mono)

    Uhat_pad = np.concatenate([fields.Uhat, [0.0]])
    G = Uhat_pad[d.element_uhat_block].reshape(-1, 3, tb.dim)
    er = edge_rule(config.quad_degree)
    for i in range(3):
        a, b = LOCAL_EDGE_VERTICES[i]
        ref = geo.edge_ref_points(i, er.points)
        phi_e = ub.eval(ref)
        mono_e, _ = flux_monomials(fo, geo.points(ref), geo.centroid, mesh.h_K)
        We = geo.edge_lengths[:, i, None] * er.weights[None, :]
        va, vb = mesh.triangles[:, a], mesh.triangles[:, b]
        t = np.where((va < vb)[:, None], er.points[None, :], 1.0 - er.points[None, :])
        jump = np.einsum("qi,ti->tq", phi_e, U) - np.einsum("tqa,ta->tq", tb.eval(t), G[:, i])
        res -= np.einsum("tq,tq,tc,tqm->tcm", We, jump, geo.normals[:, i], mono_e)
    return res.reshape(len(res), -1)


def write_coo(matrix: sp.spmatrix, path) -> None:
    """Write ``row col value`` triplets with 17 significant digits."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"% {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {v:.17g}\n")
