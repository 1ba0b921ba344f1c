"""
Reference spectra, convergence ratios, bound verdicts, the two-sequence
combination of lower and upper eigenvalue bounds, and eigenfunction error
norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .assembly import BlockSystem, Fields
from .shape import AffineTriangle, TriangleBasis, collapsed_triangle_rule, flux_monomials

__all__ = [
    "LOWER",
    "UPPER",
    "TIE",
    "exact_eigenvalues",
    "ExactPair",
    "convergence_ratio",
    "combine_bounds",
    "bound_verdict",
    "BoundsTable",
    "bounds_table",
    "error_norms",
]

LOWER, UPPER, TIE = "LOWER", "UPPER", "TIE"


def exact_eigenvalues(count: int) -> List[int]:
    """First ``count`` values of {m^2 + n^2 : m, n >= 1}, with multiplicity."""
    if count < 1:
        raise ValueError("count must be >= 1")
    N = max(2, math.isqrt(count) + 1)
    while True:
        vals = sorted(m * m + n * n for m in range(1, N + 1) for n in range(1, N + 1))
        # anything with max(m, n) > N is at least (N+1)^2 + 1
        if len(vals) >= count and vals[count - 1] <= (N + 1) ** 2:
            return vals[:count]
        N *= 2


@dataclass(frozen=True)
class ExactPair:
    """Dirichlet Laplacian eigenpair on (0, L)^2, L^2-normalized.

    u = (2/L) sin(m pi x / L) sin(n pi y / L), p = -grad u.
    """

    m: int = 1
    n: int = 1
    side_length: float = math.pi

    @property
    def eigenvalue(self) -> float:
        return (math.pi / self.side_length) ** 2 * (self.m ** 2 + self.n ** 2)

    def is_simple(self) -> bool:
        target = self.m ** 2 + self.n ** 2
        count = sum(1 for a in range(1, target + 1) for b in range(1, target + 1)
                    if a * a + b * b == target)
        return count == 1

    def u(self, x, y):
        k = math.pi / self.side_length
        return (2.0 / self.side_length) * np.sin(self.m * k * x) * np.sin(self.n * k * y)

    def p(self, x, y):
        k = math.pi / self.side_length
        c = 2.0 / self.side_length
        px = -c * self.m * k * np.cos(self.m * k * x) * np.sin(self.n * k * y)
        py = -c * self.n * k * np.sin(self.m * k * x) * np.cos(self.n * k * y)
        return np.stack([px, py], axis=-1)


def convergence_ratio(values: Sequence[float], exact: Optional[float] = None) -> List[Optional[float]]:
    """Observed order per level; ``None`` where undefined.

    With the exact value: log2(|lam - v_{2h}| / |lam - v_h|), defined from
    the second level on. Without: log2(|v_{4h} - v_{2h}| / |v_{2h} - v_h|),
    defined from the third level on.
    """
    v = [float(x) for x in values]
    out: List[Optional[float]] = [None] * len(v)
    if exact is not None:
        for i in range(1, len(v)):
            num, den = abs(exact - v[i - 1]), abs(exact - v[i])
            out[i] = _log2_ratio(num, den)
    else:
        for i in range(2, len(v)):
            num, den = abs(v[i - 2] - v[i - 1]), abs(v[i - 1] - v[i])
            out[i] = _log2_ratio(num, den)
    return out


def _log2_ratio(num, den):
    if den == 0 or num == 0:
        return None
    return math.log2(num / den)


def combine_bounds(lower: Sequence[float], upper: Sequence[float]):
    """Convex combination of a lower- and an upper-bound sequence.

    rho_{j+1} = (L_j - L_{j+1}) / (U_{j+1} - U_j + L_j - L_{j+1}) and
    hat_{j+1} = rho U_{j+1} + (1 - rho) L_{j+1}. Level 0 has no value.
    Returns ``(rho, hat)`` lists with ``None`` where undefined (first level
    or zero denominator). rho is not clamped to [0, 1].
    """
    if len(lower) != len(upper):
        raise ValueError("lower and upper sequences must have equal length")
    if len(lower) < 2:
        raise ValueError("need at least two levels")
    rho: List[Optional[float]] = [None]
    hat: List[Optional[float]] = [None]
    for j in range(len(lower) - 1):
        dl = float(lower[j]) - float(lower[j + 1])
        den = float(upper[j + 1]) - float(upper[j]) + dl
        if den == 0:
            rho.append(None)
            hat.append(None)
            continue
        r = dl / den
        rho.append(r)
        hat.append(r * float(upper[j + 1]) + (1 - r) * float(lower[j + 1]))
    return rho, hat


def bound_verdict(discrete: Sequence[float], exact: Sequence[float], rtol: float = 1e-12) -> List[str]:
    """LOWER / UPPER / TIE per index (sorted-index pairing)."""
    if len(discrete) != len(exact):
        raise ValueError("discrete and exact lists must have equal length")
    out = []
    for d, e in zip(discrete, exact):
        if abs(d - e) <= rtol * abs(e):
            out.append(TIE)
        elif d < e:
            out.append(LOWER)
        else:
            out.append(UPPER)
    return out


@dataclass
class BoundsTable:
    """Per-level lower/upper sequences for one eigenvalue index."""

    levels: List[int]
    gamma_low: float
    gamma_high: float
    lower: List[float]
    upper: List[float]
    rho: List[Optional[float]]
    hat: List[Optional[float]]
    ratio_lower: List[Optional[float]]
    ratio_upper: List[Optional[float]]
    ratio_hat: List[Optional[float]]
    exact: Optional[float] = None
    flags: List[str] = field(default_factory=list)


def bounds_table(levels, lower, upper, gamma_low, gamma_high, exact=None) -> BoundsTable:
    """Assemble a :class:`BoundsTable`; ratios use the exact value if given."""
    levels = list(levels)
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be strictly increasing")
    rho, hat = combine_bounds(lower, upper)
    flags = []
    for lev, r in zip(levels, rho):
        if r is not None and not 0 < r < 1:
            flags.append(f"rho={r:.6g} outside (0, 1) at n={lev}")
    for lev, r, h in zip(levels[1:], rho[1:], hat[1:]):
        if h is None:
            flags.append(f"combination undefined at n={lev}")
    hat_defined = [h for h in hat if h is not None]
    first = len(hat) - len(hat_defined)
    ratio_hat = [None] * first + convergence_ratio(hat_defined, exact) if hat_defined else [None] * len(hat)
    return BoundsTable(
        levels=levels, gamma_low=gamma_low, gamma_high=gamma_high,
        lower=list(lower), upper=list(upper), rho=rho, hat=hat,
        ratio_lower=convergence_ratio(lower, exact),
        ratio_upper=convergence_ratio(upper, exact),
        ratio_hat=ratio_hat, exact=exact, flags=flags,
    )


def error_norms(system: BlockSystem, fields: Fields, exact: ExactPair):
    """(||u - u_h||_0, ||p - p_h||_0, ||Q u - u_h||_0) for a simple eigenpair.

    Q is the element-wise L^2 projection onto the scalar space (the mean
    value for the divergence-based family). The discrete pair is flipped
    to maximise (u, u_h); both functions are assumed L^2-normalized.
    """
    if not exact.is_simple():
        raise ValueError(f"eigenvalue {exact.m ** 2 + exact.n ** 2} is multiple; "
                         "eigenspace alignment is not supported")
    mesh, config, d = system.mesh, system.config, system.dofs
    if not math.isclose(mesh.side_length, exact.side_length, rel_tol=1e-14):
        raise ValueError("exact pair and mesh use different domains")
    kq = config.trace_order
    rule = collapsed_triangle_rule(2 * kq + 6)
    geo = AffineTriangle(mesh.vertices[mesh.triangles])
    W = geo.weights(rule)
    X = geo.points(rule.points)
    ub = TriangleBasis(config.u_order)
    phi = ub.eval(rule.points)
    fo = config.flux_order
    nm = 1 if fo == 0 else 3
    mono, _ = flux_monomials(fo, X, geo.centroid, mesh.h_K)

    u_ex = exact.u(X[..., 0], X[..., 1])
    p_ex = exact.p(X[..., 0], X[..., 1])
    U = fields.U[d.element_u_block]
    P = fields.P[d.element_p].reshape(-1, 2, nm)
    u_h = np.einsum("qi,ti->tq", phi, U)
    p_h = np.einsum("tcm,tqm->tqc", P, mono)
    if np.sum(W * u_ex * u_h) < 0:
        u_h, p_h, U = -u_h, -p_h, -U

    err_u = math.sqrt(np.sum(W * (u_ex - u_h) ** 2))
    err_p = math.sqrt(np.sum(W[..., None] * (p_ex - p_h) ** 2))
    Mloc = np.einsum("tq,qi,qj->tij", W, phi, phi)
    rhs = np.einsum("tq,qi,tq->ti", W, phi, u_ex)
    proj = np.linalg.solve(Mloc, rhs[..., None])[..., 0]
    Qu = np.einsum("qi,ti->tq", phi, proj)
    err_q = math.sqrt(np.sum(W * (Qu - u_h) ** 2))
    return err_u, err_p, err_q
