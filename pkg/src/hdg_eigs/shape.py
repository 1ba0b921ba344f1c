"""
Reference-element bases, affine maps and quadrature.

Reference triangle is {(x, y): x, y >= 0, x + y <= 1}; reference edge is
[0, 1]. Scalar bases are nodal (Lagrange) up to order 2, flux bases are
centred monomials scaled by the element diameter.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "QuadratureRule",
    "triangle_rule",
    "edge_rule",
    "collapsed_triangle_rule",
    "TriangleBasis",
    "EdgeBasis",
    "AffineTriangle",
    "map_to_physical",
    "flux_monomials",
]

MAX_RULE_DEGREE = 6


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Points in reference coordinates, positive weights, exactness degree."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self) -> int:
        return len(self.weights)


# Symmetric orbits: ("c", w), ("a", a, w) -> permutations of (a, a, 1-2a),
# ("ab", a, b, w) -> permutations of (a, b, 1-a-b). Weights are relative to
# unit area and get polished below; positive throughout.
_TRIANGLE_ORBITS = {
    1: [("c", 1.0)],
    2: [("a", 1 / 6, 1 / 3)],
    3: [("a", 0.445948490915965, 0.223381589678011),
        ("a", 0.091576213509771, 0.109951743655322)],
    4: [("a", 0.445948490915965, 0.223381589678011),
        ("a", 0.091576213509771, 0.109951743655322)],
    5: [("c", 0.225),
        ("a", 0.470142064105115, 0.132394152788506),
        ("a", 0.101286507323456, 0.125939180544827)],
    6: [("a", 0.249286745170910, 0.116786275726379),
        ("a", 0.063089014491502, 0.050844906370207),
        ("ab", 0.310352451033785, 0.053145049844816, 0.082851075618374)],
}


def _orbit_points(orbits, params):
    pts, wts = [], []
    it = iter(params)
    for kind, *_ in orbits:
        if kind == "c":
            w = next(it)
            pts.append((1 / 3, 1 / 3, 1 / 3))
            wts.append(w)
        elif kind == "a":
            a, w = next(it), next(it)
            b = 1 - 2 * a
            pts += [(a, a, b), (a, b, a), (b, a, a)]
            wts += [w] * 3
        else:
            a, b, w = next(it), next(it), next(it)
            c = 1 - a - b
            pts += [(a, b, c), (b, a, c), (a, c, b), (c, a, b), (b, c, a), (c, b, a)]
            wts += [w] * 6
    return np.array(pts), np.array(wts)


def _monomial_moments(degree):
    """Exact integrals of x^i y^j over the unit-area scaled triangle."""
    from math import factorial
    exps = [(i, j) for d in range(degree + 1) for i in range(d + 1) for j in [d - i]]
    # int_T x^i y^j = i! j! / (i + j + 2)!, times 2 for unit area
    vals = [2.0 * factorial(i) * factorial(j) / factorial(i + j + 2) for i, j in exps]
    return exps, np.array(vals)


def _polish(orbits, degree):
    params = []
    for kind, *vals in orbits:
        params += vals
    params = np.array(params, dtype=float)
    exps, target = _monomial_moments(degree)

    def residual(p):
        bary, w = _orbit_points(orbits, p)
        x, y = bary[:, 1], bary[:, 2]
        return np.array([w @ (x ** i * y ** j) for i, j in exps]) - target

    # Gauss-Newton with a finite-difference Jacobian converges in a few steps
    # from the tabulated 15-digit values.
    for _ in range(20):
        r = residual(params)
        if np.max(np.abs(r)) < 1e-16:
            break
        J = np.empty((len(r), len(params)))
        for k in range(len(params)):
            dp = np.zeros_like(params)
            dp[k] = 1e-7
            J[:, k] = (residual(params + dp) - residual(params - dp)) / 2e-7
        params = params - np.linalg.lstsq(J, r, rcond=None)[0]
    return _orbit_points(orbits, params)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Symmetric rule with positive weights, exact through total ``degree``."""
    if int(degree) != degree or not 1 <= degree <= MAX_RULE_DEGREE:
        raise ValueError(f"triangle_rule supports degree 1..{MAX_RULE_DEGREE}, got {degree}")
    degree = int(degree)
    # the degree-3 entry reuses the degree-4 orbits
    bary, w = _polish(_TRIANGLE_ORBITS[degree], max(degree, 4) if degree == 3 else degree)
    pts = np.ascontiguousarray(bary[:, 1:])
    w = 0.5 * w
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(pts, w, degree)


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1] exact through ``degree``."""
    if int(degree) != degree or not 1 <= degree <= MAX_RULE_DEGREE:
        raise ValueError(f"edge_rule supports degree 1..{MAX_RULE_DEGREE}, got {degree}")
    npts = int(degree) // 2 + 1
    x, w = np.polynomial.legendre.leggauss(npts)
    pts, w = 0.5 * (x + 1.0), 0.5 * w
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(pts, w, int(degree))


@lru_cache(maxsize=None)
def collapsed_triangle_rule(degree: int) -> QuadratureRule:
    """Duffy-collapsed Gauss rule of any degree (not symmetric).

    Used where integrands are not polynomial and more points than the
    symmetric tables provide are wanted, e.g. error norms.
    """
    m = int(degree) // 2 + 1
    x, wx = np.polynomial.legendre.leggauss(m)
    s, ws = np.polynomial.legendre.leggauss(m + 1)
    x, wx = 0.5 * (x + 1), 0.5 * wx
    s, ws = 0.5 * (s + 1), 0.5 * ws
    S, X = np.meshgrid(s, x, indexing="ij")
    WS, WX = np.meshgrid(ws, wx, indexing="ij")
    px = S.ravel()
    py = (X * (1 - S)).ravel()
    w = (WS * WX * (1 - S)).ravel()
    return QuadratureRule(np.column_stack([px, py]), w, int(degree))


def _lagrange_nodes(k):
    if k == 0:
        return np.array([[1 / 3, 1 / 3]])
    if k == 1:
        return np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    if k == 2:
        return np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0],
                         [0.5, 0.5], [0.0, 0.5], [0.5, 0.0]])
    raise ValueError(f"unsupported order {k}")


class TriangleBasis:
    """Nodal P_k basis (k <= 2) on the reference triangle.

    For k = 2 the nodes are the vertices followed by the midpoints of the
    edges opposite vertex 0, 1, 2.
    """

    def __init__(self, order: int):
        if order not in (0, 1, 2):
            raise ValueError(f"TriangleBasis supports orders 0..2, got {order}")
        self.order = order
        self.nodes = _lagrange_nodes(order)
        self.dim = (order + 1) * (order + 2) // 2

    def __repr__(self):
        return f"TriangleBasis({self.order})"

    def eval(self, pts: np.ndarray) -> np.ndarray:
        """Values, shape (npoints, dim)."""
        pts = np.atleast_2d(pts)
        x, y = pts[:, 0], pts[:, 1]
        l0, l1, l2 = 1 - x - y, x, y
        if self.order == 0:
            return np.ones((len(pts), 1))
        if self.order == 1:
            return np.column_stack([l0, l1, l2])
        return np.column_stack([
            l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
            4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1,
        ])

    def grad(self, pts: np.ndarray) -> np.ndarray:
        """Reference gradients, shape (npoints, dim, 2)."""
        pts = np.atleast_2d(pts)
        x, y = pts[:, 0], pts[:, 1]
        nq = len(pts)
        if self.order == 0:
            return np.zeros((nq, 1, 2))
        g0 = np.array([-1.0, -1.0])
        g1 = np.array([1.0, 0.0])
        g2 = np.array([0.0, 1.0])
        if self.order == 1:
            return np.broadcast_to(np.stack([g0, g1, g2]), (nq, 3, 2)).copy()
        l0, l1, l2 = 1 - x - y, x, y
        out = np.empty((nq, 6, 2))
        out[:, 0] = (4 * l0 - 1)[:, None] * g0
        out[:, 1] = (4 * l1 - 1)[:, None] * g1
        out[:, 2] = (4 * l2 - 1)[:, None] * g2
        out[:, 3] = 4 * (l1[:, None] * g2 + l2[:, None] * g1)
        out[:, 4] = 4 * (l2[:, None] * g0 + l0[:, None] * g2)
        out[:, 5] = 4 * (l0[:, None] * g1 + l1[:, None] * g0)
        return out


class EdgeBasis:
    """Nodal P_k basis on [0, 1] with equispaced nodes."""

    def __init__(self, order: int):
        if order not in (0, 1, 2):
            raise ValueError(f"EdgeBasis supports orders 0..2, got {order}")
        self.order = order
        self.dim = order + 1
        self.nodes = np.array([0.5]) if order == 0 else np.linspace(0.0, 1.0, order + 1)

    def eval(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.order == 0:
            return np.ones(t.shape + (1,))
        if self.order == 1:
            return np.stack([1 - t, t], axis=-1)
        return np.stack([(1 - t) * (1 - 2 * t), 4 * t * (1 - t), t * (2 * t - 1)], axis=-1)


def flux_monomials(order: int, pts: np.ndarray, center: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Scalar monomials {1} or {1, (x-xc)/h, (y-yc)/h} at physical points.

    ``pts`` has shape (T, nq, 2), ``center`` (T, 2), ``h`` (T,).
    Returns values of shape (T, nq, nmono) and the constant gradients of
    shape (T, nmono, 2).
    """
    T, nq, _ = pts.shape
    if order == 0:
        return np.ones((T, nq, 1)), np.zeros((T, 1, 2))
    if order != 1:
        raise ValueError(f"flux order must be 0 or 1, got {order}")
    rel = (pts - center[:, None, :]) / h[:, None, None]
    vals = np.concatenate([np.ones((T, nq, 1)), rel], axis=2)
    grads = np.zeros((T, 3, 2))
    grads[:, 1, 0] = 1.0 / h
    grads[:, 2, 1] = 1.0 / h
    return vals, grads


# local edge i joins local vertices (i+1, i+2)
LOCAL_EDGE_VERTICES = np.array([[1, 2], [2, 0], [0, 1]])
_REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


class AffineTriangle:
    """Affine maps x = v0 + J xi for a batch of triangles.

    ``coords`` has shape (T, 3, 2) or (3, 2).
    """

    def __init__(self, coords: np.ndarray):
        coords = np.asarray(coords, dtype=float)
        if coords.ndim == 2:
            coords = coords[None]
        self.coords = coords
        self.J = np.stack([coords[:, 1] - coords[:, 0], coords[:, 2] - coords[:, 0]], axis=2)
        self.det = self.J[:, 0, 0] * self.J[:, 1, 1] - self.J[:, 0, 1] * self.J[:, 1, 0]
        sides = coords[:, LOCAL_EDGE_VERTICES[:, 1]] - coords[:, LOCAL_EDGE_VERTICES[:, 0]]
        self.edge_lengths = np.linalg.norm(sides, axis=2)
        self.diameter = self.edge_lengths.max(axis=1)
        if np.any(np.abs(self.det) < 1e-14 * self.diameter ** 2):
            raise ValueError("degenerate triangle: |det J| below 1e-14 h_K^2")
        J = self.J
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1]
        inv[:, 1, 1] = J[:, 0, 0]
        inv[:, 0, 1] = -J[:, 0, 1]
        inv[:, 1, 0] = -J[:, 1, 0]
        self.Jinv = inv / self.det[:, None, None]
        # outward normal of a CCW triangle: rotate tangent clockwise
        nrm = np.stack([sides[..., 1], -sides[..., 0]], axis=2) / self.edge_lengths[..., None]
        self.normals = nrm * np.sign(self.det)[:, None, None]
        self.centroid = coords.mean(axis=1)

    def __len__(self):
        return len(self.coords)

    def points(self, ref_pts: np.ndarray) -> np.ndarray:
        """Physical points, shape (T, nq, 2)."""
        return self.coords[:, None, 0, :] + np.einsum("tij,qj->tqi", self.J, ref_pts)

    def grads(self, ref_grads: np.ndarray) -> np.ndarray:
        """Physical gradients J^{-T} grad_ref, shape (T, nq, nb, 2)."""
        return np.einsum("tji,qbj->tqbi", self.Jinv, ref_grads)

    def weights(self, rule: QuadratureRule) -> np.ndarray:
        """Physical quadrature weights |det J| w, shape (T, nq)."""
        return np.abs(self.det)[:, None] * rule.weights[None, :]

    def edge_ref_points(self, local_edge: int, s: np.ndarray) -> np.ndarray:
        """Reference coordinates of points at parameter s along a local edge.

        The edge runs from local vertex i+1 to i+2.
        """
        a, b = LOCAL_EDGE_VERTICES[local_edge]
        s = np.asarray(s, dtype=float)[:, None]
        return (1 - s) * _REF_VERTICES[a] + s * _REF_VERTICES[b]


def map_to_physical(basis: TriangleBasis, coords: np.ndarray, ref_pts: np.ndarray,
                    rule: QuadratureRule | None = None):
    """Evaluate a reference basis on physical triangles.

    Returns a dict with ``values`` (nq, nb), ``grads`` (T, nq, nb, 2),
    ``points`` (T, nq, 2), ``normals`` (T, 3, 2) and, if a rule is given,
    ``weights`` (T, nq).
    """
    geo = AffineTriangle(coords)
    out = {
        "values": basis.eval(ref_pts),
        "grads": geo.grads(basis.grad(ref_pts)),
        "points": geo.points(ref_pts),
        "normals": geo.normals,
    }
    if rule is not None:
        out["weights"] = geo.weights(rule)
    return out
