"""
Structured triangulations of the square (0, L)^2.

The square is cut into an n x n grid of cells and every cell is split by
its positively sloped diagonal. Uniform refinement (each triangle into four
by edge midpoints) of the level-l mesh reproduces the n = 2^l mesh, so both
routes are offered and tested against each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

__all__ = [
    "Mesh",
    "Checkerboard",
    "build_structured_mesh",
    "refine",
    "subdomain_tag",
    "write_mesh",
    "read_mesh",
]

# Region ids of the 2 x 2 checkerboard partition.
OMEGA1, OMEGA2, OMEGA3, OMEGA4 = 1, 2, 3, 4


@dataclass(frozen=True)
class Checkerboard:
    """2 x 2 split of the square (0, side_length)^2 at its midlines.

    Omega1 is top-left, Omega2 top-right, Omega3 bottom-left and Omega4
    bottom-right.
    """

    side_length: float = 1.0


def subdomain_tag(point, partition: Checkerboard = Checkerboard()) -> int:
    """Return the region id (1..4) of a point of the closed domain.

    Points on a midline go to the upper/right region.
    """
    x, y = float(point[0]), float(point[1])
    L = partition.side_length
    tol = 1e-14 * L
    if not (-tol <= x <= L + tol and -tol <= y <= L + tol):
        raise ValueError(f"point ({x}, {y}) lies outside (0, {L})^2")
    right = x >= 0.5 * L
    top = y >= 0.5 * L
    if top:
        return OMEGA2 if right else OMEGA1
    return OMEGA4 if right else OMEGA3


def _tag_points(points: np.ndarray, L: float) -> np.ndarray:
    right = points[:, 0] >= 0.5 * L
    top = points[:, 1] >= 0.5 * L
    tags = np.where(top, np.where(right, OMEGA2, OMEGA1),
                    np.where(right, OMEGA4, OMEGA3))
    return tags.astype(np.int64)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulation with full edge connectivity.

    Attributes
    ----------
    vertices : (V, 2) float array
    triangles : (T, 3) int array, counter-clockwise.
    edges : (E, 2) int array of sorted vertex pairs.
    triangle_edges : (T, 3) int array; local edge ``i`` is opposite local
        vertex ``i``.
    edge_to_triangles : (E, 2) int array of adjacent triangles, lower index
        first, ``-1`` in the second slot for boundary edges.
    edge_local : (E, 2) int array, local edge index inside each adjacent
        triangle (``-1`` where absent).
    boundary_edge : (E,) bool array.
    h_K : (T,) triangle diameters (longest side).
    h_e : (E,) edge lengths.
    subdomain : (T,) checkerboard region id of each triangle barycenter.
    n : number of cells per side.
    side_length : L.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    triangle_edges: np.ndarray
    edge_to_triangles: np.ndarray
    edge_local: np.ndarray
    boundary_edge: np.ndarray
    h_K: np.ndarray
    h_e: np.ndarray
    subdomain: np.ndarray
    n: int
    side_length: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_edge)

    @property
    def num_interior_edges(self) -> int:
        return int(np.count_nonzero(~self.boundary_edge))

    @property
    def barycenters(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edge_normals(self) -> np.ndarray:
        """Global unit normal of every edge.

        Points from the lower-indexed adjacent triangle into the other one,
        i.e. outward on the boundary.
        """
        if "normals" not in self._cache:
            p = self.vertices[self.edges]
            t = p[:, 1] - p[:, 0]
            nrm = np.column_stack([t[:, 1], -t[:, 0]]) / self.h_e[:, None]
            # orient outward from the first adjacent triangle
            c = self.barycenters[self.edge_to_triangles[:, 0]]
            flip = np.einsum("ij,ij->i", nrm, p[:, 0] - c) < 0
            nrm[flip] *= -1.0
            self._cache["normals"] = _readonly(nrm)
        return self._cache["normals"]

    def __repr__(self) -> str:
        return (f"Mesh(n={self.n}, L={self.side_length:g}, V={self.num_vertices}, "
                f"T={self.num_triangles}, E={self.num_edges})")


def _from_arrays(vertices: np.ndarray, triangles: np.ndarray,
                 side_length: float, n: int) -> Mesh:
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    T = len(triangles)

    # local edge i joins local vertices i+1 and i+2
    loc = np.array([[1, 2], [2, 0], [0, 1]])
    pairs = np.sort(triangles[:, loc], axis=2).reshape(-1, 2)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    triangle_edges = inverse.reshape(T, 3)
    E = len(edges)

    owner = np.repeat(np.arange(T), 3)
    local = np.tile(np.arange(3), T)
    order = np.lexsort((owner, inverse))
    inv_sorted = inverse[order]
    counts = np.bincount(inverse, minlength=E)
    if counts.max() > 2:
        raise ValueError("non-manifold triangulation: edge shared by >2 triangles")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    edge_to_triangles = np.full((E, 2), -1, dtype=np.int64)
    edge_local = np.full((E, 2), -1, dtype=np.int64)
    slot = np.arange(len(order)) - starts[inv_sorted]
    edge_to_triangles[inv_sorted, slot] = owner[order]
    edge_local[inv_sorted, slot] = local[order]

    boundary = counts == 1
    p = vertices[edges]
    h_e = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    tp = vertices[triangles]
    sides = np.linalg.norm(tp[:, loc[:, 1]] - tp[:, loc[:, 0]], axis=2)
    h_K = sides.max(axis=1)
    subdomain = _tag_points(tp.mean(axis=1), side_length)

    return Mesh(
        vertices=_readonly(vertices),
        triangles=_readonly(triangles),
        edges=_readonly(edges),
        triangle_edges=_readonly(triangle_edges),
        edge_to_triangles=_readonly(edge_to_triangles),
        edge_local=_readonly(edge_local),
        boundary_edge=_readonly(boundary),
        h_K=_readonly(h_K),
        h_e=_readonly(h_e),
        subdomain=_readonly(subdomain),
        n=int(n),
        side_length=float(side_length),
    )


def build_structured_mesh(side_length: float, n: int) -> Mesh:
    """Structured mesh of (0, L)^2 with n cells per side, 2 n^2 triangles."""
    if not side_length > 0:
        raise ValueError(f"side_length must be positive, got {side_length}")
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    n = int(n)
    L = float(side_length)
    coords = np.arange(n + 1) * (L / n)
    X, Y = np.meshgrid(coords, coords)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return _from_arrays(vertices, triangles, L, n)


def refine(mesh: Mesh) -> Mesh:
    """Uniform red refinement: each triangle into four by edge midpoints."""
    if not isinstance(mesh, Mesh):
        raise TypeError("refine expects a Mesh")
    V = mesh.num_vertices
    mid = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    vertices = np.vstack([mesh.vertices, mid])
    a, b, c = mesh.triangles.T
    # midpoint ids of the edges opposite a, b, c
    m_bc, m_ca, m_ab = (V + mesh.triangle_edges).T
    children = np.stack([
        np.column_stack([a, m_ab, m_ca]),
        np.column_stack([m_ab, b, m_bc]),
        np.column_stack([m_ca, m_bc, c]),
        np.column_stack([m_ab, m_bc, m_ca]),
    ], axis=1).reshape(-1, 3)
    return _from_arrays(vertices, children, mesh.side_length, 2 * mesh.n)


PathLike = Union[str, Path]


def write_mesh(mesh: Mesh, path: PathLike) -> None:
    """Dump a mesh as plain text.

    Three sections, each opened by a ``# <kind> <count>`` header, then one
    entity per line: ``v x y``, ``t i j k`` and ``e i j b`` (``b`` is 1 on
    boundary edges). Coordinates use 17 significant digits.
    """
    lines = [f"# mesh n={mesh.n} L={mesh.side_length!r}",
             f"# vertices {mesh.num_vertices}"]
    lines += [f"v {x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines.append(f"# triangles {mesh.num_triangles}")
    lines += [f"t {i} {j} {k}" for i, j, k in mesh.triangles]
    lines.append(f"# edges {mesh.num_edges}")
    lines += [f"e {i} {j} {int(b)}" for (i, j), b in zip(mesh.edges, mesh.boundary_edge)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path: PathLike) -> Mesh:
    """Read a file written by :func:`write_mesh` and rebuild connectivity."""
    verts, tris = [], []
    n = L = None
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "#" and len(parts) > 1 and parts[1] == "mesh":
            meta = dict(kv.split("=") for kv in parts[2:])
            n, L = int(meta["n"]), float(meta["L"])
        elif parts[0] == "v":
            verts.append((float(parts[1]), float(parts[2])))
        elif parts[0] == "t":
            tris.append(tuple(int(p) for p in parts[1:4]))
    if n is None:
        raise ValueError(f"{path}: missing '# mesh' header")
    return _from_arrays(np.array(verts), np.array(tris), L, n)
