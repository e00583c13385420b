"""Uniform triangulations of a rectangle and point queries on them."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """Base error for triangulation problems."""


class InvalidDomainError(MeshError):
    pass


class DegenerateTriangleError(MeshError):
    pass


class OutOfDomainError(MeshError):
    pass


@dataclass(frozen=True)
class Triangulation:
    """A triangulation of the rectangle ``[u_lo, u_hi] x [v_lo, v_hi]``.

    Attributes
    ----------
    domain : tuple of float
        ``(u_lo, u_hi, v_lo, v_hi)``.
    vertices : ndarray, shape (V, 2)
    triangles : ndarray of int, shape (L, 3)
        Vertex indices, counter-clockwise.
    edges : list of tuple
        Interior edges as ``(tri_a, tri_b, (vertex_i, vertex_j))`` with ``tri_a < tri_b``.
    rows, cols : int
        Grid dimensions used to build the mesh.
    """

    domain: tuple
    vertices: np.ndarray
    triangles: np.ndarray
    edges: list
    rows: int = 0
    cols: int = 0
    _affine: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def width(self) -> float:
        return self.domain[1] - self.domain[0]

    @property
    def height(self) -> float:
        return self.domain[3] - self.domain[2]

    def triangle_vertices(self, l: int) -> np.ndarray:
        return self.vertices[self.triangles[l]]

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def diameters(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        lengths = np.stack(
            [np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1) for i in range(3)], axis=1
        )
        return lengths.max(axis=1)

    def inradii(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        perim = sum(np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1) for i in range(3))
        return 2.0 * self.areas() / perim

    def shape_regularity(self) -> float:
        """Smallest in-radius to diameter ratio over all triangles."""
        return float(np.min(self.inradii() / self.diameters()))

    @property
    def mesh_size(self) -> float:
        return float(self.diameters().max())

    def barycentric_all(self, points: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of every point w.r.t. every triangle, shape (N, L, 3)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        aff = self._affine_maps()
        # aff[l] maps (1, u, v) -> (b1, b2, b3)
        ext = np.column_stack([np.ones(len(pts)), pts])
        return np.einsum("lij,nj->nli", aff, ext)

    def _affine_maps(self) -> np.ndarray:
        if self._affine is None:
            maps = np.empty((self.n_triangles, 3, 3))
            for l in range(self.n_triangles):
                p = self.triangle_vertices(l)
                mat = np.vstack([np.ones(3), p[:, 0], p[:, 1]])
                maps[l] = np.linalg.inv(mat)
            object.__setattr__(self, "_affine", maps)
        return self._affine

    def contains_point(self, point, atol: float = 1e-12) -> bool:
        u, v = point
        u_lo, u_hi, v_lo, v_hi = self.domain
        return (u_lo - atol <= u <= u_hi + atol) and (v_lo - atol <= v <= v_hi + atol)

    def locate(self, point) -> int:
        return locate(self, point)

    def locate_many(self, points: np.ndarray, atol: float = 1e-12) -> np.ndarray:
        """Vectorized :func:`locate`; same tie-break (lowest index)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        u_lo, u_hi, v_lo, v_hi = self.domain
        outside = (
            (pts[:, 0] < u_lo - atol)
            | (pts[:, 0] > u_hi + atol)
            | (pts[:, 1] < v_lo - atol)
            | (pts[:, 1] > v_hi + atol)
        )
        if np.any(outside):
            raise OutOfDomainError(f"point {pts[np.argmax(outside)]} outside domain {self.domain}")
        bary = self.barycentric_all(pts)
        inside = np.all(bary >= -_INSIDE_TOL, axis=2)
        found = inside.any(axis=1)
        idx = np.argmax(inside, axis=1)
        if not np.all(found):
            # clamped boundary points: fall back to the least-violating triangle
            worst = bary.min(axis=2)
            idx[~found] = np.argmax(worst[~found], axis=1)
        return idx

    def to_dict(self) -> dict:
        return {
            "domain": list(self.domain),
            "rows": self.rows,
            "cols": self.cols,
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "Triangulation":
        vertices = np.asarray(data["vertices"], dtype=float)
        triangles = np.asarray(data["triangles"], dtype=int)
        return cls(
            domain=tuple(float(x) for x in data["domain"]),
            vertices=vertices,
            triangles=triangles,
            edges=_interior_edges(triangles),
            rows=int(data.get("rows", 0)),
            cols=int(data.get("cols", 0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "Triangulation":
        return cls.from_dict(json.loads(text))


# points within this distance of an edge count as on it
_INSIDE_TOL = 1e-12


def _interior_edges(triangles: np.ndarray) -> list:
    owners: dict[tuple, list] = {}
    for l, tri in enumerate(triangles):
        for a, b in ((0, 1), (1, 2), (2, 0)):
            key = tuple(sorted((int(tri[a]), int(tri[b]))))
            owners.setdefault(key, []).append(l)
    edges = []
    for key, tris in owners.items():
        if len(tris) > 2:
            raise MeshError(f"edge {key} shared by {len(tris)} triangles")
        if len(tris) == 2:
            edges.append((min(tris), max(tris), key))
    edges.sort()
    return edges


def edge_counts(tri: Triangulation) -> dict:
    """Map every edge (sorted vertex pair) to the number of triangles using it."""
    counts: dict[tuple, int] = {}
    for t in tri.triangles:
        for a, b in ((0, 1), (1, 2), (2, 0)):
            key = tuple(sorted((int(t[a]), int(t[b]))))
            counts[key] = counts.get(key, 0) + 1
    return counts


def triangulate_rect(domain=(0.0, 1.0, 0.0, 1.0), rows: int = 3, cols: int = 3) -> Triangulation:
    """Split a rows x cols grid of cells along the lower-left/upper-right diagonal.

    Triangles are numbered cell by cell (row-major from the bottom), the
    upper-left triangle of each cell first. Consecutive cells along a row
    therefore share an edge between triangle ``2k+1`` and ``2k+2``.

    Examples
    --------
    >>> triangulate_rect((0, 1, 0, 1), 3, 3).n_triangles
    18
    """
    u_lo, u_hi, v_lo, v_hi = (float(x) for x in domain)
    if not (np.isfinite([u_lo, u_hi, v_lo, v_hi]).all() and u_hi > u_lo and v_hi > v_lo):
        raise InvalidDomainError(f"degenerate domain {domain}")
    if int(rows) < 1 or int(cols) < 1:
        raise InvalidDomainError(f"rows and cols must be positive, got {rows}x{cols}")
    rows, cols = int(rows), int(cols)
    us = np.linspace(u_lo, u_hi, cols + 1)
    vs = np.linspace(v_lo, v_hi, rows + 1)
    uu, vv = np.meshgrid(us, vs)
    vertices = np.column_stack([uu.ravel(), vv.ravel()])

    def vid(i, j):
        return i * (cols + 1) + j

    triangles = []
    for i in range(rows):
        for j in range(cols):
            v00, v10, v01, v11 = vid(i, j), vid(i, j + 1), vid(i + 1, j), vid(i + 1, j + 1)
            triangles.append((v00, v11, v01))
            triangles.append((v00, v10, v11))
    triangles = np.asarray(triangles, dtype=int)
    return Triangulation(
        domain=(u_lo, u_hi, v_lo, v_hi),
        vertices=vertices,
        triangles=triangles,
        edges=_interior_edges(triangles),
        rows=rows,
        cols=cols,
    )


def barycentric(triangle, point) -> tuple[float, float, float]:
    """Barycentric coordinates of ``point`` with respect to a vertex triple."""
    p = np.asarray(triangle, dtype=float)
    x, y = float(point[0]), float(point[1])
    (x1, y1), (x2, y2), (x3, y3) = p
    det = (x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1)
    scale = max(np.ptp(p[:, 0]), np.ptp(p[:, 1])) ** 2
    if scale == 0.0 or abs(det) <= 1e-14 * scale:
        raise DegenerateTriangleError(f"zero-area triangle {p.tolist()}")
    b2 = ((x - x1) * (y3 - y1) - (x3 - x1) * (y - y1)) / det
    b3 = ((x2 - x1) * (y - y1) - (x - x1) * (y2 - y1)) / det
    b1 = 1.0 - b2 - b3
    return b1, b2, b3


def locate(tri: Triangulation, point) -> int:
    """Index of the lowest-numbered triangle containing ``point``."""
    if not tri.contains_point(point):
        raise OutOfDomainError(f"point {tuple(point)} outside domain {tri.domain}")
    return int(tri.locate_many(np.asarray(point, dtype=float)[None, :])[0])
