"""Bernstein-Bezier polynomials on triangulations.

Coefficient vectors are laid out triangle-major: entry ``l * Q + q`` belongs to
basis function ``q`` of triangle ``l``, where basis functions within a triangle
follow :func:`multi_indices`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import factorial

import numpy as np

from .mesh import OutOfDomainError, Triangulation


class BasisError(ValueError):
    pass


class OutOfTriangleError(BasisError):
    pass


class UnsupportedSmoothnessError(BasisError):
    pass


def multi_indices(d: int) -> np.ndarray:
    """All ``(i, j, k)`` with ``i + j + k = d`` in descending lexicographic order."""
    out = [(i, j, d - i - j) for i in range(d, -1, -1) for j in range(d - i, -1, -1)]
    return np.asarray(out, dtype=int).reshape(-1, 3)


def n_basis(d: int) -> int:
    return (d + 1) * (d + 2) // 2


def _multinomials(idx: np.ndarray, d: int) -> np.ndarray:
    return np.array([factorial(d) / (factorial(i) * factorial(j) * factorial(k)) for i, j, k in idx])


def bernstein(bary: np.ndarray, d: int) -> np.ndarray:
    """Degree-``d`` Bernstein polynomials at barycentric coordinates ``bary[..., 3]``.

    Coordinates need not be nonnegative; outside the triangle this evaluates the
    polynomial extension, which is what the smoothness conditions rely on.
    """
    bary = np.asarray(bary, dtype=float)
    if d < 0:
        return np.zeros(bary.shape[:-1] + (0,))
    idx = multi_indices(d)
    coef = _multinomials(idx, d)
    powers = bary[..., None, :] ** idx
    return coef * np.prod(powers, axis=-1)


def _lower_selectors(d: int, order: int) -> dict:
    """Maps ``(k, m, ...)`` to a (Q_d, Q_{d-order}) 0/1 matrix picking alpha - e_k - e_m - ..."""
    hi = multi_indices(d)
    lo = {tuple(a): n for n, a in enumerate(multi_indices(d - order))}
    out = {}

    def rec(prefix):
        if len(prefix) == order:
            sel = np.zeros((len(hi), len(lo)))
            for p, a in enumerate(hi):
                b = a.copy()
                for k in prefix:
                    b[k] -= 1
                if np.all(b >= 0):
                    sel[p, lo[tuple(b)]] = 1.0
            out[tuple(prefix)] = sel
            return
        for k in range(3):
            rec(prefix + [k])

    rec([])
    return out


@dataclass(frozen=True)
class BasisSpec:
    """Degree-``degree`` Bernstein basis on every triangle of ``tri``."""

    tri: Triangulation
    degree: int = 3

    def __post_init__(self):
        if int(self.degree) < 1:
            raise BasisError(f"degree must be >= 1, got {self.degree}")

    @property
    def Q(self) -> int:
        return n_basis(self.degree)

    @property
    def L(self) -> int:
        return self.tri.n_triangles

    @property
    def dim(self) -> int:
        return self.L * self.Q

    @cached_property
    def indices(self) -> np.ndarray:
        return multi_indices(self.degree)

    @cached_property
    def collocation_inverse(self) -> np.ndarray:
        # identical for every triangle since domain points sit at fixed barycentrics
        pts = self.indices / self.degree
        return np.linalg.inv(bernstein(pts, self.degree))

    def domain_points(self, l: int) -> np.ndarray:
        """Points ``(i v1 + j v2 + k v3) / d`` of triangle ``l``, shape (Q, 2)."""
        return (self.indices / self.degree) @ self.tri.triangle_vertices(l)

    def bary_gradients(self, l: int) -> np.ndarray:
        """Rows d(b1,b2,b3)/du and d(b1,b2,b3)/dv for triangle ``l``."""
        aff = self.tri._affine_maps()[l]
        return np.vstack([aff[:, 1], aff[:, 2]])

    def second_derivatives(self, l: int, bary: np.ndarray) -> np.ndarray:
        """Second derivatives (uu, uv, vv) of triangle ``l``'s basis, shape (N, 3, Q)."""
        bary = np.atleast_2d(bary)
        d = self.degree
        out = np.zeros((len(bary), 3, self.Q))
        if d < 2:
            return out
        low = bernstein(bary, d - 2)
        sel = self._second_selectors
        du, dv = self.bary_gradients(l)
        for row, (a, b) in enumerate(((du, du), (du, dv), (dv, dv))):
            acc = np.zeros((len(bary), self.Q))
            for k in range(3):
                for m in range(3):
                    coef = a[k] * b[m]
                    if coef != 0.0:
                        acc += coef * (low @ sel[(k, m)].T)
            out[:, row, :] = d * (d - 1) * acc
        return out

    @cached_property
    def _second_selectors(self) -> dict:
        return _lower_selectors(self.degree, 2)

    def to_dict(self) -> dict:
        return {"degree": self.degree, "mesh": self.tri.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "BasisSpec":
        return cls(Triangulation.from_dict(data["mesh"]), int(data["degree"]))


def eval_basis(spec: BasisSpec, l: int, point, atol: float = 1e-12) -> np.ndarray:
    """Values of the Q basis functions of triangle ``l`` at ``point``."""
    bary = spec.tri.barycentric_all(np.asarray(point, dtype=float)[None, :])[0, l]
    if np.any(bary < -atol):
        raise OutOfTriangleError(f"point {tuple(point)} not in triangle {l}")
    return bernstein(bary, spec.degree)


@dataclass
class CoefficientSurface:
    """A piecewise polynomial surface given by Bernstein coefficients."""

    gamma: np.ndarray
    spec: BasisSpec

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        if self.gamma.shape != (self.spec.dim,):
            raise BasisError(f"gamma has shape {self.gamma.shape}, expected ({self.spec.dim},)")

    def block(self, l: int) -> np.ndarray:
        Q = self.spec.Q
        return self.gamma[l * Q:(l + 1) * Q]

    def __call__(self, u, v) -> np.ndarray:
        u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
        pts = np.column_stack([u.ravel(), v.ravel()])
        return self.evaluate(pts).reshape(u.shape)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tri = self.spec.tri
        ids = tri.locate_many(pts)
        aff = tri._affine_maps()[ids]
        bary = np.einsum("nij,nj->ni", aff, np.column_stack([np.ones(len(pts)), pts]))
        vals = bernstein(bary, self.spec.degree)
        coef = self.gamma.reshape(self.spec.L, self.spec.Q)[ids]
        return np.einsum("nq,nq->n", vals, coef)

    def grid(self, resolution: int = 51):
        """Values on a ``resolution x resolution`` tensor grid covering the domain."""
        u_lo, u_hi, v_lo, v_hi = self.spec.tri.domain
        us = np.linspace(u_lo, u_hi, resolution)
        vs = np.linspace(v_lo, v_hi, resolution)
        uu, vv = np.meshgrid(us, vs, indexing="ij")
        return uu, vv, self(uu, vv)

    def active_triangles(self) -> np.ndarray:
        blocks = self.gamma.reshape(self.spec.L, self.spec.Q)
        return np.flatnonzero(np.any(blocks != 0.0, axis=1))


def eval_surface(surface: CoefficientSurface, point) -> float:
    if not surface.spec.tri.contains_point(point):
        raise OutOfDomainError(f"point {tuple(point)} outside domain {surface.spec.tri.domain}")
    return float(surface.evaluate(np.asarray(point, dtype=float)[None, :])[0])


def interpolate(spec: BasisSpec, func) -> np.ndarray:
    """Coefficients matching ``func(u, v)`` at the domain points of each triangle.

    Reproduces every polynomial of total degree <= ``spec.degree`` exactly.
    """
    cinv = spec.collocation_inverse
    gamma = np.empty((spec.L, spec.Q))
    for l in range(spec.L):
        pts = spec.domain_points(l)
        gamma[l] = cinv @ np.asarray(func(pts[:, 0], pts[:, 1]), dtype=float)
    return gamma.ravel()


def _reexpress(spec: BasisSpec, src: int, dst: int) -> np.ndarray:
    """Matrix taking triangle ``src`` coefficients to the same polynomial in ``dst``'s basis."""
    pts = spec.domain_points(dst)
    bary = spec.tri.barycentric_all(pts)[:, src]
    return spec.collocation_inverse @ bernstein(bary, spec.degree)


def smoothness_matrix(spec: BasisSpec, order: int = 0, clean: float = 1e-12) -> np.ndarray:
    """Linear conditions for C^order continuity across every interior edge.

    For an edge shared by triangles ``a < b``, triangle ``b``'s polynomial is
    re-expressed in ``a``'s Bernstein basis; the piecewise polynomial is
    C^order across the edge iff the two coefficient sets agree on the layers
    within ``order`` of the edge. Each such layer coefficient gives one row.
    """
    d = spec.degree
    if order not in (0, 1):
        raise UnsupportedSmoothnessError(f"continuity order {order} not supported")
    if order > d - 1:
        raise UnsupportedSmoothnessError(f"C^{order} needs degree >= {order + 1}, got {d}")
    Q = spec.Q
    idx = spec.indices
    rows = []
    for a, b, (p, q) in spec.tri.edges:
        verts = list(spec.tri.triangles[a])
        opp = next(k for k in range(3) if verts[k] not in (p, q))
        trans = _reexpress(spec, b, a)
        trans[np.abs(trans) < clean] = 0.0
        for n in np.flatnonzero(idx[:, opp] <= order):
            row = np.zeros(spec.dim)
            row[a * Q + n] = 1.0
            row[b * Q:(b + 1) * Q] = -trans[n]
            rows.append(row)
    if not rows:
        return np.zeros((0, spec.dim))
    return np.vstack(rows)


def _triangle_rule(n: int):
    """Collapsed Gauss-Legendre rule on the reference triangle: barycentrics and weights summing to 1."""
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    s, t = np.meshgrid(x, x, indexing="ij")
    ws, wt = np.meshgrid(w, w, indexing="ij")
    s, t = s.ravel(), t.ravel()
    weights = (ws * wt).ravel() * s * 2.0
    bary = np.column_stack([1.0 - s, s * (1.0 - t), s * t])
    return bary, weights


def roughness_matrix(spec: BasisSpec) -> np.ndarray:
    """Gram matrix of the thin-plate-type energy  int (b_uu^2 + b_uv^2 + b_vv^2).

    Block diagonal over triangles; the quadrature is exact for the degree
    ``2(d - 2)`` integrand.
    """
    Q = spec.Q
    R = np.zeros((spec.dim, spec.dim))
    if spec.degree < 2:
        return R
    bary, weights = _triangle_rule(spec.degree + 1)
    areas = spec.tri.areas()
    for l in range(spec.L):
        dd = spec.second_derivatives(l, bary)
        block = np.einsum("n,nrp,nrq->pq", weights * areas[l], dd, dd)
        R[l * Q:(l + 1) * Q, l * Q:(l + 1) * Q] = 0.5 * (block + block.T)
    return R


def sqrt_psd(R: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Symmetric square root with eigenvalues below ``floor`` clamped to zero."""
    vals, vecs = np.linalg.eigh(0.5 * (R + R.T))
    vals = np.where(vals < floor, 0.0, vals)
    return (vecs * np.sqrt(vals)) @ vecs.T
