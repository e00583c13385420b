"""Functional panels and the least-squares system for one target region.

The integral ``int B_{l,q}(u, v_m) X(u) du`` is approximated with the
trapezoidal rule applied to the piecewise-linear interpolant of ``X`` on the
grid, restricted to the horizontal slice of triangle ``l`` at height ``v_m``.
It is linear in ``X`` so it is precomputed once as a kernel tensor ``K`` of
shape ``(M, L*Q, M)``; every design matrix and forecast is a contraction with it.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import pandas as pd
from scipy.linalg import block_diag

from .basis import BasisSpec, bernstein, roughness_matrix, smoothness_matrix, sqrt_psd


class DesignError(ValueError):
    pass


class InsufficientDataError(DesignError):
    pass


@dataclass
class FunctionalPanel:
    """Curves ``values[s, t, m]`` of ``S`` regions at ``n`` times on a common grid."""

    grid: np.ndarray
    values: np.ndarray
    regions: list = None
    times: list = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise DesignError(f"values must be S x n x M, got shape {self.values.shape}")
        S, n, M = self.values.shape
        if self.grid.shape != (M,):
            raise DesignError(f"grid length {self.grid.shape} does not match M={M}")
        if M < 2 or np.any(np.diff(self.grid) <= 0):
            raise DesignError("grid must be strictly increasing with at least 2 points")
        if not np.all(np.isfinite(self.values)):
            raise DesignError("panel contains missing or non-finite values")
        if self.regions is None:
            self.regions = [f"r{s}" for s in range(S)]
        if self.times is None:
            self.times = list(range(n))
        self.regions = [str(r) for r in self.regions]
        self.times = list(self.times)
        if len(self.regions) != S or len(self.times) != n:
            raise DesignError("label counts do not match values shape")

    @property
    def S(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def M(self) -> int:
        return self.values.shape[2]

    def subset_times(self, start: int, stop: int) -> "FunctionalPanel":
        return FunctionalPanel(
            self.grid, self.values[:, start:stop], list(self.regions), self.times[start:stop]
        )

    def with_values(self, values: np.ndarray) -> "FunctionalPanel":
        return FunctionalPanel(self.grid, values, list(self.regions), list(self.times))

    # ---- serialization -------------------------------------------------

    def to_frame(self) -> pd.DataFrame:
        S, n, M = self.values.shape
        return pd.DataFrame(
            {
                "region": np.repeat(self.regions, n * M),
                "time": np.tile(np.repeat(np.asarray(self.times, dtype=object), M), S),
                "grid_point": np.tile(self.grid, S * n),
                "value": self.values.ravel(),
            }
        )

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "FunctionalPanel":
        missing = {"region", "time", "grid_point", "value"} - set(df.columns)
        if missing:
            raise DesignError(f"panel table missing columns {sorted(missing)}")
        regions = list(dict.fromkeys(df["region"].astype(str)))
        times = sorted(df["time"].unique())
        grid = np.sort(df["grid_point"].astype(float).unique())
        S, n, M = len(regions), len(times), len(grid)
        if len(df) != S * n * M:
            raise DesignError(
                f"panel has {len(df)} rows, expected {S * n * M} for a complete S x n x M layout"
            )
        r_idx = {r: i for i, r in enumerate(regions)}
        t_idx = {t: i for i, t in enumerate(times)}
        g_idx = {g: i for i, g in enumerate(grid)}
        values = np.full((S, n, M), np.nan)
        values[
            df["region"].astype(str).map(r_idx).to_numpy(),
            df["time"].map(t_idx).to_numpy(),
            df["grid_point"].astype(float).map(g_idx).to_numpy(),
        ] = df["value"].astype(float).to_numpy()
        times = [t.item() if hasattr(t, "item") else t for t in times]
        return cls(grid, values, regions, times)

    @classmethod
    def from_csv(cls, path) -> "FunctionalPanel":
        return cls.from_frame(pd.read_csv(path))

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.tolist(),
            "times": self.times,
            "regions": {r: self.values[s].tolist() for s, r in enumerate(self.regions)},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FunctionalPanel":
        regions = list(data["regions"].keys())
        values = np.stack([np.asarray(data["regions"][r], dtype=float) for r in regions])
        return cls(data["grid"], values, regions, data.get("times"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


# ---------------------------------------------------------------------------
# standardization


@dataclass
class Standardization:
    means: np.ndarray
    scales: np.ndarray
    flagged: list = field(default_factory=list)

    def forward(self, values: np.ndarray) -> np.ndarray:
        return (values - self.means[:, None, :]) / self.scales[:, None, None]

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.scales[:, None, None] + self.means[:, None, :]

    def inverse_region(self, s: int, curves: np.ndarray) -> np.ndarray:
        return curves * self.scales[s] + self.means[s]

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "scales": self.scales.tolist(), "flagged": self.flagged}

    @classmethod
    def from_dict(cls, data: dict) -> "Standardization":
        return cls(np.asarray(data["means"]), np.asarray(data["scales"]), list(data.get("flagged", [])))

    @classmethod
    def identity(cls, S: int, M: int) -> "Standardization":
        return cls(np.zeros((S, M)), np.ones(S))


def standardize(panel: FunctionalPanel):
    """Center each region by its mean curve and scale by the RMS of the residual.

    Returns the standardized panel and the :class:`Standardization` that undoes it.
    Regions with no variation keep scale 1 and are listed in ``flagged``.
    """
    means = panel.values.mean(axis=1)
    centered = panel.values - means[:, None, :]
    scales = np.sqrt(np.mean(centered**2, axis=(1, 2)))
    flagged = [panel.regions[s] for s in np.flatnonzero(scales <= 1e-12)]
    if flagged:
        warnings.warn(f"zero-variance regions left unscaled: {flagged}", RuntimeWarning, stacklevel=2)
    scales = np.where(scales <= 1e-12, 1.0, scales)
    record = Standardization(means, scales, flagged)
    return panel.with_values(record.forward(panel.values)), record


# ---------------------------------------------------------------------------
# integration of basis functions against curves


def _slice(p: np.ndarray, v: float, tol: float = 1e-13):
    """u-interval where the horizontal line at height ``v`` meets triangle ``p``."""
    xs = []
    for i in range(3):
        (x1, y1), (x2, y2) = p[i], p[(i + 1) % 3]
        if abs(y2 - y1) <= tol:
            if abs(v - y1) <= tol:
                xs.extend((x1, x2))
            continue
        s = (v - y1) / (y2 - y1)
        if -tol <= s <= 1 + tol:
            xs.append(x1 + min(max(s, 0.0), 1.0) * (x2 - x1))
    if len(xs) < 2:
        return None
    a, b = min(xs), max(xs)
    if b - a <= tol:
        return None
    return a, b


QUADRATURE_RULES = ("trapezoid", "product")


def _node_weights(nodes: np.ndarray, spec: BasisSpec, aff: np.ndarray, v: float, rule: str):
    """Quadrature points on a slice and their weighted basis values.

    ``trapezoid`` uses the slice nodes themselves. ``product`` integrates the
    basis exactly against the linear interpolant of the curve, with
    Gauss-Legendre points inside every node interval.
    """
    if rule == "trapezoid":
        h = np.diff(nodes)
        tw = np.zeros(len(nodes))
        tw[:-1] += 0.5 * h
        tw[1:] += 0.5 * h
        pts = nodes
    else:
        x, w = np.polynomial.legendre.leggauss(spec.degree // 2 + 2)
        lo, h = nodes[:-1, None], np.diff(nodes)[:, None]
        pts = (lo + 0.5 * h * (x[None, :] + 1.0)).ravel()
        tw = (0.5 * h * w[None, :]).ravel()
    xyz = np.column_stack([np.ones(len(pts)), pts, np.full(len(pts), v)])
    return pts, bernstein(xyz @ aff.T, spec.degree) * tw[:, None]


def integration_kernel(spec: BasisSpec, grid: np.ndarray, response_grid: np.ndarray = None,
                       rule: str = "trapezoid") -> np.ndarray:
    """Tensor ``K[m, l*Q+q, k]`` with ``sum_k K[m, j, k] X[k] ~ int B_j(u, v_m) X(u) du``.

    The curve is taken as linear between grid points. ``rule="trapezoid"``
    applies the trapezoid rule on the grid points inside each triangle's
    u-slice plus the slice ends; ``rule="product"`` integrates the basis
    exactly against that linear interpolant.
    """
    if rule not in QUADRATURE_RULES:
        raise DesignError(f"unknown quadrature rule {rule!r}")
    grid = np.asarray(grid, dtype=float)
    vgrid = grid if response_grid is None else np.asarray(response_grid, dtype=float)
    tri = spec.tri
    M, Q = len(grid), spec.Q
    K = np.zeros((len(vgrid), spec.dim, M))
    aff = tri._affine_maps()
    for m, v in enumerate(vgrid):
        covered = []
        for l in range(spec.L):
            seg = _slice(tri.triangle_vertices(l), v)
            if seg is None:
                continue
            a, b = seg
            # on a horizontal edge two triangles share the slice; the lower index keeps it
            if any(min(b, d) - max(a, c) > 1e-13 for c, d in covered):
                continue
            covered.append(seg)
            inner = grid[(grid > a) & (grid < b)]
            nodes = np.concatenate([[a], inner, [b]])
            pts, vals = _node_weights(nodes, spec, aff[l], v, rule)
            # linear interpolation of X from the grid at the quadrature points
            k = np.clip(np.searchsorted(grid, pts, side="right") - 1, 0, M - 2)
            frac = (pts - grid[k]) / (grid[k + 1] - grid[k])
            interp = np.zeros((len(pts), M))
            rows = np.arange(len(pts))
            np.add.at(interp, (rows, k), 1.0 - frac)
            np.add.at(interp, (rows, k + 1), frac)
            K[m, l * Q:(l + 1) * Q, :] = vals.T @ interp
    return K


def integrate_basis_against_curve(spec: BasisSpec, grid, curve, m: int, kernel: np.ndarray = None,
                                  rule: str = "trapezoid") -> np.ndarray:
    """Integrals of all ``L*Q`` basis functions at response point ``grid[m]`` against ``curve``."""
    grid = np.asarray(grid, dtype=float)
    curve = np.asarray(curve, dtype=float)
    if curve.shape != grid.shape:
        raise DesignError(f"curve length {curve.shape} does not match grid {grid.shape}")
    if kernel is None:
        kernel = integration_kernel(spec, grid, grid[m:m + 1], rule)
        return kernel[0] @ curve
    return kernel[m] @ curve


# ---------------------------------------------------------------------------
# assembly


def check_predictors(panel: FunctionalPanel, predictors: FunctionalPanel) -> None:
    if predictors.n != panel.n or not np.array_equal(predictors.grid, panel.grid):
        raise DesignError("predictor panel must share the response panel's times and grid")


class Regressors:
    """Lagged predictor side of the system, shared by all target regions.

    Predictors are the lagged curves of ``predictors`` (default: ``panel``
    itself). Rows are ordered grid-point major, time minor, and scaled by
    ``1/sqrt(M)``.
    """

    def __init__(self, panel: FunctionalPanel, delta: int, spec: BasisSpec, kernel: np.ndarray = None,
                 predictors: FunctionalPanel = None, rule: str = "trapezoid"):
        if delta < 1 or panel.n <= delta:
            raise InsufficientDataError(f"need n > delta >= 1, got n={panel.n}, delta={delta}")
        if predictors is not None:
            check_predictors(panel, predictors)
        self.panel = panel
        self.predictors = panel if predictors is None else predictors
        self.delta = int(delta)
        self.spec = spec
        self.kernel = integration_kernel(spec, panel.grid, rule=rule) if kernel is None else kernel
        self.T = panel.n - delta

    @property
    def S(self) -> int:
        return self.predictors.S

    @cached_property
    def psi(self) -> np.ndarray:
        return lagged_design(self.kernel, self.predictors.values[:, : self.panel.n - self.delta])

    @cached_property
    def gram(self) -> np.ndarray:
        return self.psi.T @ self.psi

    def response(self, target: int) -> np.ndarray:
        return response_vector(self.panel.values[target, self.delta:])


def lagged_design(kernel: np.ndarray, lagged: np.ndarray) -> np.ndarray:
    """Design matrix for lagged curves ``lagged[g, t, k]``; shape (M*T, S*L*Q)."""
    M = kernel.shape[0]
    S, T, _ = lagged.shape
    psi = np.einsum("mjk,gtk->mtgj", kernel, lagged, optimize=True)
    return psi.reshape(M * T, S * kernel.shape[1]) / np.sqrt(M)


def response_vector(curves: np.ndarray) -> np.ndarray:
    """Stack target curves ``curves[t, m]`` grid-point major, scaled by ``1/sqrt(M)``."""
    M = curves.shape[1]
    return curves.T.ravel() / np.sqrt(M)


class Penalties:
    """Per-predictor constraint and roughness blocks (identical for every predictor)."""

    def __init__(self, spec: BasisSpec, order: int = 0):
        self.spec = spec
        self.order = int(order)
        self.H = smoothness_matrix(spec, order)
        self.R = roughness_matrix(spec)

    @cached_property
    def R_sqrt(self) -> np.ndarray:
        Q = self.spec.Q
        out = np.zeros_like(self.R)
        for l in range(self.spec.L):
            sl = slice(l * Q, (l + 1) * Q)
            out[sl, sl] = sqrt_psd(self.R[sl, sl])
        return out

    @cached_property
    def HtH(self) -> np.ndarray:
        return self.H.T @ self.H


@dataclass
class DesignSystem:
    """Penalized least-squares system for one target region."""

    regressors: Regressors
    target: int
    penalties: Penalties
    lambda2: float = 0.0
    constraint_weight: float = 1.0

    def __post_init__(self):
        if self.lambda2 < 0:
            raise DesignError("lambda2 must be nonnegative")

    @property
    def spec(self) -> BasisSpec:
        return self.regressors.spec

    @property
    def S(self) -> int:
        return self.regressors.S

    @property
    def block(self) -> int:
        return self.spec.dim

    @property
    def psi(self) -> np.ndarray:
        return self.regressors.psi

    @cached_property
    def y(self) -> np.ndarray:
        return self.regressors.response(self.target)

    @property
    def omega(self) -> float:
        return float(np.sqrt(self.lambda2))

    @property
    def H(self) -> np.ndarray:
        return block_diag(*[self.penalties.H] * self.S)

    @property
    def R(self) -> np.ndarray:
        return block_diag(*[self.penalties.R] * self.S)

    @property
    def psi_star(self) -> np.ndarray:
        h = block_diag(*[self.constraint_weight * self.penalties.H] * self.S)
        r = block_diag(*[self.omega * self.penalties.R_sqrt] * self.S)
        return np.vstack([self.psi, h, r])

    @property
    def y_star(self) -> np.ndarray:
        extra = self.S * (self.penalties.H.shape[0] + self.penalties.R.shape[0])
        return np.concatenate([self.y, np.zeros(extra)])

    @cached_property
    def penalty_block(self) -> np.ndarray:
        """``c^2 H'H + lambda2 R`` for one predictor (the augmented rows' Gram)."""
        return self.constraint_weight**2 * self.penalties.HtH + self.lambda2 * self.penalties.R

    @cached_property
    def psi_t_y(self) -> np.ndarray:
        return self.psi.T @ self.y

    @cached_property
    def yty(self) -> float:
        return float(self.y @ self.y)


def assemble(
    panel: FunctionalPanel,
    target: int,
    delta: int,
    spec: BasisSpec,
    lambda2: float = 0.0,
    order: int = 0,
    constraint_weight: float = 1.0,
    regressors: Regressors = None,
    penalties: Penalties = None,
    predictors: FunctionalPanel = None,
) -> DesignSystem:
    """Build the system for ``target``; pass ``regressors``/``penalties`` to share them across targets."""
    if regressors is None:
        regressors = Regressors(panel, delta, spec, predictors=predictors)
    if penalties is None:
        penalties = Penalties(spec, order)
    return DesignSystem(regressors, int(target), penalties, float(lambda2), float(constraint_weight))
