"""Forecast and estimation error metrics."""

from __future__ import annotations

import numpy as np


def trapezoid_weights(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    h = np.diff(grid)
    w = np.zeros(len(grid))
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def simpson_weights(grid) -> np.ndarray:
    """Composite Simpson weights on an equispaced grid with an odd number of points.

    Falls back to trapezoid weights for even lengths.
    """
    grid = np.asarray(grid, dtype=float)
    n = len(grid)
    if n < 3 or n % 2 == 0:
        return trapezoid_weights(grid)
    h = (grid[-1] - grid[0]) / (n - 1)
    w = np.full(n, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w * h / 3.0


def _check(actual, predicted, grid):
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if actual.shape != predicted.shape:
        raise ValueError(f"shape mismatch: {actual.shape} vs {predicted.shape}")
    if actual.shape[-1] != len(grid):
        raise ValueError(f"last axis ({actual.shape[-1]}) must match grid length {len(grid)}")
    return actual, predicted


def mafe(actual, predicted, grid) -> float:
    """Mean over test times and regions of  int |X - X_hat| dv.

    ``actual`` and ``predicted`` have shape ``(n', S, M)`` (or any leading
    shape); the integral uses trapezoid weights of ``grid``.
    """
    actual, predicted = _check(actual, predicted, grid)
    return float(np.mean(np.abs(actual - predicted) @ trapezoid_weights(grid)))


def msfe(actual, predicted, grid) -> float:
    """Mean over test times and regions of  int (X - X_hat)^2 dv."""
    actual, predicted = _check(actual, predicted, grid)
    return float(np.mean((actual - predicted) ** 2 @ trapezoid_weights(grid)))


def ise(true_surface, estimated, domain=(0.0, 1.0, 0.0, 1.0), resolution: int = 101) -> float:
    """Integrated squared difference of two surfaces on a tensor Simpson grid.

    Both arguments are callables ``f(u, v)`` accepting arrays (a
    :class:`~hdfts.basis.CoefficientSurface` qualifies).
    """
    u_lo, u_hi, v_lo, v_hi = domain
    us = np.linspace(u_lo, u_hi, resolution)
    vs = np.linspace(v_lo, v_hi, resolution)
    uu, vv = np.meshgrid(us, vs, indexing="ij")
    diff = (np.asarray(true_surface(uu, vv)) - np.asarray(estimated(uu, vv))) ** 2
    return float(simpson_weights(us) @ diff @ simpson_weights(vs))


def _rates(selected: np.ndarray, truth: np.ndarray):
    pos = truth.sum()
    neg = (~truth).sum()
    tpr = float((selected & truth).sum() / pos) if pos else float("nan")
    fpr = float((selected & ~truth).sum() / neg) if neg else float("nan")
    return tpr, fpr


def selection_scores(true_support: dict, fitted_support: dict, S: int, L: int) -> dict:
    """True/false positive rates for predictor (global) and triangle (local) selection.

    Both supports map predictor index -> collection of active triangle
    indices; predictors absent from the map are treated as inactive. Local rates
    are pooled over predictors that are truly nonzero. Undefined rates (no
    positives or no negatives) are NaN.
    """
    g_true = np.zeros(S, dtype=bool)
    g_sel = np.zeros(S, dtype=bool)
    g_true[list(true_support)] = True
    g_sel[list(fitted_support)] = True
    global_tpr, global_fpr = _rates(g_sel, g_true)

    loc_true, loc_sel = [], []
    for g in true_support:
        t = np.zeros(L, dtype=bool)
        t[list(true_support[g])] = True
        sel = np.zeros(L, dtype=bool)
        sel[list(fitted_support.get(g, []))] = True
        loc_true.append(t)
        loc_sel.append(sel)
    if loc_true:
        local_tpr, local_fpr = _rates(np.concatenate(loc_sel), np.concatenate(loc_true))
    else:
        local_tpr = local_fpr = float("nan")
    return {
        "global_tpr": global_tpr,
        "global_fpr": global_fpr,
        "local_tpr": local_tpr,
        "local_fpr": local_fpr,
    }
