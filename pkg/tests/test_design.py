import warnings

import numpy as np
import pandas as pd
import pytest
from scipy.integrate import quad

from hdfts.basis import BasisSpec, CoefficientSurface, bernstein
from hdfts.design import (
    DesignError,
    FunctionalPanel,
    InsufficientDataError,
    Penalties,
    Regressors,
    assemble,
    integrate_basis_against_curve,
    integration_kernel,
    standardize,
)
from hdfts.mesh import triangulate_rect

from conftest import single_triangle


def slice_ends(verts, v):
    """u-range of the horizontal line at height v inside a triangle (None if at most a point)."""
    xs = []
    for i in range(3):
        (x1, y1), (x2, y2) = verts[i], verts[(i + 1) % 3]
        if y1 == y2:
            if y1 == v:
                xs += [x1, x2]
            continue
        t = (v - y1) / (y2 - y1)
        if 0 <= t <= 1:
            xs.append(x1 + t * (x2 - x1))
    if len(xs) < 2 or max(xs) - min(xs) < 1e-14:
        return None
    return min(xs), max(xs)


def fine_oracle(spec, v, func, n=None):
    """Adaptive quadrature of B_j(u, v) X(u) over each triangle's u-slice."""
    out = np.zeros(spec.dim)
    for l in range(spec.L):
        verts = spec.tri.triangle_vertices(l)
        ends = slice_ends(verts, v)
        if ends is None:
            continue
        for q in range(spec.Q):
            def f(u, l=l, q=q):
                b = spec.tri.barycentric_all(np.array([[u, v]]))[0, l]
                return bernstein(b, spec.degree)[q] * func(u)
            out[l * spec.Q + q] = quad(f, *ends, epsabs=1e-14, epsrel=1e-12)[0]
    return out


def test_zero_curve(spec33):
    grid = np.linspace(0, 1, 20)
    assert np.all(integrate_basis_against_curve(spec33, grid, np.zeros(20), 7) == 0)


def test_unit_curve_gives_slice_width(spec33):
    grid = np.linspace(0, 1, 50)
    K = integration_kernel(spec33, grid)
    sums = K.sum(axis=(1, 2))
    assert np.allclose(sums, 1.0, atol=1e-3)


def test_unit_curve_other_width():
    spec = BasisSpec(triangulate_rect((0, 2, 0, 2), 2, 2), 2)
    grid = np.linspace(0, 2, 50)
    vals = integrate_basis_against_curve(spec, grid, np.ones(50), 13)
    assert vals.sum() == pytest.approx(2.0, abs=1e-3)


def test_length_mismatch(spec33):
    with pytest.raises(DesignError):
        integrate_basis_against_curve(spec33, np.linspace(0, 1, 10), np.ones(9), 0)


@pytest.mark.parametrize("func", [
    lambda u: 1 + 0.5 * u - 0.3 * u**2,
    lambda u: 2 + np.exp(-u) * np.cos(2 * u),
    lambda u: 1.5 + 0.3 * np.sin(np.pi * u) - 0.2 * np.cos(3 * u + 0.4),
])
def test_product_rule_against_fine_grid(spec33, func):
    # smooth curves bounded away from zero so entries carry no cancellation
    grid = np.linspace(0, 1, 50)
    K = integration_kernel(spec33, grid, rule="product")
    x = func(grid)
    for m in range(0, 50, 7):
        coarse = K[m] @ x
        fine = fine_oracle(spec33, grid[m], func, 20001)
        nz = np.abs(fine) > 1e-9
        assert np.all(np.abs(coarse[~nz]) < 1e-9)
        assert np.max(np.abs(coarse[nz] - fine[nz]) / np.abs(fine[nz])) < 1e-3


def test_trapezoid_rule_second_order(spec33):
    func = lambda u: 1 + 0.5 * u - 0.3 * u**2
    errs = []
    for M in (50, 200):
        grid = np.linspace(0, 1, M)
        K = integration_kernel(spec33, grid, np.array([0.51]))
        fine = fine_oracle(spec33, 0.51, func, 20001)
        errs.append(np.abs(K[0] @ func(grid) - fine).max() / np.abs(fine).max())
    assert errs[0] < 2e-2
    assert errs[1] < errs[0] / 10


def test_unknown_rule(spec33):
    with pytest.raises(DesignError):
        integration_kernel(spec33, np.linspace(0, 1, 5), rule="simpson")


def test_piecewise_linear_exact_and_refinement(spec33):
    rng = np.random.default_rng(3)
    grid = np.linspace(0, 1, 13)
    x = rng.normal(size=13)
    exact = np.sum(0.5 * np.diff(grid) * (x[1:] + x[:-1]))
    for rule in ("trapezoid", "product"):
        K = integration_kernel(spec33, grid, rule=rule)
        assert np.allclose(K.sum(axis=1) @ x, exact, atol=1e-12)
    # first-order (or better) error decay on a smooth curve under 10x refinement
    func = lambda u: np.exp(u) * np.cos(3 * u)
    errs = []
    for M in (11, 101):
        g = np.linspace(0, 1, M)
        Km = integration_kernel(spec33, g, np.array([0.37]), rule="product")
        errs.append(np.abs(Km[0] @ func(g) - fine_oracle(spec33, 0.37, func, 20001)).max())
    assert errs[1] < errs[0] / 10


def test_horizontal_mesh_line_counted_once(spec33):
    grid = np.linspace(0, 1, 13)  # contains v = 1/3 and 2/3
    for rule in ("trapezoid", "product"):
        K = integration_kernel(spec33, grid, rule=rule)
        assert np.allclose(K.sum(axis=(1, 2)), 1.0, atol=1e-12)


def test_single_triangle_hand_computation():
    spec = BasisSpec(single_triangle(), 1)
    grid = np.linspace(0, 1, 4)
    X = np.array([[[1.0, 2.0, 0.5, -1.0], [0.0, 1.0, 3.0, 2.0], [2.0, -1.0, 1.0, 0.0]]])
    panel = FunctionalPanel(grid, X)
    system = assemble(panel, 0, 1, spec)
    assert system.psi.shape == (8, 3)
    h = 1 / 3
    expected = np.zeros((4, 2, 3))
    for m, v in enumerate(grid):
        nodes = [u for u in grid if u <= 1 - v + 1e-12]
        if len(nodes) < 2:
            continue
        for t in range(2):
            for k, u in enumerate(nodes):
                w = h / 2 if k in (0, len(nodes) - 1) else h
                b = np.array([1 - u - v, u, v])
                expected[m, t] += w * b * X[0, t, k]
    assert np.allclose(system.psi, expected.reshape(8, 3) / 2.0, atol=1e-14)
    y = np.array([X[0, 1, 0], X[0, 2, 0], X[0, 1, 1], X[0, 2, 1], X[0, 1, 2], X[0, 2, 2], X[0, 1, 3], X[0, 2, 3]])
    assert np.allclose(system.y, y / 2.0)


def test_lambda2_zero_and_augmentation(small_panel):
    spec = BasisSpec(triangulate_rect((0, 1, 0, 1), 2, 2), 3)
    sys0 = assemble(small_panel, 1, 1, spec, lambda2=0.0)
    pen = Penalties(spec)
    n_h, n_r = pen.H.shape[0] * 3, pen.R.shape[0] * 3
    rows = sys0.psi.shape[0]
    assert np.all(sys0.psi_star[rows + n_h:] == 0)
    assert np.all(sys0.y_star[rows:] == 0) and len(sys0.y_star) == rows + n_h + n_r
    sys1 = assemble(small_panel, 1, 1, spec, lambda2=0.3)
    ps = sys1.psi_star
    assert np.allclose(ps[:rows], sys1.psi)
    assert np.allclose(ps[rows:rows + n_h], sys1.H)
    tail = ps[rows + n_h:]
    assert np.allclose(tail.T @ tail, 0.3 * sys1.R, atol=1e-10)
    # Gram of the stacked system equals the penalized normal matrix
    G = ps.T @ ps
    assert np.allclose(G, sys1.psi.T @ sys1.psi + sys1.H.T @ sys1.H + 0.3 * sys1.R, atol=1e-10)


def test_row_counts(small_panel):
    spec = BasisSpec(triangulate_rect((0, 1, 0, 1), 1, 1), 1)
    n, M = small_panel.n, small_panel.M
    system = assemble(small_panel, 0, n - 1, spec)
    assert system.psi.shape[0] == M
    assert assemble(small_panel, 0, 2, spec).psi.shape == ((n - 2) * M, 3 * spec.dim)
    with pytest.raises(InsufficientDataError):
        assemble(small_panel, 0, n, spec)
    with pytest.raises(InsufficientDataError):
        assemble(small_panel, 0, 0, spec)


def test_column_blocks_additivity(small_panel, rng):
    spec = BasisSpec(triangulate_rect((0, 1, 0, 1), 2, 2), 2)
    system = assemble(small_panel, 0, 1, spec)
    P = spec.dim
    gamma = rng.normal(size=3 * P)
    full = system.psi @ gamma
    for g in range(3):
        dropped = gamma.copy()
        dropped[g * P:(g + 1) * P] = 0
        term = system.psi[:, g * P:(g + 1) * P] @ gamma[g * P:(g + 1) * P]
        assert np.allclose(system.psi @ dropped, full - term, atol=1e-12)


def test_column_block_matches_surface_integral(small_panel, rng):
    # Psi row (m, t) block g applied to gamma_g equals int beta_g(u, v_m) X_{t-1,g}(u) du
    spec = BasisSpec(triangulate_rect((0, 1, 0, 1), 2, 2), 2)
    system = assemble(small_panel, 0, 1, spec)
    P, M, T = spec.dim, small_panel.M, small_panel.n - 1
    gamma = rng.normal(size=P)
    K = integration_kernel(spec, small_panel.grid)
    m, t, g = 4, 6, 2
    direct = (K[m].T @ gamma) @ small_panel.values[g, t]
    assert system.psi[m * T + t, g * P:(g + 1) * P] @ gamma * np.sqrt(M) == pytest.approx(direct, rel=1e-12)


def test_penalized_gram_positive_definite(small_panel):
    spec = BasisSpec(triangulate_rect((0, 1, 0, 1), 2, 2), 3)
    system = assemble(small_panel, 0, 1, spec, lambda2=0.01)
    A = system.psi.T @ system.psi + system.lambda2 * system.R + system.H.T @ system.H
    assert np.linalg.eigvalsh(A).min() > 0


def test_standardize_round_trip(rng):
    panel = FunctionalPanel(np.linspace(0, 1, 9), rng.normal(3, 2, size=(4, 25, 9)))
    std, rec = standardize(panel)
    assert np.max(np.abs(rec.inverse(std.values) - panel.values)) < 1e-12
    assert np.allclose(std.values.mean(axis=1), 0, atol=1e-13)
    assert np.allclose(np.sqrt(np.mean(std.values**2, axis=(1, 2))), 1, atol=1e-13)
    again, rec2 = standardize(std)
    assert np.max(np.abs(again.values - std.values)) < 1e-12
    assert np.allclose(rec2.scales, 1, atol=1e-12)


def test_standardize_constant_region():
    vals = np.ones((2, 5, 4))
    vals[1] = np.arange(20).reshape(5, 4)
    panel = FunctionalPanel(np.linspace(0, 1, 4), vals)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        std, rec = standardize(panel)
    assert any("zero-variance" in str(w.message) for w in caught)
    assert rec.scales[0] == 1.0 and rec.flagged == [panel.regions[0]]
    assert np.all(std.values[0] == 0)


def test_panel_validation():
    grid = np.linspace(0, 1, 4)
    with pytest.raises(DesignError):
        FunctionalPanel(grid, np.ones((2, 3)))
    with pytest.raises(DesignError):
        FunctionalPanel(grid[::-1], np.ones((1, 3, 4)))
    bad = np.ones((1, 3, 4))
    bad[0, 1, 2] = np.nan
    with pytest.raises(DesignError):
        FunctionalPanel(grid, bad)


def test_panel_csv_json_round_trip(tmp_path, rng):
    panel = FunctionalPanel(np.sort(rng.uniform(size=7)), rng.normal(size=(3, 5, 7)), ["a", "b", "c"],
                            [2001, 2002, 2003, 2004, 2005])
    path = tmp_path / "p.csv"
    panel.to_csv(path)
    back = FunctionalPanel.from_csv(path)
    assert back.regions == panel.regions and back.times == panel.times
    assert np.max(np.abs(back.values - panel.values)) <= 1e-12
    assert np.max(np.abs(back.grid - panel.grid)) <= 1e-12
    js = FunctionalPanel.from_dict(panel.to_dict())
    assert np.array_equal(js.values, panel.values)


def test_incomplete_panel_table_rejected(rng):
    panel = FunctionalPanel(np.linspace(0, 1, 3), rng.normal(size=(2, 2, 3)))
    df = panel.to_frame().iloc[:-1]
    with pytest.raises(DesignError):
        FunctionalPanel.from_frame(df)
    with pytest.raises(DesignError):
        FunctionalPanel.from_frame(pd.DataFrame({"region": ["a"], "value": [1.0]}))


def test_exogenous_predictors(small_panel, rng):
    spec = BasisSpec(triangulate_rect((0, 1, 0, 1), 1, 1), 2)
    drivers = FunctionalPanel(small_panel.grid, rng.normal(size=(2, small_panel.n, small_panel.M)))
    reg = Regressors(small_panel, 1, spec, predictors=drivers)
    assert reg.S == 2 and reg.psi.shape[1] == 2 * spec.dim
    own = Regressors(drivers, 1, spec)
    assert np.allclose(reg.psi, own.psi)
    short = drivers.subset_times(0, 10)
    with pytest.raises(DesignError):
        Regressors(small_panel, 1, spec, predictors=short)
