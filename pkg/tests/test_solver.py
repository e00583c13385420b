import mpmath
import numpy as np
import pytest
from scipy.optimize import minimize, minimize_scalar

from hdfts import solver
from hdfts.basis import BasisSpec, interpolate
from hdfts.mesh import triangulate_rect
from hdfts.solver import (
    FitResult,
    InvalidConfigError,
    NumericError,
    PenaltyConfig,
    bridge_objective,
    group_weight,
    kkt_residual,
    ridge,
    tau,
    theta_update,
    weighted_lasso,
    weighted_lasso_gram,
)

from conftest import toy_problem


# ---- tau and theta -------------------------------------------------------


def test_tau_values():
    assert tau(0.0, 0.5) == 0.0
    assert tau(1.0, 0.5) == pytest.approx(0.25, abs=1e-15)
    mpmath.mp.dps = 50
    lam, nu = mpmath.mpf(2), mpmath.mpf("0.3")
    ref = (lam * nu**nu * (1 - nu) ** (1 - nu)) ** (1 / (1 - nu))
    assert tau(2.0, 0.3) == pytest.approx(float(ref), rel=1e-14)


@pytest.mark.parametrize("nu", [0.0, 1.0, -0.2, 1.5])
def test_tau_invalid_nu(nu):
    with pytest.raises(InvalidConfigError):
        tau(1.0, nu)
    with pytest.raises(InvalidConfigError):
        PenaltyConfig(lambda1=1.0, nu=nu)


def theta_objective(theta, c, nu, tau_, norm):
    return theta ** (1 - 1 / nu) * c ** (1 / nu) * norm + tau_ * theta


def test_theta_zero_norm():
    assert theta_update(0.0, 1.0, 0.5, 0.25) == 0.0


def test_theta_example_grid_search():
    th = theta_update(1.0, 1.0, 0.5, 0.25)
    assert th == pytest.approx(2.0, abs=1e-14)
    grid = np.linspace(1e-4, 100, 1_000_001)
    vals = theta_objective(grid, 1.0, 0.5, 0.25, 1.0)
    assert abs(grid[np.argmin(vals)] - th) < 1e-4


def test_theta_random_against_golden_section(rng):
    for _ in range(200):
        nu = rng.uniform(0.1, 0.9)
        c = rng.uniform(0.2, 5.0)
        tau_ = rng.uniform(0.05, 3.0)
        norm = rng.uniform(0.01, 10.0)
        th = theta_update(norm, c, nu, tau_)
        res = minimize_scalar(lambda t: theta_objective(t, c, nu, tau_, norm), bracket=(th / 3, th, th * 3),
                              method="golden", tol=1e-12)
        assert abs(res.x - th) <= 1e-6 * max(1.0, th)


def test_theta_profile_equals_bridge_term(rng):
    # minimizing over theta recovers lambda1 * c * norm^nu
    for _ in range(50):
        nu, c, lam, norm = rng.uniform(0.2, 0.8), rng.uniform(0.5, 3), rng.uniform(0.1, 2), rng.uniform(0.1, 5)
        tau_ = tau(lam, nu)
        th = theta_update(norm, c, nu, tau_)
        assert theta_objective(th, c, nu, tau_, norm) == pytest.approx(lam * c * norm**nu, rel=1e-12)


def test_theta_needs_positive_tau():
    with pytest.raises(InvalidConfigError):
        theta_update(1.0, 1.0, 0.5, 0.0)


def test_group_weight_infinite_at_zero():
    w = group_weight(np.array([0.0, 2.0]), 1.0, 0.5)
    assert np.isinf(w[0]) and w[1] == pytest.approx(0.5)


# ---- weighted lasso -------------------------------------------------------


def random_lasso(rng, n=40, p=12):
    X = rng.normal(size=(n, p))
    y = X[:, :3] @ rng.normal(size=3) + 0.3 * rng.normal(size=n)
    w = rng.uniform(0.5, 20.0, size=p)
    return X, y, w


def test_kkt_on_random_problems(rng):
    worst = 0.0
    for _ in range(50):
        X, y, w = random_lasso(rng, n=int(rng.integers(20, 60)), p=int(rng.integers(5, 25)))
        res = weighted_lasso(X, y, w, tol=1e-12, max_iter=10000)
        assert res.converged
        worst = max(worst, kkt_residual(X, y, w, res.coef))
    assert worst < 1e-6


def test_huge_weights_zero(rng):
    X, y, _ = random_lasso(rng)
    res = weighted_lasso(X, y, np.full(X.shape[1], 1e12))
    assert np.all(res.coef == 0)
    res = weighted_lasso(X, y, np.full(X.shape[1], np.inf))
    assert np.all(res.coef == 0)


def test_zero_weight_matches_ridge(small_panel):
    from hdfts.design import assemble

    spec = BasisSpec(triangulate_rect((0, 1, 0, 1), 2, 2), 3)
    system = assemble(small_panel, 0, 1, spec, lambda2=0.05)
    Xs, ys = system.psi_star, system.y_star
    res = weighted_lasso(Xs, ys, np.zeros(Xs.shape[1]), tol=1e-14, max_iter=100000)
    psi = system.psi
    direct = np.linalg.solve(psi.T @ psi + system.H.T @ system.H + 0.05 * system.R, psi.T @ system.y)
    assert np.max(np.abs(res.coef - direct)) < 1e-8 * max(1.0, np.abs(direct).max())
    assert np.max(np.abs(ridge(system) - direct)) < 1e-8 * max(1.0, np.abs(direct).max())


def test_orthonormal_soft_threshold(rng):
    Q, _ = np.linalg.qr(rng.normal(size=(30, 5)))
    y = rng.normal(size=30) * 2
    w = np.array([0.1, 0.5, 1.0, 3.0, 8.0])
    res = weighted_lasso(Q, y, w, tol=1e-14)
    z = Q.T @ y
    expected = np.sign(z) * np.maximum(np.abs(z) - w / 2, 0.0)
    assert np.max(np.abs(res.coef - expected)) < 1e-10


def test_nonfinite_rejected(rng):
    X, y, w = random_lasso(rng)
    X[0, 0] = np.nan
    with pytest.raises(NumericError):
        weighted_lasso(X, y, w)


def test_nonconvergence_flagged(rng):
    X, y, w = random_lasso(rng)
    X[:, 1] = X[:, 0] + 1e-3 * X[:, 1]
    res = weighted_lasso_gram(X.T @ X, X.T @ y, w * 0.01, tol=1e-16, max_iter=1)
    assert not res.converged and res.n_iter == 1


def test_warm_start_same_solution(rng):
    X, y, w = random_lasso(rng)
    cold = weighted_lasso(X, y, w, tol=1e-13)
    warm = weighted_lasso(X, y, w, start=cold.coef + 0.1, tol=1e-13)
    assert np.allclose(cold.coef, warm.coef, atol=1e-9)


# ---- backfitting ----------------------------------------------------------


def toy_spec(rows=1, cols=1, d=1):
    return BasisSpec(triangulate_rect((0, 1, 0, 1), rows, cols), d)


def partially_sparse_gamma(spec, S, active, rng=None):
    """Surfaces for ``active`` predictors, zero on every third triangle."""
    gamma = np.zeros((S, spec.dim))
    for k, g in enumerate(active):
        gamma[g] = interpolate(spec, lambda u, v, k=k: 1.0 + 0.5 * u - 0.8 * v + 0.3 * k)
        for l in range(0, spec.L, 3):
            gamma[g, l * spec.Q:(l + 1) * spec.Q] = 0.0
    return gamma


def test_unpenalized_least_squares(rng):
    spec = toy_spec(2, 2, 2)
    gamma = rng.normal(size=(2, spec.dim))
    system, _, _ = toy_problem(1, 80, gamma, spec)
    res = solver.fit(system, PenaltyConfig(0.0, 0.0))
    ls = np.linalg.lstsq(system.psi_star, system.y_star, rcond=None)[0]
    assert np.max(np.abs(res.gamma - ls)) < 1e-8 * max(1.0, np.abs(ls).max())
    assert not res.refit_done


def test_mode_none_ignores_lambda1(rng):
    spec = toy_spec(2, 2, 2)
    system, _, _ = toy_problem(2, 60, rng.normal(size=(2, spec.dim)), spec, lambda2=0.1)
    a = solver.fit(system, PenaltyConfig(0.5, 0.1, mode="none"))
    b = solver.fit(system, PenaltyConfig(0.0, 0.1, mode="global_local"))
    assert np.allclose(a.gamma, b.gamma, atol=1e-14)


def test_system_config_mismatch(rng):
    spec = toy_spec()
    system, _, _ = toy_problem(3, 30, rng.normal(size=(2, spec.dim)), spec, lambda2=0.1)
    with pytest.raises(InvalidConfigError):
        solver.fit(system, PenaltyConfig(0.1, 0.2))


@pytest.fixture(scope="module")
def sparse_fit_case():
    spec = BasisSpec(triangulate_rect((0, 1, 0, 1), 3, 3), 3)
    gamma = partially_sparse_gamma(spec, 4, [0, 2])
    system, targets, drivers = toy_problem(7, 120, gamma, spec, M=20, noise=0.2, lambda2=1e-3)
    return spec, gamma, system


@pytest.mark.parametrize("mode", ["global", "global_local"])
def test_monotone_descent_and_active_sets(sparse_fit_case, mode):
    spec, gamma, system = sparse_fit_case
    res = solver.fit(system, PenaltyConfig(0.01, 1e-3, mode=mode), seed=3)
    up = np.asarray(res.update_trace)
    assert len(up) > 0 and np.all(np.diff(up) <= 1e-10)
    tr = np.asarray(res.objective_trace)
    assert np.all(np.diff(tr) <= 1e-10)
    blocks = res.gamma.reshape(4, spec.L, spec.Q)
    for g in range(4):
        if g not in res.active_predictors:
            assert np.all(res.gamma[g * spec.dim:(g + 1) * spec.dim] == 0)
        else:
            for l in range(spec.L):
                if l not in res.active_triangles[g]:
                    assert np.all(blocks[g, l] == 0)
    assert res.active_predictors == [0, 2]


def test_objective_trace_matches_python_objective(sparse_fit_case):
    spec, gamma, system = sparse_fit_case
    cfg = PenaltyConfig(0.01, 1e-3)
    res = solver.fit(system, cfg, seed=1, refit=False)
    prob = solver._Problem(system, cfg)
    assert res.objective_trace[-1] == pytest.approx(prob.objective(res.gamma_penalized, res.theta), rel=1e-9)


def test_theta_gamma_consistency(sparse_fit_case):
    spec, gamma, system = sparse_fit_case
    cfg = PenaltyConfig(0.01, 1e-3)
    res = solver.fit(system, cfg, seed=5, outer_tol=1e-12, max_sweeps=500, inner_tol=1e-12, refit=False)
    assert res.converged
    prob = solver._Problem(system, cfg)
    S, P = 4, spec.dim
    for g in range(S):
        th = prob.thetas(res.gamma_penalized[g * P:(g + 1) * P])
        assert np.allclose(th, res.theta[g], atol=1e-8, rtol=0)


def test_zero_freezing(sparse_fit_case):
    spec, gamma, system = sparse_fit_case
    cfg = PenaltyConfig(0.02, 1e-3)
    prev = None
    for k in range(1, 7):
        res = solver.fit(system, cfg, seed=11, max_sweeps=k, outer_tol=0.0, refit=False)
        zero = res.gamma_penalized == 0.0
        if prev is not None:
            assert np.all(zero[prev])
        prev = zero


def test_seed_reproducible(sparse_fit_case):
    _, _, system = sparse_fit_case
    cfg = PenaltyConfig(0.01, 1e-3)
    a = solver.fit(system, cfg, seed=9)
    b = solver.fit(system, cfg, seed=9)
    assert np.array_equal(a.gamma, b.gamma) and a.update_trace == b.update_trace


def test_refit_is_ridge_on_support(sparse_fit_case):
    spec, _, system = sparse_fit_case
    res = solver.fit(system, PenaltyConfig(0.01, 1e-3), seed=2)
    cols = np.flatnonzero(res.gamma != 0)
    psi = system.psi[:, cols]
    A = (psi.T @ psi + system.H.T[cols] @ system.H[:, cols] + 1e-3 * system.R[np.ix_(cols, cols)])
    direct = np.linalg.solve(A, psi.T @ system.y)
    assert np.allclose(res.gamma[cols], direct, rtol=1e-8, atol=1e-10)
    assert res.refit_done
    assert res.constraint_residual.shape == (4,)


def test_global_local_zeros_more_triangles(sparse_fit_case):
    spec, _, system = sparse_fit_case
    fits = {m: solver.fit(system, PenaltyConfig(0.1, 1e-3, mode=m), seed=4) for m in ("global", "global_local")}
    zeros = {m: int(np.sum(np.all(r.gamma.reshape(4, spec.L, spec.Q) == 0, axis=2))) for m, r in fits.items()}
    assert zeros["global_local"] > zeros["global"]
    mse = {m: float(np.mean((system.y - system.psi @ r.gamma) ** 2)) for m, r in fits.items()}
    assert mse["global_local"] < 1.05 * mse["global"]


def test_fit_result_json_round_trip(sparse_fit_case):
    import json

    _, _, system = sparse_fit_case
    res = solver.fit(system, PenaltyConfig(0.01, 1e-3), seed=6)
    back = FitResult.from_dict(json.loads(json.dumps(res.to_dict())))
    assert np.array_equal(back.gamma, res.gamma)
    assert back.active_triangles == res.active_triangles
    assert back.objective_trace == res.objective_trace and back.seed == 6


def test_single_true_predictor_selected():
    """One nonzero surface among three predictors: exact global recovery in >= 95 of 100 runs."""
    spec = toy_spec(2, 2, 2)
    gamma = np.zeros((3, spec.dim))
    gamma[1] = interpolate(spec, lambda u, v: 1.0 + u - v)
    hits = 0
    for seed in range(100):
        system, _, _ = toy_problem(1000 + seed, 200, gamma, spec, M=12, noise=0.3, lambda2=1e-3)
        res = solver.fit(system, PenaltyConfig(0.1, 1e-3, mode="global"), seed=seed)
        hits += res.active_predictors == [1]
    assert hits >= 95


def test_estimation_error_decreases_with_n():
    spec = toy_spec(2, 2, 2)
    gamma = partially_sparse_gamma(spec, 3, [0])
    cfg = PenaltyConfig(0.005, 1e-4)
    medians = []
    for n in (50, 100, 200, 500):
        errs = []
        for seed in range(9):
            system, _, _ = toy_problem(500 * seed + n, n, gamma, spec, M=12, noise=0.5, lambda2=1e-4)
            res = solver.fit(system, cfg, seed=seed)
            errs.append(np.linalg.norm(res.gamma - gamma.ravel()))
        medians.append(np.median(errs))
    assert all(b < a for a, b in zip(medians, medians[1:])), medians


def test_toy_oracle_equivalence():
    """2 predictors, L=2, d=1: the solver's bridge objective is within 1e-4 of direct minimization."""
    spec = toy_spec(1, 1, 1)
    rng = np.random.default_rng(0)
    gamma = np.zeros((2, spec.dim))
    gamma[0] = interpolate(spec, lambda u, v: 1.0 + u - v)
    gamma[0, spec.Q:] = 0.0  # zero on the second triangle
    system, _, _ = toy_problem(21, 60, gamma, spec, M=10, noise=0.2, lambda2=0.0, constraint_weight=0.0)
    for mode in ("global", "global_local"):
        cfg = PenaltyConfig(0.02, 0.0, mode=mode, constraint_weight=0.0)
        res = solver.fit(system, cfg, seed=0, inner_tol=1e-12, outer_tol=1e-12, max_sweeps=500, refit=False)
        f_solver = bridge_objective(system, cfg, res.gamma_penalized)
        f = lambda x: bridge_objective(system, cfg, x)
        starts = [res.gamma_penalized, ridge(system), np.zeros(2 * spec.dim)]
        starts += [rng.normal(size=2 * spec.dim) for _ in range(5)]
        best = np.inf
        for x0 in starts:
            out = minimize(f, x0, method="Powell", options={"xtol": 1e-10, "ftol": 1e-13, "maxfev": 200000})
            out = minimize(f, out.x, method="Nelder-Mead",
                           options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 200000, "maxfev": 200000})
            best = min(best, out.fun)
        assert f_solver <= best + 1e-4, (mode, f_solver, best)
