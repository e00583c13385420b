"""Group bridge estimation of the coefficient surfaces for one target region.

The non-convex penalty ``lambda1 * sum_j c_j ||gamma_j||_1^nu`` is handled
through its variational form: with auxiliary ``theta_j >= 0``,

    c_j^(1/nu) theta_j^(1 - 1/nu) ||gamma_j||_1 + tau * theta_j,
    tau = (lambda1 nu^nu (1 - nu)^(1 - nu))^(1 / (1 - nu)),

minimized over ``theta_j`` gives back ``lambda1 c_j ||gamma_j||_1^nu``. For fixed
``theta`` the problem in ``gamma`` is a weighted lasso, solved here by cyclic
coordinate descent on the Gram matrix, one predictor block at a time
(backfitting). Groups are the triangles of each surface plus the whole surface.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, lstsq

from .basis import CoefficientSurface
from .design import DesignSystem

logger = logging.getLogger(__name__)

MODES = ("none", "global", "global_local")
ZERO_NORM = 1e-10
MAX_WEIGHT = 1e12


class SolverError(RuntimeError):
    pass


class InvalidConfigError(ValueError):
    pass


class NumericError(SolverError):
    pass


class DivergenceError(SolverError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def tau(lambda1: float, nu: float) -> float:
    if not 0.0 < nu < 1.0:
        raise InvalidConfigError(f"nu must lie in (0, 1), got {nu}")
    if lambda1 < 0:
        raise InvalidConfigError(f"lambda1 must be nonnegative, got {lambda1}")
    return (lambda1 * nu**nu * (1.0 - nu) ** (1.0 - nu)) ** (1.0 / (1.0 - nu))


def theta_update(l1norm, c, nu: float, tau_: float):
    """Minimizer over ``theta >= 0`` of ``theta^(1-1/nu) c^(1/nu) l1norm + tau theta``.

    Vectorized over ``l1norm`` and ``c``; groups with ``l1norm`` below
    ``ZERO_NORM`` get ``theta = 0``.
    """
    if tau_ <= 0.0:
        raise InvalidConfigError("theta update needs tau > 0 (lambda1 > 0)")
    l1norm = np.asarray(l1norm, dtype=float)
    theta = np.asarray(c, dtype=float) * np.abs(l1norm) ** nu * ((1.0 - nu) / (tau_ * nu)) ** nu
    theta = np.where(l1norm < ZERO_NORM, 0.0, theta)
    return theta if theta.ndim else float(theta)


def group_weight(theta, c, nu: float):
    """``theta^(1-1/nu) c^(1/nu)``; infinite where ``theta == 0``."""
    theta = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore"):
        w = np.where(theta > 0, np.power(np.where(theta > 0, theta, 1.0), 1.0 - 1.0 / nu), np.inf)
    return w * np.asarray(c, dtype=float) ** (1.0 / nu)


@dataclass
class PenaltyConfig:
    """Penalty settings. ``local_weight``/``global_weight`` default to sqrt of group sizes."""

    lambda1: float = 0.0
    lambda2: float = 0.0
    nu: float = 0.5
    mode: str = "global_local"
    local_weight: float = None
    global_weight: float = None
    constraint_weight: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise InvalidConfigError("penalty parameters must be nonnegative")
        if not 0.0 < self.nu < 1.0:
            raise InvalidConfigError(f"nu must lie in (0, 1), got {self.nu}")
        for w in (self.local_weight, self.global_weight):
            if w is not None and w <= 0:
                raise InvalidConfigError("group weights must be positive")

    @property
    def tau(self) -> float:
        return tau(self.effective_lambda1, self.nu)

    @property
    def effective_lambda1(self) -> float:
        return 0.0 if self.mode == "none" else float(self.lambda1)

    def weights(self, L: int, Q: int):
        c_local = np.sqrt(Q) if self.local_weight is None else self.local_weight
        c_global = np.sqrt(L * Q) if self.global_weight is None else self.global_weight
        return float(c_local), float(c_global)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# weighted lasso


@numba.njit(cache=True)
def _cd_pass(A, grad, w, x, free):
    """One cyclic soft-threshold pass; returns (max |change|, max |x|)."""
    p = x.shape[0]
    max_delta = 0.0
    max_abs = 0.0
    for j in range(p):
        if not free[j]:
            continue
        ajj = A[j, j]
        old = x[j]
        z = grad[j] + ajj * old
        half = 0.5 * w[j]
        if ajj <= 0.0:
            new = 0.0
        elif z > half:
            new = (z - half) / ajj
        elif z < -half:
            new = (z + half) / ajj
        else:
            new = 0.0
        delta = new - old
        if delta != 0.0:
            # A is symmetric; row access is contiguous
            for k in range(p):
                grad[k] -= delta * A[j, k]
            x[j] = new
            if abs(delta) > max_delta:
                max_delta = abs(delta)
        if abs(new) > max_abs:
            max_abs = abs(new)
    return max_delta, max_abs


@numba.njit(cache=True)
def _lasso_value(A, rhs, w, x):
    val = 0.0
    for i in range(x.shape[0]):
        if x[i] != 0.0:
            s = 0.0
            for j in range(x.shape[0]):
                s += A[i, j] * x[j]
            val += x[i] * (s - 2.0 * rhs[i]) + w[i] * abs(x[i])
    return val


@numba.njit(cache=True)
def _tri_solve(C, k, r):
    """Solve ``C C' z = r`` with ``C`` lower triangular (leading k x k block)."""
    z = r.copy()
    for i in range(k):
        s = z[i]
        for j in range(i):
            s -= C[i, j] * z[j]
        z[i] = s / C[i, i]
    for i in range(k - 1, -1, -1):
        s = z[i]
        for j in range(i + 1, k):
            s -= C[j, i] * z[j]
        z[i] = s / C[i, i]
    return z


@numba.njit(cache=True)
def _face_solve(A, Ainv, idx, zidx, r):
    """Solve ``A[idx, idx] z = r``.

    With a usable inverse of the full matrix and few excluded coordinates the
    Schur complement identity ``inv(A_SS) = B_SS - B_SZ inv(B_ZZ) B_ZS``
    (``B = inv(A)``) is cheaper than factorizing the submatrix.
    Returns an empty array if the system is not positive definite.
    """
    k = idx.size
    m = zidx.size
    if Ainv.shape[0] > 0 and m * 3 < k:
        # u = B_ZS r
        u = np.zeros(m)
        for a in range(m):
            row = Ainv[zidx[a]]
            s = 0.0
            for c in range(k):
                s += row[idx[c]] * r[c]
            u[a] = s
        if m > 0:
            Bzz = np.empty((m, m))
            for a in range(m):
                for c in range(m):
                    Bzz[a, c] = Ainv[zidx[a], zidx[c]]
            try:
                C = np.linalg.cholesky(Bzz)
            except Exception:
                return np.empty(0)
            v = _tri_solve(C, m, u)
        else:
            v = u
        z = np.empty(k)
        for a in range(k):
            row = Ainv[idx[a]]
            s = 0.0
            for c in range(k):
                s += row[idx[c]] * r[c]
            for c in range(m):
                s -= row[zidx[c]] * v[c]
            z[a] = s
        return z
    Aa = np.empty((k, k))
    for a in range(k):
        for c in range(k):
            Aa[a, c] = A[idx[a], idx[c]]
    try:
        C = np.linalg.cholesky(Aa)
    except Exception:
        return np.empty(0)
    return _tri_solve(C, k, r)


@numba.njit(cache=True)
def _face_step(A, rhs, w, x, grad, Ainv):
    """Projected Newton step on the current support and sign pattern.

    The minimizer of the quadratic restricted to the sign face is computed
    exactly; coordinates that would flip sign are set to zero. Step halving
    keeps the lasso objective from increasing. Returns True if ``x`` moved.
    """
    support = x != 0.0
    idx = np.flatnonzero(support)
    k = idx.size
    if k == 0:
        return False
    zidx = np.flatnonzero(~support)
    ra = np.empty(k)
    for a in range(k):
        ia = idx[a]
        ra[a] = rhs[ia] - 0.5 * w[ia] * np.sign(x[ia])
    z = _face_solve(A, Ainv, idx, zidx, ra)
    if z.size == 0 or not np.all(np.isfinite(z)):
        return False
    flips = False
    for a in range(k):
        if z[a] * x[idx[a]] <= 0.0:
            flips = True
            break
    if not flips:
        # exact minimizer on the face: cannot increase the objective
        for a in range(k):
            x[idx[a]] = z[a]
        grad[:] = rhs - A @ x
        return True
    base = _lasso_value(A, rhs, w, x)
    cand = x.copy()
    t = 1.0
    for _ in range(30):
        for a in range(k):
            ia = idx[a]
            new = x[ia] + t * (z[a] - x[ia])
            cand[ia] = new if new * x[ia] > 0.0 else 0.0
        if _lasso_value(A, rhs, w, cand) <= base:
            x[:] = cand
            grad[:] = rhs - A @ x
            return True
        t *= 0.5
    return False


@numba.njit(cache=True)
def _cd_gram(A, rhs, w, x, free, tol, max_iter, Ainv):
    """Minimize x'Ax - 2 rhs'x + sum w|x| over the free coordinates, in place.

    Cyclic coordinate descent; after every pass that has not converged a face
    step (exact solve on the current support and signs) is tried, which settles
    ill-conditioned blocks that plain coordinate descent crawls on. ``Ainv`` is
    the inverse of ``A`` or an empty (0, 0) array.
    """
    grad = rhs - A @ x
    for it in range(max_iter):
        max_delta, max_abs = _cd_pass(A, grad, w, x, free)
        if max_delta < tol * (1.0 + max_abs):
            return it + 1, True
        _face_step(A, rhs, w, x, grad, Ainv)
    return max_iter, False


@dataclass
class LassoResult:
    coef: np.ndarray
    n_iter: int
    converged: bool


def weighted_lasso_gram(A, rhs, weights, start=None, tol=1e-6, max_iter=1000, free=None) -> LassoResult:
    A = np.ascontiguousarray(A, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    p = len(rhs)
    w = np.minimum(np.asarray(weights, dtype=float), MAX_WEIGHT)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(rhs))) or np.any(np.isnan(w)):
        raise NumericError("non-finite entries in weighted lasso problem")
    if np.any(w < 0):
        raise InvalidConfigError("weights must be nonnegative")
    x = np.zeros(p) if start is None else np.array(start, dtype=float)
    free = np.ones(p, dtype=np.bool_) if free is None else np.asarray(free, dtype=np.bool_)
    x[~free] = 0.0
    n_iter, ok = _cd_gram(A, rhs, w, x, free, float(tol), int(max_iter),
                          np.empty((0, 0)))
    return LassoResult(x, n_iter, ok)


def weighted_lasso(X, y, weights, start=None, tol=1e-6, max_iter=1000) -> LassoResult:
    """Minimize ``||y - X b||^2 + sum_j weights_j |b_j|`` by cyclic coordinate descent.

    Stops when the largest coefficient change in a pass is below
    ``tol * (1 + max|b|)``; ``converged`` is False if ``max_iter`` passes ran out.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NumericError("non-finite entries in design or response")
    return weighted_lasso_gram(X.T @ X, X.T @ y, weights, start, tol, max_iter)


def kkt_residual(X, y, weights, coef) -> float:
    """Largest violation of the subgradient optimality conditions of :func:`weighted_lasso`."""
    grad = -2.0 * np.asarray(X).T @ (np.asarray(y) - np.asarray(X) @ coef)
    w = np.asarray(weights, dtype=float)
    nz = coef != 0
    viol = np.where(nz, np.abs(grad + w * np.sign(coef)), np.maximum(np.abs(grad) - w, 0.0))
    return float(viol.max()) if viol.size else 0.0


# ---------------------------------------------------------------------------
# fit


@dataclass
class FitResult:
    target: int
    gamma: np.ndarray
    gamma_penalized: np.ndarray
    theta: np.ndarray
    active_predictors: list
    active_triangles: dict
    objective_trace: list
    update_trace: list
    constraint_residual: np.ndarray
    refit_done: bool
    converged: bool
    n_sweeps: int
    config: dict = field(default_factory=dict)
    seed: int = 0
    inner_passes: int = 0
    inner_failures: int = 0

    def surfaces(self, spec) -> list:
        P = spec.dim
        S = len(self.gamma) // P
        return [CoefficientSurface(self.gamma[g * P:(g + 1) * P], spec) for g in range(S)]

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "gamma": self.gamma.tolist(),
            "gamma_penalized": self.gamma_penalized.tolist(),
            "theta": self.theta.tolist(),
            "active_predictors": [int(g) for g in self.active_predictors],
            "active_triangles": {str(g): [int(l) for l in ls] for g, ls in self.active_triangles.items()},
            "objective_trace": [float(v) for v in self.objective_trace],
            "update_trace": [float(v) for v in self.update_trace],
            "constraint_residual": self.constraint_residual.tolist(),
            "refit_done": self.refit_done,
            "converged": self.converged,
            "n_sweeps": self.n_sweeps,
            "config": self.config,
            "seed": self.seed,
            "inner_passes": self.inner_passes,
            "inner_failures": self.inner_failures,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        return cls(
            target=int(d["target"]),
            gamma=np.asarray(d["gamma"], dtype=float),
            gamma_penalized=np.asarray(d["gamma_penalized"], dtype=float),
            theta=np.asarray(d["theta"], dtype=float),
            active_predictors=[int(g) for g in d["active_predictors"]],
            active_triangles={int(g): list(ls) for g, ls in d["active_triangles"].items()},
            objective_trace=list(d["objective_trace"]),
            update_trace=list(d.get("update_trace", [])),
            constraint_residual=np.asarray(d["constraint_residual"], dtype=float),
            refit_done=bool(d["refit_done"]),
            converged=bool(d["converged"]),
            n_sweeps=int(d["n_sweeps"]),
            config=d.get("config", {}),
            seed=int(d.get("seed", 0)),
            inner_passes=int(d.get("inner_passes", 0)),
            inner_failures=int(d.get("inner_failures", 0)),
        )


def _system_matrix(system: DesignSystem) -> np.ndarray:
    S, P = system.S, system.block
    A = system.regressors.gram.copy()
    pen = system.penalty_block
    for g in range(S):
        A[g * P:(g + 1) * P, g * P:(g + 1) * P] += pen
    return A


def _ridge_cache(system: DesignSystem) -> dict:
    """Per-(penalties, lambda2, constraint weight) cache on the shared regressors."""
    cache = system.regressors.__dict__.setdefault("_ridge_cache", {})
    key = (id(system.penalties), system.lambda2, system.constraint_weight)
    return cache.setdefault(key, {})


def _factor(system: DesignSystem):
    """Cholesky factor of the ridge system (or the dense matrix if not PD)."""
    entry = _ridge_cache(system)
    if "factor" not in entry:
        A = _system_matrix(system)
        try:
            entry["factor"] = ("chol", cho_factor(A, check_finite=False))
        except LinAlgError:
            entry["factor"] = ("dense", A)
    return entry["factor"]


def _inverse(system: DesignSystem):
    """Inverse of the full ridge matrix, or None if it is not positive definite."""
    entry = _ridge_cache(system)
    if "inverse" not in entry:
        kind, fac = _factor(system)
        entry["inverse"] = cho_solve(fac, np.eye(len(fac[0])), check_finite=False) if kind == "chol" else None
    return entry["inverse"]


def _block_inverses(system: DesignSystem) -> np.ndarray:
    """Inverses of the per-predictor diagonal blocks, cached like :func:`_factor`.

    Returns an (S, 0, 0) array if any block is not safely invertible.
    """
    entry = _ridge_cache(system)
    if "blocks" not in entry:
        S, P = system.S, system.block
        G = system.regressors.gram
        pen = system.penalty_block
        out = np.empty((S, P, P))
        for g in range(S):
            Ag = G[g * P:(g + 1) * P, g * P:(g + 1) * P] + pen
            if np.linalg.cond(Ag) > 1e12:
                out = np.empty((S, 0, 0))
                break
            out[g] = np.linalg.inv(Ag)
        entry["blocks"] = out
    return entry["blocks"]


# supports larger than this are refit through the cached full inverse
DIRECT_REFIT_LIMIT = 400


def ridge(system: DesignSystem, columns=None) -> np.ndarray:
    """Solution with no sparsity penalty, optionally restricted to ``columns``.

    For large supports the restricted solve uses ``inv(A_SS) = B_SS - B_SZ
    inv(B_ZZ) B_ZS`` with ``B`` the cached inverse of the full matrix, which
    only needs a factorization of the (small) complement block.
    """
    dim = system.S * system.block
    b = system.psi_t_y
    if columns is None:
        kind, fac = _factor(system)
        if kind == "chol":
            return cho_solve(fac, b, check_finite=False)
        return lstsq(fac, b)[0]
    columns = np.asarray(columns, dtype=int)
    out = np.zeros(dim)
    if columns.size == 0:
        return out
    if columns.size == dim:
        return ridge(system)
    if columns.size > DIRECT_REFIT_LIMIT:
        B = _inverse(system)
        if B is not None:
            rest = np.setdiff1d(np.arange(dim), columns)
            r = b[columns]
            try:
                v = cho_solve(cho_factor(B[np.ix_(rest, rest)], check_finite=False),
                              B[np.ix_(rest, columns)] @ r, check_finite=False)
                out[columns] = B[np.ix_(columns, columns)] @ r - B[np.ix_(columns, rest)] @ v
                return out
            except LinAlgError:
                pass
    A = system.regressors.gram[np.ix_(columns, columns)].copy()
    P = system.block
    pen = system.penalty_block
    # add penalty blocks restricted to the support
    blocks = columns // P
    for g in np.unique(blocks):
        sel = np.flatnonzero(blocks == g)
        loc = columns[sel] - g * P
        A[np.ix_(sel, sel)] += pen[np.ix_(loc, loc)]
    try:
        out[columns] = cho_solve(cho_factor(A, check_finite=False), b[columns], check_finite=False)
    except LinAlgError:
        out[columns] = lstsq(A, b[columns])[0]
    return out


class _Problem:
    """Objective bookkeeping for one target in Gram form."""

    def __init__(self, system: DesignSystem, config: PenaltyConfig):
        self.system = system
        self.config = config
        self.S = system.S
        self.L = system.spec.L
        self.Q = system.spec.Q
        self.P = system.block
        self.G = system.regressors.gram
        self.b = system.psi_t_y
        self.pen = system.penalty_block
        self.c_local, self.c_global = config.weights(self.L, self.Q)
        self.nu = config.nu
        self.tau = config.tau
        self.use_local = config.mode == "global_local"

    def group_norms(self, gamma_g):
        local = np.abs(gamma_g).reshape(self.L, self.Q).sum(axis=1)
        return local, local.sum()

    def thetas(self, gamma_g):
        local, total = self.group_norms(gamma_g)
        th = np.zeros(self.L + 1)
        if self.use_local:
            th[: self.L] = theta_update(local, self.c_local, self.nu, self.tau)
        th[self.L] = theta_update(total, self.c_global, self.nu, self.tau)
        return th

    def coef_weights(self, th):
        w = np.full(self.L, group_weight(th[self.L], self.c_global, self.nu))
        if self.use_local:
            w = w + group_weight(th[: self.L], self.c_local, self.nu)
        return np.repeat(w, self.Q)

    def smooth_part(self, gamma):
        fit = self.system.yty - 2.0 * self.b @ gamma + gamma @ (self.G @ gamma)
        pen = sum(
            gamma[g * self.P:(g + 1) * self.P] @ self.pen @ gamma[g * self.P:(g + 1) * self.P]
            for g in range(self.S)
        )
        return fit + pen

    def objective(self, gamma, theta):
        """Variational objective with the given auxiliary ``theta`` (shape S x (L+1))."""
        val = self.smooth_part(gamma)
        for g in range(self.S):
            gg = gamma[g * self.P:(g + 1) * self.P]
            local, total = self.group_norms(gg)
            val += _bridge_term(theta[g, self.L], self.c_global, self.nu, total)
            if self.use_local:
                val += sum(_bridge_term(theta[g, l], self.c_local, self.nu, local[l]) for l in range(self.L))
            val += self.tau * theta[g].sum()
        return float(val)

    def bridge_objective(self, gamma):
        """Original objective with the power penalty (theta profiled out)."""
        val = self.smooth_part(gamma)
        lam = self.config.effective_lambda1
        for g in range(self.S):
            local, total = self.group_norms(gamma[g * self.P:(g + 1) * self.P])
            val += lam * self.c_global * total**self.nu
            if self.use_local:
                val += lam * self.c_local * np.sum(local**self.nu)
        return float(val)


def _bridge_term(theta, c, nu, norm):
    if norm == 0.0:
        return 0.0
    if theta <= 0.0:
        return np.inf
    return theta ** (1.0 - 1.0 / nu) * c ** (1.0 / nu) * norm


def bridge_objective(system: DesignSystem, config: PenaltyConfig, gamma) -> float:
    return _Problem(system, config).bridge_objective(np.asarray(gamma, dtype=float))


@numba.njit(cache=True)
def _theta(norm, c, nu, tau_):
    if norm < ZERO_NORM:
        return 0.0
    return c * norm**nu * ((1.0 - nu) / (tau_ * nu)) ** nu


@numba.njit(cache=True)
def _weight(theta, c, nu):
    if theta <= 0.0:
        return MAX_WEIGHT
    return min(theta ** (1.0 - 1.0 / nu) * c ** (1.0 / nu), MAX_WEIGHT)


@numba.njit(cache=True)
def _term(theta, c, nu, norm):
    if norm == 0.0:
        return 0.0
    if theta <= 0.0:
        return np.inf
    return theta ** (1.0 - 1.0 / nu) * c ** (1.0 / nu) * norm


@numba.njit(cache=True)
def _block_thetas(gamma, g, L, Q, c_l, c_g, nu, tau_, use_local, out):
    P = L * Q
    total = 0.0
    for l in range(L):
        s = 0.0
        for q in range(Q):
            s += abs(gamma[g * P + l * Q + q])
        total += s
        out[l] = _theta(s, c_l, nu, tau_) if use_local else 0.0
    out[L] = _theta(total, c_g, nu, tau_)


@numba.njit(cache=True)
def _objective(yty, b, gamma, Ggam, penq, theta, S, L, Q, c_l, c_g, nu, tau_, use_local):
    val = yty + np.sum(penq)
    for i in range(gamma.shape[0]):
        val += gamma[i] * (Ggam[i] - 2.0 * b[i])
    P = L * Q
    for g in range(S):
        total = 0.0
        for l in range(L):
            s = 0.0
            for q in range(Q):
                s += abs(gamma[g * P + l * Q + q])
            total += s
            if use_local:
                val += _term(theta[g, l], c_l, nu, s)
        val += _term(theta[g, L], c_g, nu, total)
        val += tau_ * np.sum(theta[g])
    return val


@numba.njit(cache=True)
def _backfit(G, b, pen, Ainv, yty, gamma, theta, perms, L, Q, c_l, c_g, nu, tau_, use_local,
             inner_tol, max_iter, outer_tol, trace, updates, stats):
    """Backfitting sweeps in place; returns (sweeps, converged, n_updates, diverged)."""
    S, max_sweeps = perms.shape[1], perms.shape[0]
    P = L * Q
    Ggam = G @ gamma
    penq = np.zeros(S)
    for g in range(S):
        blk = gamma[g * P:(g + 1) * P]
        penq[g] = blk @ (pen @ blk)
        _block_thetas(gamma, g, L, Q, c_l, c_g, nu, tau_, use_local, theta[g])
    trace[0] = _objective(yty, b, gamma, Ggam, penq, theta, S, L, Q, c_l, c_g, nu, tau_, use_local)
    frozen = np.zeros(S, dtype=np.bool_)
    free = np.ones(P, dtype=np.bool_)
    w = np.empty(P)
    A = np.empty((S, P, P))
    for g in range(S):
        for i in range(P):
            for j in range(P):
                A[g, i, j] = G[g * P + i, g * P + j] + pen[i, j]
    if Ainv.shape[1] == 0:
        Ainv = np.empty((S, 0, 0))
    n_up = 0
    increases = 0
    for sweep in range(max_sweeps):
        previous = gamma.copy()
        for pos in range(S):
            g = perms[sweep, pos]
            if frozen[g]:
                continue
            lo = g * P
            old = gamma[lo:lo + P].copy()
            _block_thetas(gamma, g, L, Q, c_l, c_g, nu, tau_, use_local, theta[g])
            wg = _weight(theta[g, L], c_g, nu)
            any_free = False
            for l in range(L):
                wl = wg + (_weight(theta[g, l], c_l, nu) if use_local else 0.0)
                dead = theta[g, L] == 0.0 or (use_local and theta[g, l] == 0.0)
                for q in range(Q):
                    j = l * Q + q
                    w[j] = min(wl, MAX_WEIGHT)
                    free[j] = not dead
                    if not dead:
                        any_free = True
            x = old.copy()
            for j in range(P):
                if not free[j]:
                    x[j] = 0.0
            if any_free:
                rhs = np.empty(P)
                for i in range(P):
                    s = b[lo + i] - Ggam[lo + i]
                    for j in range(P):
                        s += G[lo + i, lo + j] * old[j]
                    rhs[i] = s
                n_it, ok = _cd_gram(A[g], rhs, w, x, free, inner_tol, max_iter,
                                    Ainv[g])
                stats[0] += n_it
                if not ok:
                    stats[1] += 1
                total = 0.0
                for l in range(L):
                    s = 0.0
                    for q in range(Q):
                        s += abs(x[l * Q + q])
                    if s < ZERO_NORM:
                        x[l * Q:(l + 1) * Q] = 0.0
                    total += s
                if total < ZERO_NORM:
                    x[:] = 0.0
            else:
                frozen[g] = True
            delta = x - old
            for j in range(P):
                d = delta[j]
                if d != 0.0:
                    row = G[lo + j]
                    for i in range(Ggam.shape[0]):
                        Ggam[i] += d * row[i]
            gamma[lo:lo + P] = x
            penq[g] = x @ (pen @ x)
            updates[n_up] = _objective(yty, b, gamma, Ggam, penq, theta, S, L, Q,
                                       c_l, c_g, nu, tau_, use_local)
            n_up += 1
        for g in range(S):
            _block_thetas(gamma, g, L, Q, c_l, c_g, nu, tau_, use_local, theta[g])
        obj = _objective(yty, b, gamma, Ggam, penq, theta, S, L, Q, c_l, c_g, nu, tau_, use_local)
        trace[sweep + 1] = obj
        if obj > trace[sweep] + 1e-6:
            increases += 1
            if increases >= 3:
                return sweep + 1, False, n_up, True
        else:
            increases = 0
        num = 0.0
        den = 0.0
        for i in range(gamma.shape[0]):
            num += (gamma[i] - previous[i]) ** 2
            den += previous[i] ** 2
        if np.sqrt(num) < outer_tol * max(np.sqrt(den), 1e-12):
            return sweep + 1, True, n_up, False
    return max_sweeps, False, n_up, False


def _prune(prob: _Problem, gamma) -> bool:
    """Greedily zero coefficient groups while that lowers the bridge objective.

    Works in place on ``gamma``; returns whether anything changed.
    """
    P, L, Q = prob.P, prob.L, prob.Q
    lam = prob.config.effective_lambda1
    changed = False
    while True:
        grad = prob.b - prob.G @ gamma
        best, best_idx = 0.0, None
        for g in range(prob.S):
            lo = g * P
            gg = gamma[lo:lo + P]
            if not np.any(gg):
                continue
            local, total = prob.group_norms(gg)
            pen_g = prob.pen @ gg
            units = [np.arange(P)]
            if prob.use_local:
                units += [np.arange(l * Q, (l + 1) * Q) for l in range(L) if local[l] > 0 and local[l] < total]
            for idx in units:
                z = gg[idx]
                cols = lo + idx
                # exact change of the smooth part when gamma[cols] is set to zero
                d = 2.0 * z @ grad[cols] + z @ prob.G[np.ix_(cols, cols)] @ z
                d += -2.0 * z @ pen_g[idx] + z @ prob.pen[np.ix_(idx, idx)] @ z
                if len(idx) == P:
                    d -= lam * prob.c_global * total**prob.nu
                    if prob.use_local:
                        d -= lam * prob.c_local * np.sum(local**prob.nu)
                else:
                    s = np.abs(z).sum()
                    d += lam * prob.c_global * ((total - s) ** prob.nu - total**prob.nu)
                    d -= lam * prob.c_local * s**prob.nu
                if d < best - 1e-12 * max(1.0, abs(prob.system.yty)):
                    best, best_idx = d, cols
        if best_idx is None:
            return changed
        gamma[best_idx] = 0.0
        changed = True


def fit(
    system: DesignSystem,
    config: PenaltyConfig,
    seed: int = 0,
    inner_tol: float = 1e-6,
    outer_tol: float = 1e-4,
    max_sweeps: int = 50,
    max_iter: int = 1000,
    refit: bool = True,
    init: np.ndarray = None,
    max_prune_rounds: int = 5,
) -> FitResult:
    """Backfitting group bridge fit for the target of ``system``.

    1. ridge start (no sparsity penalty);
    2. per sweep, predictors in a seeded random order: update the L+1 thetas of
       the predictor from its current block, then solve the weighted lasso for the
       block against the partial residual of the other predictors. Groups that hit
       zero stay frozen at zero;
    3. stop when the relative change of gamma drops below ``outer_tol``; then
       zero any group whose removal lowers the objective and sweep again, at most
       ``max_prune_rounds`` times;
    4. optionally refit by ridge on the selected support.
    """
    if abs(system.lambda2 - config.lambda2) > 0 or system.constraint_weight != config.constraint_weight:
        raise InvalidConfigError("system was assembled with different lambda2/constraint weight than config")
    prob = _Problem(system, config)
    S, L, Q, P = prob.S, prob.L, prob.Q, prob.P
    gamma = ridge(system) if init is None else np.array(init, dtype=float)
    if not np.all(np.isfinite(gamma)):
        raise NumericError("ridge initialization is not finite")
    gamma_pen = gamma.copy()
    theta = np.zeros((S, L + 1))
    trace, updates = [], []
    converged, sweeps = True, 0
    inner_passes = inner_failures = 0

    if config.effective_lambda1 > 0:
        rng = np.random.default_rng(seed)
        perms = np.array([rng.permutation(S) for _ in range(max_sweeps)], dtype=np.int64).reshape(max_sweeps, S)
        trace_buf = np.zeros(max_sweeps + 1)
        update_buf = np.zeros(max_sweeps * S)
        stats = np.zeros(2, dtype=np.int64)
        sweeps, converged, n_up, diverged = _backfit(
            np.ascontiguousarray(prob.G), prob.b, np.ascontiguousarray(prob.pen),
            _block_inverses(system), float(system.yty),
            gamma, theta, perms, L, Q, prob.c_local, prob.c_global, prob.nu, prob.tau,
            prob.use_local, float(inner_tol), int(max_iter), float(outer_tol), trace_buf, update_buf, stats,
        )
        trace = trace_buf[: sweeps + 1].tolist()
        updates = update_buf[:n_up].tolist()
        if diverged:
            raise DivergenceError("objective increased for 3 consecutive sweeps", trace)
        # the bridge penalty is nonconvex: after convergence, drop any group whose
        # removal lowers the objective and resume the sweeps from there
        for _ in range(max_prune_rounds):
            if not converged or not _prune(prob, gamma):
                break
            sweeps_more, converged, n_more, diverged = _backfit(
                np.ascontiguousarray(prob.G), prob.b, np.ascontiguousarray(prob.pen),
                _block_inverses(system), float(system.yty),
                gamma, theta, perms, L, Q, prob.c_local, prob.c_global, prob.nu, prob.tau,
                prob.use_local, float(inner_tol), int(max_iter), float(outer_tol), trace_buf, update_buf, stats,
            )
            if diverged:
                raise DivergenceError("objective increased for 3 consecutive sweeps", trace)
            trace += trace_buf[: sweeps_more + 1].tolist()
            updates += update_buf[:n_more].tolist()
            sweeps += sweeps_more
        inner_passes, inner_failures = int(stats[0]), int(stats[1])
        if not np.all(np.isfinite(gamma)):
            raise NumericError("non-finite coefficients during backfitting")
        gamma_pen = gamma.copy()
        if refit:
            # support unit is the smallest penalized group: triangles or whole surfaces
            unit = Q if prob.use_local else P
            kept = np.unique(np.flatnonzero(gamma != 0.0) // unit)
            cols = (kept[:, None] * unit + np.arange(unit)).ravel()
            gamma = ridge(system, cols)
    else:
        trace.append(prob.smooth_part(gamma))

    blocks = gamma.reshape(S, L, Q)
    nonzero = np.any(blocks != 0.0, axis=2)
    active = [int(g) for g in np.flatnonzero(nonzero.any(axis=1))]
    triangles = {g: [int(l) for l in np.flatnonzero(nonzero[g])] for g in active}
    H = system.penalties.H
    resid = np.array([np.abs(H @ gamma[g * P:(g + 1) * P]).max() if H.size else 0.0 for g in range(S)])
    return FitResult(
        target=system.target,
        gamma=gamma,
        gamma_penalized=gamma_pen,
        theta=theta,
        active_predictors=active,
        active_triangles=triangles,
        objective_trace=trace,
        update_trace=updates,
        constraint_residual=resid,
        refit_done=bool(refit and config.effective_lambda1 > 0),
        converged=converged,
        n_sweeps=sweeps,
        config=config.to_dict(),
        seed=int(seed),
        inner_passes=inner_passes,
        inner_failures=inner_failures,
    )
