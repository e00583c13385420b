"""Additive forecasting model: per-region fits, forecasts and (lambda1, lambda2) tuning."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import solver
from .basis import BasisSpec, CoefficientSurface
from .design import (
    DesignError,
    FunctionalPanel,
    check_predictors,
    Penalties,
    Regressors,
    Standardization,
    assemble,
    integration_kernel,
    standardize,
)
from .mesh import triangulate_rect
from .metrics import msfe
from .solver import FitResult, InvalidConfigError, PenaltyConfig

logger = logging.getLogger(__name__)

DEFAULT_GRID_VALUES = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)


class InsufficientHistoryError(DesignError):
    pass


@dataclass
class ModelConfig:
    rows: int = 3
    cols: int = 3
    degree: int = 3
    order: int = 0
    delta: int = 1
    nu: float = 0.5
    mode: str = "global_local"
    local_weight: float = None
    global_weight: float = None
    constraint_weight: float = 1.0
    standardize: bool = True
    quadrature: str = "trapezoid"
    inner_tol: float = 1e-6
    outer_tol: float = 1e-4
    max_sweeps: int = 50
    max_iter: int = 1000
    refit: bool = True
    lambda1_grid: tuple = DEFAULT_GRID_VALUES
    lambda2_grid: tuple = DEFAULT_GRID_VALUES

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise InvalidConfigError(f"unknown model config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.lambda1_grid = tuple(float(x) for x in cfg.lambda1_grid)
        cfg.lambda2_grid = tuple(float(x) for x in cfg.lambda2_grid)
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda1_grid"] = list(self.lambda1_grid)
        d["lambda2_grid"] = list(self.lambda2_grid)
        return d

    def penalty(self, lambda1: float, lambda2: float, mode: str = None) -> PenaltyConfig:
        return PenaltyConfig(
            lambda1=lambda1,
            lambda2=lambda2,
            nu=self.nu,
            mode=mode or self.mode,
            local_weight=self.local_weight,
            global_weight=self.global_weight,
            constraint_weight=self.constraint_weight,
        )

    def basis(self, domain=(0.0, 1.0, 0.0, 1.0)) -> BasisSpec:
        return BasisSpec(triangulate_rect(domain, self.rows, self.cols), self.degree)


def target_seed(seed: int, target: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(target)]).generate_state(1)[0])


@dataclass
class HdftsModel:
    """Fitted surfaces for a set of target regions, all sharing one basis and lag.

    By default the predictors are the lagged curves of the response panel.
    A model fitted against a separate predictor panel keeps that panel's
    standardization in ``predictor_transform`` and needs the panel again to
    forecast.
    """

    spec: BasisSpec
    grid: np.ndarray
    delta: int
    transform: Standardization
    regions: list
    fits: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    predictor_transform: Standardization = None
    predictor_regions: list = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self._kernel = None
        self._operators = {}

    @property
    def exogenous(self) -> bool:
        return self.predictor_transform is not None

    @property
    def inputs(self) -> Standardization:
        """Standardization applied to the predictor curves."""
        return self.predictor_transform if self.exogenous else self.transform

    @property
    def predictor_names(self) -> list:
        if self.predictor_regions is not None:
            return list(self.predictor_regions)
        if self.exogenous:
            return [f"p{g}" for g in range(self.n_predictors)]
        return list(self.regions)

    @property
    def n_predictors(self) -> int:
        return len(self.inputs.scales)

    @property
    def kernel(self) -> np.ndarray:
        if self._kernel is None:
            self._kernel = integration_kernel(self.spec, self.grid,
                                              rule=self.config.get("quadrature", "trapezoid"))
        return self._kernel

    def operator(self, target: int) -> np.ndarray:
        """Discretized operators ``W[g, m, k]``: forecast_m = sum_g W[g] @ X_g."""
        if target not in self._operators:
            gamma = self.fits[target].gamma.reshape(self.n_predictors, self.spec.dim)
            self._operators[target] = np.einsum("mjk,gj->gmk", self.kernel, gamma)
        return self._operators[target]

    def surface(self, target: int, predictor: int, raw_scale: bool = True) -> CoefficientSurface:
        """Estimated surface; ``raw_scale`` undoes the standardization scaling."""
        P = self.spec.dim
        gamma = self.fits[target].gamma[predictor * P:(predictor + 1) * P]
        if raw_scale:
            gamma = gamma * self.transform.scales[target] / self.inputs.scales[predictor]
        return CoefficientSurface(gamma, self.spec)

    def forecast(self, panel: FunctionalPanel, target: int, times,
                 predictors: FunctionalPanel = None) -> np.ndarray:
        """Forecast curves of ``target`` at positional time indices ``times``.

        Each forecast uses the predictor curves at ``t - delta``; indices may
        run past the end of the panel as long as ``t - delta`` is observed.
        """
        if self.exogenous and predictors is None:
            raise DesignError("model was fitted with a separate predictor panel; pass predictors")
        source = panel if predictors is None else predictors
        times = np.atleast_1d(np.asarray(times, dtype=int))
        lagged = times - self.delta
        if np.any(lagged < 0) or np.any(lagged >= source.n):
            raise InsufficientHistoryError(
                f"forecast times {times.tolist()} need observed curves at t - {self.delta}"
            )
        if source.S != self.n_predictors or not np.allclose(source.grid, self.grid):
            raise DesignError("predictor regions/grid do not match the model")
        x = self.inputs.forward(source.values[:, lagged])
        W = self.operator(target)
        pred = np.einsum("gmk,gtk->tm", W, x)
        return self.transform.inverse_region(target, pred)

    def connections(self) -> list:
        """``(target, predictor)`` pairs with a nonzero estimated surface, excluding self."""
        out = []
        for s, res in sorted(self.fits.items()):
            out.extend((s, g) for g in res.active_predictors if g != s)
        return out

    def to_dict(self) -> dict:
        return {
            "basis": self.spec.to_dict(),
            "grid": self.grid.tolist(),
            "delta": self.delta,
            "transform": self.transform.to_dict(),
            "regions": list(self.regions),
            "fits": {str(s): r.to_dict() for s, r in self.fits.items()},
            "config": self.config,
            "predictor_transform": self.predictor_transform.to_dict() if self.exogenous else None,
            "predictor_regions": self.predictor_regions,
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "HdftsModel":
        return cls(
            spec=BasisSpec.from_dict(data["basis"]),
            grid=np.asarray(data["grid"], dtype=float),
            delta=int(data["delta"]),
            transform=Standardization.from_dict(data["transform"]),
            regions=list(data["regions"]),
            fits={int(s): FitResult.from_dict(r) for s, r in data["fits"].items()},
            config=data.get("config", {}),
            predictor_transform=(Standardization.from_dict(data["predictor_transform"])
                                 if data.get("predictor_transform") else None),
            predictor_regions=data.get("predictor_regions"),
        )

    @classmethod
    def load(cls, path) -> "HdftsModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _domain(grid: np.ndarray):
    return (float(grid[0]), float(grid[-1]), float(grid[0]), float(grid[-1]))


class _Workspace:
    """Standardized panel plus shared regressors/penalties for one training window."""

    def __init__(self, panel: FunctionalPanel, config: ModelConfig, spec: BasisSpec = None,
                 kernel: np.ndarray = None, penalties: Penalties = None,
                 predictors: FunctionalPanel = None):
        self.config = config
        self.spec = spec or config.basis(_domain(panel.grid))
        self.panel, self.transform = self._prepare(panel)
        self.predictors, self.predictor_transform = None, None
        if predictors is not None:
            check_predictors(panel, predictors)
            self.predictors, self.predictor_transform = self._prepare(predictors)
        self.regressors = Regressors(self.panel, config.delta, self.spec, kernel, self.predictors,
                                     config.quadrature)
        self.penalties = penalties or Penalties(self.spec, config.order)

    def _prepare(self, panel: FunctionalPanel):
        if self.config.standardize:
            return standardize(panel)
        return panel, Standardization.identity(panel.S, panel.M)

    def fit(self, target: int, lambda1: float, lambda2: float, seed: int, mode: str = None) -> FitResult:
        cfg = self.config
        pen = cfg.penalty(lambda1, lambda2, mode)
        system = assemble(
            self.panel, target, cfg.delta, self.spec, lambda2, cfg.order,
            cfg.constraint_weight, self.regressors, self.penalties,
        )
        return solver.fit(
            system, pen, seed=target_seed(seed, target),
            inner_tol=cfg.inner_tol, outer_tol=cfg.outer_tol,
            max_sweeps=cfg.max_sweeps, max_iter=cfg.max_iter, refit=cfg.refit,
        )

    def model(self, fits: dict) -> HdftsModel:
        model = HdftsModel(
            self.spec, self.panel.grid, self.config.delta, self.transform,
            list(self.panel.regions), fits, self.config.to_dict(), self.predictor_transform,
            None if self.predictors is None else list(self.predictors.regions),
        )
        model._kernel = self.regressors.kernel
        return model


def fit_model(panel: FunctionalPanel, config: ModelConfig, lambda1: float, lambda2: float,
              targets=None, seed: int = 0, mode: str = None,
              predictors: FunctionalPanel = None) -> HdftsModel:
    """Fit every target region (default: all) with fixed penalties."""
    ws = _Workspace(panel, config, predictors=predictors)
    targets = range(panel.S) if targets is None else targets
    fits = {int(s): ws.fit(int(s), lambda1, lambda2, seed, mode) for s in targets}
    return ws.model(fits)


def forecast(model: HdftsModel, panel: FunctionalPanel, target: int, time: int,
             predictors: FunctionalPanel = None) -> np.ndarray:
    """One curve: the forecast of ``target`` at positional time index ``time``."""
    return model.forecast(panel, target, [time], predictors)[0]


@dataclass
class TuneResult:
    target: int
    lambda1: float
    lambda2: float
    table: list
    test_msfe: float
    model: HdftsModel = None


def split_points(n: int, delta: int, fractions=(0.6, 0.2)):
    """Chronological cut indices ``(n_train, n_train + n_val)``."""
    n1 = int(round(fractions[0] * n))
    n2 = int(round((fractions[0] + fractions[1]) * n))
    if n1 < delta + 1 or n2 - n1 < 1 or n - n2 < 1:
        raise InsufficientHistoryError(f"n={n} too short for a 60/20/20 split with delta={delta}")
    return n1, n2


def candidate_grid(config: ModelConfig, mode: str = None, grid=None) -> list:
    mode = mode or config.mode
    if grid is None:
        grid = [(l1, l2) for l1 in config.lambda1_grid for l2 in config.lambda2_grid]
    grid = [(float(a), float(b)) for a, b in grid]
    if not grid:
        raise InvalidConfigError("empty tuning grid")
    if mode == "none":
        grid = sorted({(0.0, l2) for _, l2 in grid})
    return grid


def _select(table: list) -> dict:
    # sparser wins ties: larger lambda1, then larger lambda2
    return min(table, key=lambda row: (row["msfe"], -row["lambda1"], -row["lambda2"]))


def tune(panel: FunctionalPanel, config: ModelConfig, targets=None, grid=None, seed: int = 0,
         mode: str = None, keep_model: bool = True, predictors: FunctionalPanel = None) -> dict:
    """Select (lambda1, lambda2) per target on a chronological 60/20/20 split.

    Each grid cell is fit on the first 60% and scored by validation MSFE on the
    next 20%. The winner is refit on the first 80% and its MSFE on the last 20%
    is reported. Returns ``{target: TuneResult}``; with ``keep_model`` every
    result carries the same refit :class:`HdftsModel` covering all targets.
    """
    mode = mode or config.mode
    targets = list(range(panel.S)) if targets is None else [int(s) for s in targets]
    cells = candidate_grid(config, mode, grid)
    n1, n2 = split_points(panel.n, config.delta)
    spec = config.basis(_domain(panel.grid))
    kernel = integration_kernel(spec, panel.grid, rule=config.quadrature)
    penalties = Penalties(spec, config.order)

    def window(stop):
        sub = None if predictors is None else predictors.subset_times(0, stop)
        return _Workspace(panel.subset_times(0, stop), config, spec, kernel, penalties, sub)

    train = window(n1)
    val_times = np.arange(n1, n2)
    tables = {s: [] for s in targets}
    for l1, l2 in cells:
        fits = {s: train.fit(s, l1, l2, seed, mode) for s in targets}
        model = train.model(fits)
        for s in targets:
            pred = model.forecast(panel, s, val_times, predictors)
            err = msfe(panel.values[s, val_times], pred, panel.grid)
            tables[s].append({"lambda1": l1, "lambda2": l2, "msfe": err})

    final = window(n2)
    test_times = np.arange(n2, panel.n)
    fits, chosen = {}, {}
    for s in targets:
        best = _select(tables[s])
        chosen[s] = best
        fits[s] = final.fit(s, best["lambda1"], best["lambda2"], seed, mode)
    model = final.model(fits)
    out = {}
    for s in targets:
        pred = model.forecast(panel, s, test_times, predictors)
        err = msfe(panel.values[s, test_times], pred, panel.grid)
        out[s] = TuneResult(s, chosen[s]["lambda1"], chosen[s]["lambda2"], tables[s], err,
                            model if keep_model else None)
    return out
