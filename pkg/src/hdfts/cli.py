"""Command-line entry point: ingestion, fitting, forecasting, evaluation and export.

Every subcommand reads one JSON config (optional) whose top level holds the
simulation settings, a ``model`` section with :class:`~hdfts.model.ModelConfig`
keys, and a few CLI keys: ``deltas``, ``lambda1``, ``lambda2``,
``smoothing_penalty``, ``age_max``. Results go to files; a short JSON summary
goes to stdout. On failure a JSON error object goes to stderr and the exit
code identifies the failure class.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .basis import BasisError
from .design import DesignError, FunctionalPanel
from .mesh import MeshError
from .metrics import mafe, msfe, ise
from .model import HdftsModel, ModelConfig, fit_model, split_points, tune
from .sim import SimConfig, SimulationError, gen_panel, run_monte_carlo, true_surfaces
from .solver import InvalidConfigError, SolverError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING_FILE = 4
EXIT_DATA = 5
EXIT_NUMERIC = 6

CLI_KEYS = ("deltas", "lambda1", "lambda2", "smoothing_penalty", "age_max")
MORTALITY_COLUMNS = ("region", "year", "age", "rate", "population")
PANEL_COLUMNS = ("region", "time", "grid_point", "value")
RATE_FLOOR = 1e-8
MIN_AGES = 5


class UsageError(Exception):
    pass


class ConfigError(ValueError):
    pass


class MortalityError(DesignError):
    pass


# ---------------------------------------------------------------------------
# mortality smoothing


def smoothing_weights(rate, population) -> np.ndarray:
    """Inverse-variance weights ``w = N m / (1 - m)`` of log mortality rates."""
    m = np.asarray(rate, dtype=float)
    return np.asarray(population, dtype=float) * m / (1.0 - m)


def clamp_rates(rate):
    """Move rates of 0 or >= 1 into ``[1e-8, 1 - 1e-8]``; returns ``(rates, n_clamped)``."""
    m = np.asarray(rate, dtype=float)
    out = np.clip(m, RATE_FLOOR, 1.0 - RATE_FLOOR)
    return out, int(np.count_nonzero(out != m))


def second_difference(n: int) -> np.ndarray:
    D = np.zeros((n - 2, n))
    idx = np.arange(n - 2)
    D[idx, idx] = 1.0
    D[idx, idx + 1] = -2.0
    D[idx, idx + 2] = 1.0
    return D


def _interp_matrix(grid: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Rows map grid values to linear interpolants at ``x``."""
    j = np.clip(np.searchsorted(grid, x, side="right") - 1, 0, len(grid) - 2)
    t = (x - grid[j]) / (grid[j + 1] - grid[j])
    B = np.zeros((len(x), len(grid)))
    rows = np.arange(len(x))
    B[rows, j] = 1.0 - t
    B[rows, j + 1] = t
    return B


def smooth_curve(ages, log_rates, weights, grid, penalty: float) -> np.ndarray:
    """Weighted second-difference penalized least squares on ``grid``.

    Weights are divided by their mean so ``penalty`` does not depend on the
    exposure scale.
    """
    B = _interp_matrix(grid, np.asarray(ages, dtype=float))
    w = np.asarray(weights, dtype=float)
    w = w / w.mean()
    D = second_difference(len(grid))
    A = B.T @ (w[:, None] * B) + penalty * (D.T @ D)
    rhs = B.T @ (w * np.asarray(log_rates, dtype=float))
    try:
        f = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise MortalityError(
            "smoothing system is singular; use a positive penalty or cover the full age grid"
        ) from exc
    if not np.all(np.isfinite(f)):
        raise MortalityError("smoothing produced non-finite values")
    return f


def smooth_curves(table: pd.DataFrame, penalty: float, age_max: int = 100,
                  report: dict = None) -> FunctionalPanel:
    """Smooth ``log10`` mortality curves onto ages ``0..age_max``, rescaled to [0, 1].

    Parameters
    ----------
    table : DataFrame
        Columns ``region, year, age, rate, population``.
    penalty : float
        Second-difference penalty (>= 0).
    age_max : int
        Top of the unit-step age grid; older ages are dropped.
    report : dict, optional
        Filled with ``clamped`` (rates moved off 0 or 1), ``dropped`` (ages
        outside the grid) and ``curves``.

    Returns
    -------
    FunctionalPanel
        ``values[s, t]`` is the smoothed ``log10`` rate curve of region ``s``
        in year ``t``.
    """
    if penalty < 0 or not np.isfinite(penalty):
        raise ConfigError(f"smoothing penalty must be nonnegative, got {penalty}")
    missing = set(MORTALITY_COLUMNS) - set(table.columns)
    if missing:
        raise MortalityError(f"mortality table missing columns {sorted(missing)}")
    df = table.loc[:, list(MORTALITY_COLUMNS)].copy()
    df["region"] = df["region"].astype(str)
    if df[["age", "rate", "population"]].isna().any().any():
        raise MortalityError("mortality table has missing age, rate or population values")
    if (df["population"] <= 0).any():
        bad = df.index[df["population"] <= 0].tolist()
        raise MortalityError(f"population must be positive (rows {bad[:10]})")
    if (df["rate"] < 0).any():
        bad = df.index[df["rate"] < 0].tolist()
        raise MortalityError(f"negative mortality rates (rows {bad[:10]})")
    ages = np.arange(age_max + 1, dtype=float)
    outside = (df["age"] < 0) | (df["age"] > age_max)
    dropped = int(outside.sum())
    df = df[~outside]

    counts = df.groupby(["region", "year"]).size()
    short = counts[counts < MIN_AGES]
    if len(short):
        ids = [f"{r}/{y}" for r, y in short.index]
        raise MortalityError(f"curves with fewer than {MIN_AGES} ages: {ids}")
    regions = list(dict.fromkeys(df["region"]))
    years = sorted(df["year"].unique())
    expected = {(r, y) for r in regions for y in years}
    absent = sorted(expected - set(counts.index))
    if absent:
        raise MortalityError(f"missing (region, year) curves: {[f'{r}/{y}' for r, y in absent[:10]]}")

    rates, clamped = clamp_rates(df["rate"].to_numpy())
    df = df.assign(m=rates, w=smoothing_weights(rates, df["population"].to_numpy()),
                   y=np.log10(rates))
    values = np.zeros((len(regions), len(years), len(ages)))
    r_idx = {r: i for i, r in enumerate(regions)}
    y_idx = {y: i for i, y in enumerate(years)}
    for (r, yr), g in df.groupby(["region", "year"], sort=False):
        values[r_idx[r], y_idx[yr]] = smooth_curve(g["age"], g["y"], g["w"], ages, penalty)
    if clamped:
        logger.warning("clamped %d rates into [%g, %g]", clamped, RATE_FLOOR, 1 - RATE_FLOOR)
    if report is not None:
        report.update(clamped=clamped, dropped=dropped, curves=int(len(counts)))
    times = [y.item() if hasattr(y, "item") else y for y in years]
    return FunctionalPanel(ages / age_max, values, regions, times)


# ---------------------------------------------------------------------------
# config and file helpers


@dataclass
class RunConfig:
    sim: SimConfig
    model: ModelConfig
    extra: dict


def load_config(path=None) -> RunConfig:
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    extra = {k: data.pop(k) for k in CLI_KEYS if k in data}
    try:
        sim = SimConfig.from_dict(data)
        model = sim.model_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(sim, model, extra)


def _is_mortality(columns) -> bool:
    return set(MORTALITY_COLUMNS) <= set(columns)


def read_panel(path, smoothing_penalty: float = 1.0, age_max: int = 100, report: dict = None) -> FunctionalPanel:
    """Panel CSV, panel JSON or mortality CSV (detected by its columns)."""
    path = str(path)
    if path.endswith(".json"):
        with open(path) as fh:
            return FunctionalPanel.from_dict(json.load(fh))
    df = pd.read_csv(path)
    if _is_mortality(df.columns):
        return smooth_curves(df, smoothing_penalty, age_max, report)
    if set(PANEL_COLUMNS) <= set(df.columns):
        return FunctionalPanel.from_frame(df)
    raise DesignError(
        f"{path}: expected panel columns {list(PANEL_COLUMNS)} or mortality columns {list(MORTALITY_COLUMNS)}"
    )


def write_panel(panel: FunctionalPanel, path) -> None:
    if str(path).endswith(".json"):
        with open(path, "w") as fh:
            json.dump(panel.to_dict(), fh, sort_keys=True)
    else:
        panel.to_csv(path)


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)


def _emit(summary: dict) -> None:
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")


def _model_config(run: RunConfig, args) -> ModelConfig:
    data = run.model.to_dict()
    if getattr(args, "mode", None):
        data["mode"] = args.mode
    if getattr(args, "delta", None) is not None:
        data["delta"] = args.delta
    try:
        return ModelConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _inputs(args, run: RunConfig, report: dict = None):
    penalty = args.smoothing_penalty
    if penalty is None:
        penalty = float(run.extra.get("smoothing_penalty", 1.0))
    age_max = int(run.extra.get("age_max", 100))
    panel = read_panel(args.panel, penalty, age_max, report)
    predictors = None
    if getattr(args, "predictors", None):
        predictors = read_panel(args.predictors, penalty, age_max)
    return panel, predictors


def forecast_times(panel: FunctionalPanel, delta: int, which: str) -> np.ndarray:
    """Positional indices: ``test`` (last 20%), ``all`` (every index with a lag) or ``next``."""
    if which == "test":
        n2 = int(round(0.8 * panel.n))
        return np.arange(max(n2, delta), panel.n)
    if which == "all":
        return np.arange(delta, panel.n)
    if which == "next":
        return np.array([panel.n - 1 + delta])
    raise UsageError(f"unknown forecast time selection {which!r}")


def _time_label(panel: FunctionalPanel, t: int):
    if t < panel.n:
        return panel.times[t]
    last = panel.times[-1]
    if isinstance(last, (int, np.integer)) and panel.n > 1:
        return int(last) + (t - panel.n + 1) * int(panel.times[-1] - panel.times[-2])
    return f"{last}+{t - panel.n + 1}"


def forecast_panel(model: HdftsModel, panel: FunctionalPanel, times, predictors=None) -> FunctionalPanel:
    targets = sorted(model.fits)
    values = np.stack([model.forecast(panel, s, times, predictors) for s in targets])
    labels = [_time_label(panel, int(t)) for t in times]
    return FunctionalPanel(panel.grid, values, [model.regions[s] for s in targets], labels)


def score(actual: FunctionalPanel, predicted: FunctionalPanel, delta=None) -> pd.DataFrame:
    """Per-region MAFE/MSFE over the times both panels share, plus an ``all`` row."""
    if not np.allclose(actual.grid, predicted.grid, rtol=0, atol=1e-12):
        raise DesignError("forecast grid does not match the panel grid")
    t_idx = {t: i for i, t in enumerate(actual.times)}
    r_idx = {r: i for i, r in enumerate(actual.regions)}
    common = [j for j, t in enumerate(predicted.times) if t in t_idx]
    if not common:
        raise DesignError("forecasts share no time points with the panel")
    unknown = [r for r in predicted.regions if r not in r_idx]
    if unknown:
        raise DesignError(f"forecast regions not in the panel: {unknown}")
    rows = [actual.values[r_idx[r]][[t_idx[predicted.times[j]] for j in common]] for r in predicted.regions]
    A = np.stack(rows)
    P = predicted.values[:, common]
    out = []
    for i, r in enumerate(predicted.regions):
        out.append({"region": r, "delta": delta, "n_times": len(common),
                    "mafe": mafe(A[i], P[i], actual.grid), "msfe": msfe(A[i], P[i], actual.grid)})
    out.append({"region": "all", "delta": delta, "n_times": len(common),
                "mafe": mafe(A, P, actual.grid), "msfe": msfe(A, P, actual.grid)})
    return pd.DataFrame(out)


def truth_ise(model: HdftsModel, sim: SimConfig, resolution: int = 101) -> dict:
    """Per target region: mean ISE over predictors and per surface kind."""
    truth = true_surfaces(sim)
    out = {}
    for s in sorted(model.fits):
        by_kind = {}
        for g in range(model.n_predictors):
            val = ise(truth.function(s, g), model.surface(s, g), model.spec.tri.domain, resolution)
            by_kind.setdefault(truth.kinds[s][g], []).append(val)
        row = {"ise": float(np.mean([v for vals in by_kind.values() for v in vals]))}
        row.update({f"ise_{k}": float(np.mean(v)) for k, v in by_kind.items()})
        out[model.regions[s]] = row
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> dict:
    run = load_config(args.config)
    data = run.sim.to_dict()
    if args.seed is not None:
        data["seed"] = args.seed
    if args.reps is not None:
        data["reps"] = args.reps
    if args.n is not None:
        data["n_values"] = list(args.n)
    sim = SimConfig.from_dict(data)
    summary = {"command": "simulate", "seed": sim.seed}
    if args.panel:
        cfg = SimConfig.from_dict({**sim.to_dict(), "n": sim.n_values[0]})
        targets, drivers, truth = gen_panel(cfg, sim.seed)
        write_panel(targets, args.panel)
        summary["panel"] = args.panel
        if args.drivers:
            write_panel(drivers, args.drivers)
            summary["drivers"] = args.drivers
        if args.truth:
            write_json({"sim_config": cfg.to_dict(), "surfaces": truth.to_dict()}, args.truth)
            summary["truth"] = args.truth
    if args.out:
        if sim.reps < 1:
            raise ConfigError("simulate --out needs reps >= 1")
        result = run_monte_carlo(sim, n_jobs=args.jobs)
        result.to_csv(args.out)
        if args.records:
            result.records.drop(columns=["seconds"], errors="ignore").to_csv(
                args.records, index=False, float_format="%.10g")
        summary.update(report=args.out, reps=sim.reps, n_values=sim.n_values)
    if not args.panel and not args.out:
        raise UsageError("simulate needs --out (Monte Carlo report) and/or --panel (one simulated panel)")
    return summary


def _lambdas(args, run: RunConfig):
    l1 = args.lambda1 if args.lambda1 is not None else run.extra.get("lambda1", 1e-3)
    l2 = args.lambda2 if args.lambda2 is not None else run.extra.get("lambda2", 1e-3)
    return float(l1), float(l2)


def cmd_fit(args) -> dict:
    run = load_config(args.config)
    mcfg = _model_config(run, args)
    report = {}
    panel, predictors = _inputs(args, run, report)
    l1, l2 = _lambdas(args, run)
    model = fit_model(panel, mcfg, l1, l2, seed=args.seed, predictors=predictors)
    model.save(args.out)
    return {"command": "fit", "model": args.out, "lambda1": l1, "lambda2": l2,
            "delta": mcfg.delta, "mode": mcfg.mode, "seed": args.seed,
            "connections": len(model.connections()), **report}


def cmd_tune(args) -> dict:
    run = load_config(args.config)
    mcfg = _model_config(run, args)
    report = {}
    panel, predictors = _inputs(args, run, report)
    results = tune(panel, mcfg, seed=args.seed, predictors=predictors)
    model = next(iter(results.values())).model
    model.save(args.out)
    if args.table:
        rows = [{"region": panel.regions[s], **row} for s, res in results.items() for row in res.table]
        pd.DataFrame(rows).to_csv(args.table, index=False, float_format="%.17g")
    chosen = {panel.regions[s]: {"lambda1": r.lambda1, "lambda2": r.lambda2, "test_msfe": r.test_msfe}
              for s, r in results.items()}
    return {"command": "tune", "model": args.out, "seed": args.seed, "chosen": chosen, **report}


def cmd_forecast(args) -> dict:
    run = load_config(args.config)
    model = HdftsModel.load(args.model)
    panel, predictors = _inputs(args, run)
    times = forecast_times(panel, model.delta, args.times)
    out = forecast_panel(model, panel, times, predictors)
    write_panel(out, args.out)
    return {"command": "forecast", "forecasts": args.out, "n_times": len(times), "delta": model.delta}


def cmd_eval(args) -> dict:
    run = load_config(args.config)
    panel, predictors = _inputs(args, run)
    frames = []
    models = {}
    if args.forecast:
        fc = read_panel(args.forecast)
        model = HdftsModel.load(args.model) if args.model else None
        delta = model.delta if model is not None else None
        frames.append(score(panel, fc, delta))
        if model is not None:
            models[delta] = model
    else:
        deltas = args.deltas or run.extra.get("deltas") or [run.model.delta]
        for delta in deltas:
            mcfg = ModelConfig.from_dict({**run.model.to_dict(), "delta": int(delta)})
            split_points(panel.n, mcfg.delta)
            results = tune(panel, mcfg, seed=args.seed, predictors=predictors)
            model = next(iter(results.values())).model
            times = forecast_times(panel, mcfg.delta, "test")
            frames.append(score(panel, forecast_panel(model, panel, times, predictors), int(delta)))
            models[int(delta)] = model
    table = pd.concat(frames, ignore_index=True)
    if args.truth:
        if not models:
            raise UsageError("--truth needs --model (with --forecast) or a fitted delta list")
        with open(args.truth) as fh:
            sim = SimConfig.from_dict(json.load(fh)["sim_config"])
        for delta, model in models.items():
            for region, vals in truth_ise(model, sim).items():
                mask = (table["region"] == region) & (table["delta"] == delta)
                for key, val in vals.items():
                    table.loc[mask, key] = val
    table.to_csv(args.out, index=False, float_format="%.17g")
    overall = table[table["region"] == "all"]
    return {"command": "eval", "out": args.out,
            "mafe": overall["mafe"].tolist(), "msfe": overall["msfe"].tolist()}


def surface_table(model: HdftsModel, resolution: int = 51) -> pd.DataFrame:
    lo_u, hi_u, lo_v, hi_v = model.spec.tri.domain
    us = np.linspace(lo_u, hi_u, resolution)
    vs = np.linspace(lo_v, hi_v, resolution)
    uu, vv = np.meshgrid(us, vs, indexing="ij")
    names = model.predictor_names
    frames = []
    for s in sorted(model.fits):
        for g in range(model.n_predictors):
            vals = model.surface(s, g)(uu, vv)
            frames.append(pd.DataFrame({
                "target": model.regions[s], "predictor": names[g],
                "u": uu.ravel(), "v": vv.ravel(), "value": vals.ravel(),
            }))
    return pd.concat(frames, ignore_index=True)


def connection_table(model: HdftsModel) -> pd.DataFrame:
    """Active (target, predictor) pairs: ``regulating`` means predictor drives target."""
    names = model.predictor_names
    rows = []
    for s in sorted(model.fits):
        for g in model.fits[s].active_predictors:
            direction = "self" if (g == s and not model.exogenous) else "regulating"
            rows.append({"target": model.regions[s], "predictor": names[g], "direction": direction})
    return pd.DataFrame(rows, columns=["target", "predictor", "direction"])


def cmd_export(args) -> dict:
    model = HdftsModel.load(args.model)
    surfaces = surface_table(model, args.resolution)
    conns = connection_table(model)
    if args.out.endswith(".json"):
        write_json(surfaces.to_dict(orient="list"), args.out)
    else:
        surfaces.to_csv(args.out, index=False, float_format="%.17g")
    if args.connections:
        if args.connections.endswith(".json"):
            write_json(conns.to_dict(orient="records"), args.connections)
        else:
            conns.to_csv(args.connections, index=False)
    return {"command": "export-surfaces", "surfaces": args.out, "connections": len(conns)}


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(p, panel=True):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, default=0)
    if panel:
        p.add_argument("--panel", required=True, help="panel CSV/JSON or mortality CSV")
        p.add_argument("--predictors", help="separate lagged predictor panel")
        p.add_argument("--smoothing-penalty", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hdfts", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="Monte Carlo report and/or one simulated panel")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--reps", type=int)
    p.add_argument("--n", type=int, nargs="+", help="series lengths (overrides n_values)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="report CSV")
    p.add_argument("--records", help="per-replicate CSV")
    p.add_argument("--panel", help="write one simulated target panel")
    p.add_argument("--drivers", help="with --panel: write the driver panel")
    p.add_argument("--truth", help="with --panel: write true surfaces JSON")
    p.set_defaults(func=cmd_simulate)

    for name, func, help_ in (("fit", cmd_fit, "fit with fixed penalties"),
                              ("tune", cmd_tune, "select penalties on a 60/20/20 split and refit")):
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        p.add_argument("--mode", choices=["none", "global", "global_local"])
        p.add_argument("--delta", type=int)
        if name == "fit":
            p.add_argument("--lambda1", type=float)
            p.add_argument("--lambda2", type=float)
        else:
            p.add_argument("--table", help="tuning table CSV")
        p.add_argument("--out", required=True, help="model JSON")
        p.set_defaults(func=func)

    p = sub.add_parser("forecast", help="forecast curves with a saved model")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--times", default="test", choices=["test", "all", "next"])
    p.add_argument("--out", required=True, help="forecast panel CSV/JSON")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("eval", help="MAFE/MSFE (and ISE) per region and delta")
    _add_common(p)
    p.add_argument("--forecast", help="forecast panel to score; otherwise tune per delta")
    p.add_argument("--model", help="model that produced --forecast (delta label, ISE)")
    p.add_argument("--deltas", type=int, nargs="+")
    p.add_argument("--truth", help="truth JSON written by simulate --truth")
    p.add_argument("--out", required=True, help="evaluation CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-surfaces", help="gridded surfaces and active connections")
    p.add_argument("--model", required=True)
    p.add_argument("--resolution", type=int, default=51)
    p.add_argument("--out", required=True, help="surfaces CSV/JSON")
    p.add_argument("--connections", help="connections CSV/JSON")
    p.set_defaults(func=cmd_export)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, (ConfigError, InvalidConfigError)):
        return EXIT_CONFIG
    if isinstance(exc, FileNotFoundError):
        return EXIT_MISSING_FILE
    if isinstance(exc, (DesignError, MeshError, BasisError, pd.errors.ParserError,
                        pd.errors.EmptyDataError)):
        return EXIT_DATA
    if isinstance(exc, (SolverError, SimulationError, np.linalg.LinAlgError)):
        return EXIT_NUMERIC
    return EXIT_INTERNAL


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING))
        if not getattr(args, "func", None):
            raise UsageError("a subcommand is required")
        _emit(args.func(args))
        return EXIT_OK
    except Exception as exc:
        code = _exit_code(exc)
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return code


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
