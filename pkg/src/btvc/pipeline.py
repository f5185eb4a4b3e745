"""Wiring between configuration, data files, and the model modules.

Builds model structures from a RunConfig plus a frame, runs fits, rebuilds
designs from a saved fit document (including forecast-row-only designs so
predict does not need the training data), and writes run artifacts.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import sys

import numpy as np

from . import __version__
from .calibration import apply_prior_windows, read_prior_windows_csv
from .errors import ValidationError
from .evaluation import BacktestPlan, MetricReport, backtest
from .fourier import FourierSpec, fourier_design
from .inference import (
    FitResult,
    MapConfig,
    SviConfig,
    fit_map,
    fit_svi,
)
from .kernels import KnotGrid, build_grid, kernel_matrix
from .model import HyperParams, ModelDesign, ModelInputs, decompose, predict
from .runconfig import (
    RunConfig,
    config_to_dict,
    csv_schema,
    fourier_specs,
    quantile_levels,
)
from .timeframe import TimeSeriesFrame, ingest_csv, to_log_frame, transform_regressors


def load_frame(path: str, cfg: RunConfig) -> TimeSeriesFrame:
    return ingest_csv(
        path, csv_schema(cfg), allow_negative_regressors=cfg.link == "identity"
    )


def _component_grid(T: int, count: int, distance: int, anchor: str) -> KnotGrid:
    if count > 0:
        return build_grid(T, count=count)
    return build_grid(T, distance=min(distance, T), anchor=anchor)


def _auto_rho(grid: KnotGrid, T: int) -> float:
    if grid.n_knots > 1:
        return float(np.diff(grid.knot_times).mean()) / 2.0
    return max(T / 4.0, 1.0)


def model_scale_arrays(frame: TimeSeriesFrame, cfg: RunConfig):
    """(target, regressor matrix) on the scale the model is fit on."""
    if cfg.link == "log":
        logf = to_log_frame(
            frame, cfg.zero_policy,
            epsilon=cfg.floor_epsilon if cfg.zero_policy == "floor" else None,
        )
        return logf.log_response, logf.log_regressors
    return frame.response.copy(), frame.regressors.copy()


def build_structure(frame: TimeSeriesFrame, cfg: RunConfig):
    """Returns (inputs, hyper, structure dict for the fit document)."""
    T = frame.n_times
    target, X = model_scale_arrays(frame, cfg)
    specs = fourier_specs(cfg)
    seasonal = fourier_design(T, specs)
    grid_lev = _component_grid(T, cfg.knot_count_lev, cfg.knot_distance_lev, cfg.knot_anchor)
    grid_seas = _component_grid(T, cfg.knot_count_seas, cfg.knot_distance_seas, cfg.knot_anchor)
    grid_reg = _component_grid(T, cfg.knot_count_reg, cfg.knot_distance_reg, cfg.knot_anchor)
    rho = cfg.rho if cfg.rho > 0 else _auto_rho(grid_reg, T)
    design = ModelDesign(
        regressors=X,
        seasonal=seasonal.matrix,
        k_lev=kernel_matrix(grid_lev, "level", n_times=T),
        k_seas=kernel_matrix(grid_seas, "level", n_times=T),
        k_reg=kernel_matrix(grid_reg, "gaussian", rho=rho, n_times=T),
        regressor_names=frame.regressor_names,
    )
    inputs = ModelInputs(design=design, target=target)
    init_scale = cfg.init_scale_lev
    if init_scale <= 0:
        init_scale = 10.0 * max(float(np.std(target)), 1e-3)
    hp = HyperParams(
        sigma_lev=cfg.sigma_lev,
        sigma_seas=cfg.sigma_seas,
        mu_pool=cfg.mu_pool,
        sigma_pool=cfg.sigma_pool,
        sigma_reg=cfg.sigma_reg,
        init_scale_lev=init_scale,
        noise_df=cfg.noise_df if cfg.noise_df > 0 else None,
        laplace_smoothing=cfg.laplace_smoothing,
    )
    structure = {
        "T": T,
        "last_date": str(frame.timestamps[-1]),
        "step_days": int(frame.step / np.timedelta64(1, "D")),
        "knots_lev": [int(v) for v in grid_lev.knot_times],
        "knots_seas": [int(v) for v in grid_seas.knot_times],
        "knots_reg": [int(v) for v in grid_reg.knot_times],
        "rho": float(rho),
        "fourier": [[s.period, s.order] for s in specs],
        "link": cfg.link,
        "zero_policy": cfg.zero_policy,
        "floor_epsilon": cfg.floor_epsilon,
        "regressor_names": list(frame.regressor_names),
    }
    return inputs, hp, structure


def calibration_terms(frame: TimeSeriesFrame, cfg: RunConfig):
    if not cfg.prior_windows.strip():
        return ()
    windows = read_prior_windows_csv(cfg.prior_windows, frame)
    return apply_prior_windows(windows, frame.regressor_names, frame.n_times)


def map_config_from(cfg: RunConfig) -> MapConfig:
    return MapConfig(
        learning_rate=cfg.map_learning_rate,
        final_learning_rate=cfg.map_final_learning_rate,
        iterations=cfg.map_iterations,
        restarts=cfg.map_restarts,
        restart_scale=cfg.map_restart_scale,
        rel_tol=cfg.map_rel_tol,
        tol_window=cfg.map_tol_window,
        seed=cfg.seed,
    )


def svi_config_from(cfg: RunConfig) -> SviConfig:
    return SviConfig(
        iterations=cfg.svi_iterations,
        samples_per_step=cfg.svi_samples,
        learning_rate=cfg.svi_learning_rate,
        final_learning_rate=cfg.svi_final_learning_rate,
        init_log_sd=cfg.svi_init_log_sd,
        seed=cfg.seed,
    )


def run_fit(frame: TimeSeriesFrame, cfg: RunConfig) -> tuple[FitResult, ModelInputs]:
    inputs, hp, structure = build_structure(frame, cfg)
    terms = calibration_terms(frame, cfg)
    snapshot = config_to_dict(cfg)
    if cfg.mode == "svi":
        fit = fit_svi(
            inputs, hp, svi_config_from(cfg), calibration=terms,
            map_config=map_config_from(cfg), run_config=snapshot,
        )
    else:
        fit = fit_map(
            inputs, hp, map_config_from(cfg), calibration=terms, run_config=snapshot
        )
    fit.structure = structure
    return fit, inputs


# -- designs from a saved fit -------------------------------------------------

def _structure_specs(structure: dict) -> tuple[FourierSpec, ...]:
    return tuple(FourierSpec(period=s, order=int(k)) for s, k in structure["fourier"])


def training_design(structure: dict, frame: TimeSeriesFrame,
                    cfg: RunConfig) -> ModelDesign:
    """Rebuild the rows-1..T design of a saved fit from the original data."""
    T = int(structure["T"])
    if frame.n_times != T:
        raise ValidationError(
            f"data has {frame.n_times} rows but the fit was trained on {T}"
        )
    if list(frame.regressor_names) != list(structure["regressor_names"]):
        raise ValidationError("data regressor columns do not match the fit")
    _, X = model_scale_arrays(frame, _cfg_with_structure_scale(cfg, structure))
    seasonal = fourier_design(T, _structure_specs(structure))
    grid_lev = KnotGrid(np.asarray(structure["knots_lev"]), T)
    grid_seas = KnotGrid(np.asarray(structure["knots_seas"]), T)
    grid_reg = KnotGrid(np.asarray(structure["knots_reg"]), T)
    return ModelDesign(
        regressors=X,
        seasonal=seasonal.matrix,
        k_lev=kernel_matrix(grid_lev, "level", n_times=T),
        k_seas=kernel_matrix(grid_seas, "level", n_times=T),
        k_reg=kernel_matrix(grid_reg, "gaussian", rho=structure["rho"], n_times=T),
        regressor_names=frame.regressor_names,
    )


def _cfg_with_structure_scale(cfg: RunConfig, structure: dict) -> RunConfig:
    return dataclasses.replace(
        cfg,
        link=structure["link"],
        zero_policy=structure["zero_policy"],
        floor_epsilon=structure["floor_epsilon"],
    )


def forecast_design(structure: dict, future_regressors: np.ndarray,
                    horizon: int) -> ModelDesign:
    """Design covering only the forecast rows T+1 .. T+horizon."""
    T = int(structure["T"])
    if horizon < 1:
        raise ValidationError("horizon must be >= 1 for a forecast design")
    x = np.asarray(future_regressors, dtype=float)
    P = len(structure["regressor_names"])
    if x.shape != (horizon, P):
        raise ValidationError(
            f"future regressors shape {x.shape} does not match ({horizon}, {P})"
        )
    if structure["link"] == "log":
        eps = structure["floor_epsilon"] if structure["zero_policy"] == "floor" else None
        x = transform_regressors(x, structure["zero_policy"], eps)
    times = list(range(T + 1, T + horizon + 1))
    seasonal = fourier_design(T + horizon, _structure_specs(structure)).matrix[T:]
    grid_lev = KnotGrid(np.asarray(structure["knots_lev"]), T)
    grid_seas = KnotGrid(np.asarray(structure["knots_seas"]), T)
    grid_reg = KnotGrid(np.asarray(structure["knots_reg"]), T)
    return ModelDesign(
        regressors=x,
        seasonal=seasonal,
        k_lev=kernel_matrix(grid_lev, "level", times=times),
        k_seas=kernel_matrix(grid_seas, "level", times=times),
        k_reg=kernel_matrix(grid_reg, "gaussian", rho=structure["rho"], times=times),
        regressor_names=tuple(structure["regressor_names"]),
    )


def predict_from_fit(fit: FitResult, future_regressors: np.ndarray,
                     horizon: int) -> np.ndarray:
    if horizon == 0:
        return np.zeros(0)
    design = forecast_design(fit.structure, future_regressors, horizon)
    return predict(fit.params, design, horizon, link=fit.structure["link"])


def forecast_quantiles(fit: FitResult, future_regressors: np.ndarray, horizon: int,
                       levels, n_draws: int, seed: int = 0) -> dict[float, np.ndarray]:
    """Empirical forecast quantiles from variational draws."""
    if not fit.has_variational:
        raise ValidationError("forecast quantiles need an SVI fit, this one is MAP-only")
    if horizon == 0:
        return {float(q): np.zeros(0) for q in levels}
    design = forecast_design(fit.structure, future_regressors, horizon)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    sd = np.exp(fit.variational_log_sd)
    link = fit.structure["link"]
    sims = np.empty((n_draws, horizon))
    for s in range(n_draws):
        theta = fit.variational_mean + sd * rng.standard_normal(fit.packing.dim)
        sims[s] = predict(fit.packing.unpack(theta), design, horizon, link=link)
    return {float(q): np.quantile(sims, q, axis=0) for q in levels}


def forecaster_from_config(cfg: RunConfig):
    """Expanding-window forecaster: refits per split with the split seed."""

    def forecaster(train: TimeSeriesFrame, horizon: int,
                   future_regressors: np.ndarray, seed: int) -> np.ndarray:
        split_cfg = dataclasses.replace(cfg, seed=seed)
        fit, _ = run_fit(train, split_cfg)
        return predict_from_fit(fit, future_regressors, horizon)

    return forecaster


def backtest_plan_from(cfg: RunConfig) -> BacktestPlan:
    return BacktestPlan(
        horizon=cfg.backtest_horizon,
        splits=cfg.backtest_splits,
        min_train=cfg.backtest_min_train,
        stride=cfg.backtest_stride if cfg.backtest_stride > 0 else None,
    )


def run_backtest(frame: TimeSeriesFrame, cfg: RunConfig) -> MetricReport:
    return backtest(frame, forecaster_from_config(cfg), backtest_plan_from(cfg),
                    root_seed=cfg.seed)


# -- file plumbing ------------------------------------------------------------

def read_future_csv(path: str, structure: dict, horizon: int,
                    date_col: str = "date") -> np.ndarray:
    """Read >= horizon rows of future regressor values, checking the dates
    continue the training calendar."""
    names = list(structure["regressor_names"])
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        have = set(reader.fieldnames or ())
        missing = [c for c in [date_col, *names] if c not in have]
        if missing:
            raise ValidationError(f"future regressors file missing columns: {missing}")
        rows = list(reader)
    if len(rows) < horizon:
        raise ValidationError(
            f"horizon {horizon} exceeds the {len(rows)} supplied future rows"
        )
    step = np.timedelta64(int(structure["step_days"]), "D")
    expected = np.datetime64(structure["last_date"], "D") + step
    x = np.empty((horizon, len(names)))
    for r in range(horizon):
        raw_date = rows[r][date_col].strip()
        try:
            date = np.datetime64(raw_date, "D")
        except ValueError:
            raise ValidationError(f"unparsable date {raw_date!r} in future row {r + 1}") from None
        if date != expected:
            raise ValidationError(
                f"future row {r + 1} has date {date}, expected {expected}"
            )
        expected = date + step
        for j, c in enumerate(names):
            try:
                x[r, j] = float(rows[r][c])
            except ValueError:
                raise ValidationError(
                    f"unparsable value in column {c!r}, future row {r + 1}"
                ) from None
    return x


def forecast_dates(structure: dict, horizon: int) -> np.ndarray:
    step = np.timedelta64(int(structure["step_days"]), "D")
    start = np.datetime64(structure["last_date"], "D") + step
    return start + step * np.arange(horizon)


def write_forecast_csv(path: str, structure: dict, point: np.ndarray,
                       quantiles: dict[float, np.ndarray] | None = None) -> None:
    quantiles = quantiles or {}
    levels = sorted(quantiles)
    dates = forecast_dates(structure, point.size)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "forecast", *(f"q_{q:g}" for q in levels)])
        for t in range(point.size):
            row = [str(dates[t]), repr(float(point[t]))]
            row += [repr(float(quantiles[q][t])) for q in levels]
            writer.writerow(row)


def input_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def run_manifest(cfg: RunConfig, command: str, data_path: str | None) -> dict:
    return {
        "command": command,
        "seed": cfg.seed,
        "config": config_to_dict(cfg),
        "input_sha256": None if data_path is None else input_digest(data_path),
        "versions": {
            "package": __version__,
            "numpy": np.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
    }


def write_manifest(manifest: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
