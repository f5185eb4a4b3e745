"""Synthetic data generators for validation studies.

simulate_rw reproduces the additive random-walk study design: trend and
per-channel coefficients follow Gaussian walks, covariates are i.i.d.
normal, and y_t = trend_t + sum_p beta_{t,p} x_{t,p} + noise_t on the raw
scale (no log link). simulate_sparse zeroes one channel's spend over a
window. simulate_multiplicative generates from the multiplicative form the
model actually fits (exp of trend + seasonality + elasticity-weighted log
spends) for end-to-end forecast checks.

Draw order per generator is fixed and documented on the function; the
sparsity mask uses a separately spawned stream so a zero-probability mask
is bit-identical to the unmasked dataset.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .timeframe import TimeSeriesFrame


@dataclass(frozen=True)
class SparsitySpec:
    """Zero out one channel's spend on [start, end] (1-based, inclusive)
    with the given per-step probability."""

    channel: int
    start: int
    end: int
    zero_prob: float = 1.0

    def __post_init__(self):
        if self.channel < 0:
            raise ValidationError("sparsity channel index must be >= 0")
        if self.start < 1 or self.end < self.start:
            raise ValidationError(f"bad sparsity window [{self.start}, {self.end}]")
        if not 0.0 <= self.zero_prob <= 1.0:
            raise ValidationError("zero_prob must lie in [0, 1]")


@dataclass(frozen=True)
class SimConfig:
    T: int = 300
    P: int = 3
    trend_step_sd: float = 0.02
    coef_step_sd: float = 0.03
    coef_init: float | tuple[float, ...] = 0.5
    covariate_mean: float = 3.0
    covariate_sd: float = 1.0
    noise_sd: float = 0.3
    seed: int = 0
    reflect: bool = True
    sparsity: SparsitySpec | None = None
    start_date: str = "2020-01-01"

    def __post_init__(self):
        if self.T < 2 or self.P < 1:
            raise ValidationError("need T >= 2 and P >= 1")
        for name in ("trend_step_sd", "coef_step_sd", "covariate_sd", "noise_sd"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        init = self.coef_init
        if np.isscalar(init):
            init = (float(init),) * self.P
        else:
            init = tuple(float(v) for v in init)
        if len(init) != self.P:
            raise ValidationError(f"coef_init needs {self.P} entries, got {len(init)}")
        if min(init) < 0:
            raise ValidationError("coef_init entries must be >= 0")
        object.__setattr__(self, "coef_init", init)
        if self.sparsity is not None and self.sparsity.end > self.T:
            raise ValidationError("sparsity window extends past T")
        if self.sparsity is not None and self.sparsity.channel >= self.P:
            raise ValidationError("sparsity channel index out of range")


@dataclass(frozen=True)
class SimDataset:
    frame: TimeSeriesFrame
    true_trend: np.ndarray
    true_coefficients: np.ndarray


def _walk_coefficients(init, steps, reflect):
    # sequential because reflection |prev + step| acts per step
    T, P = steps.shape
    coef = np.empty((T, P))
    prev = np.asarray(init, dtype=float)
    for t in range(T):
        prev = prev + steps[t]
        if reflect:
            prev = np.abs(prev)
        coef[t] = prev
    return coef


def _calendar(start_date: str, T: int) -> np.ndarray:
    start = np.datetime64(start_date, "D")
    return start + np.arange(T)


def _simulate_additive(config: SimConfig, sparsity: SparsitySpec | None) -> SimDataset:
    # draw order: trend steps, coefficient steps, covariates, noise
    root = np.random.SeedSequence(config.seed)
    rng = np.random.default_rng(root)
    T, P = config.T, config.P
    trend = np.cumsum(rng.normal(0.0, config.trend_step_sd, T))
    coef = _walk_coefficients(
        config.coef_init, rng.normal(0.0, config.coef_step_sd, (T, P)), config.reflect
    )
    x = rng.normal(config.covariate_mean, config.covariate_sd, (T, P))
    noise = rng.normal(0.0, config.noise_sd, T)
    if sparsity is not None:
        mask_rng = np.random.default_rng(root.spawn(1)[0])
        rows = np.arange(sparsity.start - 1, sparsity.end)
        u = mask_rng.uniform(size=rows.size)
        x[rows[u < sparsity.zero_prob], sparsity.channel] = 0.0
    y = trend + (coef * x).sum(axis=1) + noise
    frame = TimeSeriesFrame(
        timestamps=_calendar(config.start_date, T),
        response=y,
        regressors=x,
        regressor_names=tuple(f"x{p + 1}" for p in range(P)),
        allow_negative_regressors=True,
    )
    return SimDataset(frame=frame, true_trend=trend, true_coefficients=coef)


def simulate_rw(config: SimConfig) -> SimDataset:
    """Additive random-walk dataset; see the module docstring for the form."""
    if config.sparsity is not None:
        raise ValidationError("config has a sparsity spec; use simulate_sparse")
    return _simulate_additive(config, None)


def simulate_sparse(config: SimConfig) -> SimDataset:
    """simulate_rw plus a zeroed spend window on one channel."""
    if config.sparsity is None:
        raise ValidationError("simulate_sparse needs config.sparsity")
    return _simulate_additive(config, config.sparsity)


@dataclass(frozen=True)
class MultiplicativeSimConfig:
    """Generator matching the multiplicative model form.

    ln y_t = base_level + trend walk + weekly seasonal pattern
             + sum_p beta_{t,p} ln x_{t,p} + noise, with lognormal spends.
    """

    T: int = 420
    P: int = 3
    base_level: float = 4.6
    trend_step_sd: float = 0.005
    coef_step_sd: float = 0.005
    coef_init: float | tuple[float, ...] = 0.25
    seasonal_cos: float = 0.10
    seasonal_sin: float = 0.06
    period: float = 7.0
    log_spend_mean: float = 0.0
    log_spend_sd: float = 0.5
    noise_sd: float = 0.05
    seed: int = 0
    start_date: str = "2020-01-01"

    def __post_init__(self):
        if self.T < 2 or self.P < 1:
            raise ValidationError("need T >= 2 and P >= 1")
        for name in ("trend_step_sd", "coef_step_sd", "log_spend_sd", "noise_sd"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.period <= 1:
            raise ValidationError("period must be > 1")
        init = self.coef_init
        if np.isscalar(init):
            init = (float(init),) * self.P
        else:
            init = tuple(float(v) for v in init)
        if len(init) != self.P:
            raise ValidationError(f"coef_init needs {self.P} entries, got {len(init)}")
        object.__setattr__(self, "coef_init", init)


def simulate_multiplicative(config: MultiplicativeSimConfig) -> SimDataset:
    """Multiplicative-scale dataset; spends are strictly positive.

    Draw order: trend steps, coefficient steps, log spends, noise.
    true_trend stores base_level + walk (the log-scale level component).
    """
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    T, P = config.T, config.P
    trend = config.base_level + np.cumsum(rng.normal(0.0, config.trend_step_sd, T))
    coef = _walk_coefficients(
        config.coef_init, rng.normal(0.0, config.coef_step_sd, (T, P)), True
    )
    log_x = rng.normal(config.log_spend_mean, config.log_spend_sd, (T, P))
    noise = rng.normal(0.0, config.noise_sd, T)
    t = np.arange(1, T + 1, dtype=float)
    arg = 2.0 * np.pi * t / config.period
    seasonal = config.seasonal_cos * np.cos(arg) + config.seasonal_sin * np.sin(arg)
    log_y = trend + seasonal + (coef * log_x).sum(axis=1) + noise
    frame = TimeSeriesFrame(
        timestamps=_calendar(config.start_date, T),
        response=np.exp(log_y),
        regressors=np.exp(log_x),
        regressor_names=tuple(f"x{p + 1}" for p in range(P)),
    )
    return SimDataset(frame=frame, true_trend=trend, true_coefficients=coef)


def write_truth_csv(dataset: SimDataset, path: str) -> None:
    """date, true trend, and per-channel true coefficients, one row per t."""
    names = dataset.frame.regressor_names
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "trend", *(f"beta_{c}" for c in names)])
        for t in range(dataset.frame.n_times):
            writer.writerow(
                [str(dataset.frame.timestamps[t]), repr(float(dataset.true_trend[t])),
                 *(repr(float(v)) for v in dataset.true_coefficients[t])]
            )
