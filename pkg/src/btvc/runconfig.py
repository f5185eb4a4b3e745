"""Flat, typed run configuration with a lossless text representation.

The file format is one `key = value` pair per line; `#` starts a comment.
Every key has a default except `data`, which names the input CSV and is
usually supplied as a flag. Precedence is flag > file > default. Field
types are inferred from the defaults (str, int, or float); floats are
written back with repr() so a save/load cycle is bit-exact.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ValidationError
from .fourier import FourierSpec
from .timeframe import CsvSchema


@dataclass(frozen=True)
class RunConfig:
    # data and transforms
    data: str = ""
    date_col: str = "date"
    response_col: str = "y"
    regressor_cols: str = ""          # comma list; empty means all other columns
    link: str = "log"                 # log | identity
    zero_policy: str = "shift1"       # shift1 | floor
    floor_epsilon: float = 1e-6
    # structure
    fourier: str = "7:3"              # period:order pairs, comma separated; empty = none
    knot_distance_lev: int = 30
    knot_distance_seas: int = 90
    knot_distance_reg: int = 30
    knot_count_lev: int = 0           # >0 switches that component to count spacing
    knot_count_seas: int = 0
    knot_count_reg: int = 0
    knot_anchor: str = "end"          # end | start
    rho: float = 0.0                  # 0 = half the regression knot spacing
    # hyperparameters
    sigma_lev: float = 0.1
    sigma_seas: float = 0.05
    mu_pool: float = 0.0
    sigma_pool: float = 1.0
    sigma_reg: float = 0.5
    init_scale_lev: float = 0.0       # 0 = 10 * sd of the model-scale response
    noise_df: float = 0.0             # 0 = Gaussian noise
    laplace_smoothing: float = 0.0
    # inference
    mode: str = "map"                 # map | svi
    draws: int = 300
    quantiles: str = "0.025,0.5,0.975"
    prior_windows: str = ""           # path to a calibration CSV
    seed: int = 0
    out: str = "out"
    map_learning_rate: float = 0.05
    map_final_learning_rate: float = 1e-6
    map_iterations: int = 10000
    map_restarts: int = 3
    map_restart_scale: float = 0.3
    map_rel_tol: float = 1e-8
    map_tol_window: int = 50
    svi_iterations: int = 5000
    svi_samples: int = 1
    svi_learning_rate: float = 0.02
    svi_final_learning_rate: float = 1e-4
    svi_init_log_sd: float = -3.0
    # backtest protocol
    backtest_horizon: int = 28
    backtest_splits: int = 6
    backtest_min_train: int = 1
    backtest_stride: int = 0          # 0 = horizon
    # simulation
    sim_kind: str = "rw"              # rw | sparse | multiplicative
    sim_length: int = 300
    sim_channels: int = 3
    sim_trend_step_sd: float = 0.02
    sim_coef_step_sd: float = 0.03
    sim_coef_init: str = "0.5"        # one value, or one per channel
    sim_covariate_mean: float = 3.0
    sim_covariate_sd: float = 1.0
    sim_noise_sd: float = 0.3
    sim_reflect: str = "yes"          # yes | no
    sim_sparsity: str = ""            # channel:start:end:prob (channel 1-based)
    sim_start_date: str = "2020-01-01"
    sim_base_level: float = 4.6
    sim_seasonal_cos: float = 0.10
    sim_seasonal_sin: float = 0.06
    sim_period: float = 7.0
    sim_log_spend_mean: float = 0.0
    sim_log_spend_sd: float = 0.5


_CHOICES = {
    "link": ("log", "identity"),
    "zero_policy": ("shift1", "floor"),
    "knot_anchor": ("end", "start"),
    "mode": ("map", "svi"),
    "sim_kind": ("rw", "sparse", "multiplicative"),
    "sim_reflect": ("yes", "no"),
}


def _field_types() -> dict[str, type]:
    return {f.name: type(f.default) for f in dataclasses.fields(RunConfig)}


def parse_value(key: str, raw: str):
    types = _field_types()
    if key not in types:
        raise ValidationError(f"unknown config key {key!r}")
    kind = types[key]
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ValidationError(
            f"config key {key!r} expects {kind.__name__}, got {raw!r}"
        ) from None
    return raw


def validate_config(cfg: RunConfig) -> RunConfig:
    for key, allowed in _CHOICES.items():
        if getattr(cfg, key) not in allowed:
            raise ValidationError(
                f"config key {key!r} must be one of {'|'.join(allowed)}, "
                f"got {getattr(cfg, key)!r}"
            )
    fourier_specs(cfg)
    quantile_levels(cfg)
    coef_init_values(cfg)
    sparsity_fields(cfg)
    return cfg


def merge_config(base: RunConfig, overrides: dict[str, str]) -> RunConfig:
    values = {key: parse_value(key, raw) for key, raw in overrides.items()}
    return validate_config(dataclasses.replace(base, **values))


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValidationError(f"config line {lineno} is not key = value: {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key in out:
            raise ValidationError(f"duplicate config key {key!r} at line {lineno}")
        out[key] = raw.strip()
    return out


def load_config(path: str, base: RunConfig | None = None) -> RunConfig:
    with open(path) as fh:
        text = fh.read()
    return merge_config(base or RunConfig(), parse_config_text(text))


def config_to_text(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(cfg, f.name)
        rendered = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{f.name} = {rendered}")
    return "\n".join(lines) + "\n"


def save_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(config_to_text(cfg))


def config_to_dict(cfg: RunConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in dataclasses.fields(RunConfig)}


def config_from_dict(doc: dict) -> RunConfig:
    types = _field_types()
    unknown = sorted(set(doc) - set(types))
    if unknown:
        raise ValidationError(f"unknown config keys: {unknown}")
    return validate_config(RunConfig(**doc))


# -- derived views -----------------------------------------------------------

def fourier_specs(cfg: RunConfig) -> tuple[FourierSpec, ...]:
    if not cfg.fourier.strip():
        return ()
    specs = []
    for part in cfg.fourier.split(","):
        part = part.strip()
        if ":" not in part:
            raise ValidationError(
                f"fourier entry {part!r} is not period:order"
            )
        period_s, _, order_s = part.partition(":")
        try:
            specs.append(FourierSpec(period=float(period_s), order=int(order_s)))
        except ValueError:
            raise ValidationError(f"unparsable fourier entry {part!r}") from None
    return tuple(specs)


def quantile_levels(cfg: RunConfig) -> tuple[float, ...]:
    if not cfg.quantiles.strip():
        return ()
    try:
        levels = tuple(float(p) for p in cfg.quantiles.split(","))
    except ValueError:
        raise ValidationError(f"unparsable quantiles {cfg.quantiles!r}") from None
    if any(not 0.0 < q < 1.0 for q in levels):
        raise ValidationError("quantile levels must lie in (0, 1)")
    return levels


def csv_schema(cfg: RunConfig) -> CsvSchema:
    cols = None
    if cfg.regressor_cols.strip():
        cols = tuple(c.strip() for c in cfg.regressor_cols.split(","))
    return CsvSchema(
        date_col=cfg.date_col, response_col=cfg.response_col, regressor_cols=cols
    )


def coef_init_values(cfg: RunConfig) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in cfg.sim_coef_init.split(","))
    except ValueError:
        raise ValidationError(f"unparsable sim_coef_init {cfg.sim_coef_init!r}") from None
    if len(values) == 1:
        values = values * cfg.sim_channels
    if len(values) != cfg.sim_channels:
        raise ValidationError(
            f"sim_coef_init needs 1 or {cfg.sim_channels} values, got {len(values)}"
        )
    return values


def sparsity_fields(cfg: RunConfig) -> tuple[int, int, int, float] | None:
    if not cfg.sim_sparsity.strip():
        return None
    parts = cfg.sim_sparsity.split(":")
    if len(parts) != 4:
        raise ValidationError(
            f"sim_sparsity must be channel:start:end:prob, got {cfg.sim_sparsity!r}"
        )
    try:
        channel, start, end = int(parts[0]), int(parts[1]), int(parts[2])
        prob = float(parts[3])
    except ValueError:
        raise ValidationError(f"unparsable sim_sparsity {cfg.sim_sparsity!r}") from None
    return channel, start, end, prob
