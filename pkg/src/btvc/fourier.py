"""Fourier seasonality design matrices.

For a period S and order k the pair cos(2*k*pi*t/S), sin(2*k*pi*t/S) is
generated per time step; stacking orders 1..k_max for each period gives the
seasonal covariate matrix. t is the 1-based integer time index, so columns
are periodic in t rather than phase-aligned to the calendar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class FourierSpec:
    """One seasonal component: period S (in time steps) and Fourier order."""

    period: float
    order: int

    def __post_init__(self):
        if self.period <= 1:
            raise ValidationError(f"period must be > 1, got {self.period}")
        if self.order < 1:
            raise ValidationError(f"order must be >= 1, got {self.order}")
        if 2 * self.order >= self.period:
            raise ValidationError(
                f"aliasing: 2*order={2 * self.order} must be < period={self.period}"
            )


@dataclass(frozen=True)
class SeasonalDesign:
    """T x (2 * sum of orders) matrix of bounded seasonal covariates."""

    matrix: np.ndarray
    specs: tuple[FourierSpec, ...]

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "specs", tuple(self.specs))
        expected = 2 * sum(s.order for s in self.specs)
        if m.ndim != 2 or m.shape[1] != expected:
            raise ValidationError(f"design shape {m.shape} does not match specs ({expected} cols)")
        if m.size and np.max(np.abs(m)) > 1.0 + 1e-12:
            raise ValidationError("seasonal design entries must lie in [-1, 1]")

    @property
    def n_cols(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def column_names(self) -> tuple[str, ...]:
        names = []
        for s in self.specs:
            for k in range(1, s.order + 1):
                names.append(f"cos_{s.period:g}_{k}")
                names.append(f"sin_{s.period:g}_{k}")
        return tuple(names)


def fourier_design(T: int, specs: list[FourierSpec] | tuple[FourierSpec, ...]) -> SeasonalDesign:
    """Build the seasonal covariate matrix for t = 1..T.

    Column order is (spec, k, cos-then-sin). An empty spec list yields a
    T x 0 matrix so a model without seasonality needs no special casing.
    """
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    specs = tuple(specs)
    t = np.arange(1, T + 1, dtype=float)
    cols = []
    for s in specs:
        for k in range(1, s.order + 1):
            arg = 2.0 * k * np.pi * t / s.period
            cols.append(np.cos(arg))
            cols.append(np.sin(arg))
    matrix = np.column_stack(cols) if cols else np.zeros((T, 0))
    return SeasonalDesign(matrix=matrix, specs=specs)
