"""Forecast accuracy metrics and their aggregation across runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

__all__ = ["MetricSummary", "MetricsReport", "rmse", "mase", "hits", "aggregate"]


def _pair(forecasts, actuals):
    f = np.asarray(forecasts, dtype=np.float64).ravel()
    a = np.asarray(actuals, dtype=np.float64).ravel()
    if f.size == 0:
        raise ConfigError("metrics need at least one forecast")
    if f.shape != a.shape:
        raise ConfigError(f"forecasts ({f.size}) and actuals ({a.size}) differ in length")
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(a))):
        raise DataError("metrics received non-finite values")
    return f, a


def rmse(forecasts, actuals) -> float:
    f, a = _pair(forecasts, actuals)
    return float(np.sqrt(np.mean((f - a) ** 2)))


def mase(forecasts, actuals, naive_forecasts) -> float:
    """Mean absolute error scaled by the naive forecast's on the same window.

    The naive forecast of x(t) is x(t-1), so feeding it here gives exactly 1
    by construction.
    """
    f, a = _pair(forecasts, actuals)
    nv, _ = _pair(naive_forecasts, actuals)
    denom = float(np.mean(np.abs(nv - a)))
    if denom == 0.0:
        raise DataError("naive forecast is exact on this window; MASE is undefined")
    return float(np.mean(np.abs(f - a))) / denom


def hits(forecasts, actuals) -> float:
    """Fraction of positions where forecast and actual share a sign.

    Zero counts as positive, so a zero forecast scores a hit exactly when
    the actual is nonnegative.
    """
    f, a = _pair(forecasts, actuals)
    return float(np.mean((f >= 0.0) == (a >= 0.0)))


@dataclass(frozen=True)
class MetricSummary:
    """Mean and population standard deviation over a set of runs."""

    mean: float
    std: float
    values: tuple


def aggregate(values) -> MetricSummary:
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ConfigError("cannot aggregate zero values")
    return MetricSummary(
        mean=float(arr.mean()), std=float(arr.std()), values=tuple(float(v) for v in arr)
    )


@dataclass(frozen=True)
class MetricsReport:
    """Aggregated accuracy of one model on one test window.

    ``scale`` documents what the numbers were computed on ("original" after
    undoing normalization, "normalized" otherwise); RMSE depends on it, MASE
    and HITS carry their scale conventions in their definitions.
    """

    rmse: MetricSummary
    mase: MetricSummary
    hits: MetricSummary
    n_points: int
    scale: str = "normalized"
