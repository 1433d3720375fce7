"""Naive and (vector) autoregressive baselines.

The autoregression predicts each feature from ``order`` lags of every
feature plus an intercept, fit jointly by least squares on a shared design
matrix through an orthogonal decomposition (no normal equations, no silent
pseudo-inverse: a rank-deficient design is an error). One model class covers
the univariate and the multivariate case.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError, DataError

AR_CHECKPOINT_VERSION = 1

__all__ = [
    "ARModel",
    "fit_ar",
    "predict_ar",
    "forecast_ar",
    "predict_naive",
    "save_ar",
    "load_ar",
]


@dataclass
class ARModel:
    """Fitted autoregression.

    ``coefficients`` has shape (num_features, num_features * order + 1):
    column 0 is the intercept, then the lag-1 coefficients for every feature,
    then lag 2, and so on.
    """

    order: int
    num_features: int
    coefficients: np.ndarray


def _as_matrix(series) -> np.ndarray:
    arr = np.asarray(series, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise DataError("series must be one series or a (time, features) matrix")
    if not np.all(np.isfinite(arr)):
        raise DataError("series contains non-finite values")
    return arr


def _design_row(window: np.ndarray, order: int) -> np.ndarray:
    """[1, lag-1 features, lag-2 features, ...] for the window's last rows."""
    lags = [window[-i] for i in range(1, order + 1)]
    return np.concatenate([[1.0], np.concatenate(lags)])


def fit_ar(series, order: int) -> ARModel:
    """Least-squares fit of an order-p (vector) autoregression."""
    if order < 1:
        raise ConfigError(f"autoregression order must be >= 1, got {order}")
    data = _as_matrix(series)
    n, m = data.shape
    rows = n - order
    cols = m * order + 1
    if rows < cols:
        raise DataError(
            f"series of length {n} is too short to fit order {order} "
            f"({rows} equations for {cols} unknowns)"
        )
    design = np.empty((rows, cols))
    for t in range(rows):
        design[t] = _design_row(data[: order + t], order)
    targets = data[order:]
    coeffs, _, rank, _ = np.linalg.lstsq(design, targets, rcond=None)
    if rank < cols:
        raise DataError(
            f"rank-deficient design (rank {rank} of {cols}): the series does not "
            "determine the coefficients (constant or collinear inputs)"
        )
    return ARModel(order=order, num_features=m, coefficients=coeffs.T)


def predict_ar(model: ARModel, window) -> np.ndarray:
    """One-step prediction for all features from the trailing lags."""
    data = _as_matrix(window)
    if data.shape[1] != model.num_features:
        raise ConfigError(
            f"window has {data.shape[1]} features, model expects {model.num_features}"
        )
    if data.shape[0] < model.order:
        raise ConfigError(
            f"window of length {data.shape[0]} is shorter than the order {model.order}"
        )
    row = _design_row(data, model.order)
    out = model.coefficients @ row
    return float(out[0]) if np.isscalar(window[0]) else out


def forecast_ar(model: ARModel, window, steps: int) -> np.ndarray:
    """Iterated multi-step forecast, feeding predictions back as lags."""
    if steps < 1:
        raise ConfigError(f"forecast steps must be >= 1, got {steps}")
    data = _as_matrix(window)
    if data.shape[0] < model.order:
        raise ConfigError(
            f"window of length {data.shape[0]} is shorter than the order {model.order}"
        )
    out = np.empty((steps, model.num_features))
    buf = data[-model.order:]
    for i in range(steps):
        out[i] = model.coefficients @ _design_row(buf, model.order)
        buf = np.vstack([buf[1:], out[i]])
    return out


def predict_naive(history) -> float:
    """The last observed value; the reference point for MASE."""
    arr = np.asarray(history, dtype=np.float64)
    if arr.size < 1:
        raise ConfigError("naive prediction needs at least one observation")
    return float(arr.ravel()[-1])


def save_ar(model: ARModel, path) -> None:
    doc = {
        "format_version": AR_CHECKPOINT_VERSION,
        "kind": "autoregression",
        "order": model.order,
        "num_features": model.num_features,
        "coefficients": model.coefficients.ravel().tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_ar(path) -> ARModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if doc.get("format_version") != AR_CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {doc.get('format_version')!r}"
        )
    if doc.get("kind") != "autoregression":
        raise CheckpointError(
            f"checkpoint holds a {doc.get('kind')!r} model, expected 'autoregression'"
        )
    try:
        order = int(doc["order"])
        m = int(doc["num_features"])
        coeffs = np.asarray(doc["coefficients"], dtype=np.float64).reshape(m, m * order + 1)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed autoregression checkpoint: {exc}") from None
    return ARModel(order=order, num_features=m, coefficients=coeffs)
