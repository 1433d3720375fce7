"""Data supply: chaotic benchmark generation, returns, scaling, CSV, splits.

Normalization statistics are computed on the training window only, so
nothing the model sees at fit time depends on test values; they are either
pooled over the target and every condition series or taken per series.
Walk-forward splits slide by the test length, giving consecutive
non-overlapping test windows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericError

__all__ = [
    "LorenzConfig",
    "SeriesBundle",
    "SplitPlan",
    "Split",
    "lorenz_generate",
    "compute_returns",
    "normalize",
    "denormalize",
    "load_csv",
    "make_splits",
]


@dataclass(frozen=True)
class LorenzConfig:
    """Parameters of the three-variable convection system and its sampling."""

    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    x0: float = 0.0
    y0: float = 1.0
    z0: float = 1.05
    dt: float = 0.01
    num_points: int = 1500
    # The classical system has dZ/dt = XY - beta*Z. Setting as_printed uses
    # XY - beta*Y instead, matching a variant that appears in print; the
    # canonical form is the default.
    as_printed: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.num_points < 2:
            raise ConfigError(f"num_points must be >= 2, got {self.num_points}")


def lorenz_generate(config: LorenzConfig) -> np.ndarray:
    """Integrate with classical fourth-order Runge-Kutta at fixed step dt.

    Returns an array of shape (num_points, 3) with columns X, Y, Z; row 0 is
    the initial condition. A non-finite state aborts with the step index.
    """
    sigma, rho, beta = config.sigma, config.rho, config.beta
    as_printed = config.as_printed

    def rhs(s):
        x, y, z = s
        dz = x * y - beta * (y if as_printed else z)
        return np.array([sigma * (y - x), x * (rho - z) - y, dz])

    dt = config.dt
    out = np.empty((config.num_points, 3))
    state = np.array([config.x0, config.y0, config.z0], dtype=np.float64)
    out[0] = state
    with np.errstate(over="ignore", invalid="ignore"):  # blow-up is reported below
        for step in range(1, config.num_points):
            k1 = rhs(state)
            k2 = rhs(state + 0.5 * dt * k1)
            k3 = rhs(state + 0.5 * dt * k2)
            k4 = rhs(state + dt * k3)
            state = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(state)):
                raise NumericError(f"integration blew up at step {step} (dt={dt})")
            out[step] = state
    return out


@dataclass
class SeriesBundle:
    """A target series with its condition series and, once normalized, the
    statistics needed to undo the scaling."""

    target: np.ndarray
    conditions: list = field(default_factory=list)
    target_name: str = "target"
    condition_names: list = field(default_factory=list)
    mean: float | None = None
    scale: float | None = None
    cond_means: list = field(default_factory=list)
    cond_scales: list = field(default_factory=list)

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=np.float64)
        self.conditions = [np.asarray(c, dtype=np.float64) for c in self.conditions]
        n = self.target.size
        for c in self.conditions:
            if c.size != n:
                raise DataError(
                    f"condition series length {c.size} does not match target length {n}"
                )

    @property
    def length(self) -> int:
        return self.target.size

    def matrix(self) -> np.ndarray:
        """(time, 1 + num_conditions) view: target first, conditions after."""
        return np.column_stack([self.target] + self.conditions)


def compute_returns(prices) -> np.ndarray:
    """Simple returns (P(t) - P(t-1)) / P(t-1)."""
    p = np.asarray(prices, dtype=np.float64)
    if p.ndim != 1 or p.size < 2:
        raise DataError("returns need a one-dimensional series of at least 2 prices")
    if not np.all(np.isfinite(p)):
        raise DataError("price series contains non-finite values")
    base = p[:-1]
    if np.any(base == 0.0):
        where = int(np.nonzero(base == 0.0)[0][0])
        raise DataError(f"zero price at position {where} makes the next return undefined")
    return (p[1:] - base) / base


def normalize(bundle: SeriesBundle, train_len: int, mode: str = "pooled") -> SeriesBundle:
    """Standardize every series with statistics from the train window only.

    ``mode="pooled"`` uses one mean/std over the target and all conditions
    together, which keeps returns of related instruments on a common scale.
    ``mode="per_series"`` standardizes each series with its own statistics;
    use it when the series live on very different scales (the convection
    coordinates, for instance, where one component is offset by ~24 and
    pooled statistics would leave every series badly off-center).
    """
    if not (1 <= train_len <= bundle.length):
        raise ConfigError(
            f"train_len must be in [1, {bundle.length}], got {train_len}"
        )
    if mode == "pooled":
        pooled = np.concatenate(
            [bundle.target[:train_len]] + [c[:train_len] for c in bundle.conditions]
        )
        mean = float(pooled.mean())
        scale = float(pooled.std())
        if scale == 0.0 or not np.isfinite(scale):
            raise DataError("train window is constant; cannot standardize")
        cond_stats = [(mean, scale)] * len(bundle.conditions)
    elif mode == "per_series":
        def stats(series, name):
            m = float(series[:train_len].mean())
            s = float(series[:train_len].std())
            if s == 0.0 or not np.isfinite(s):
                raise DataError(f"train window of {name!r} is constant; cannot standardize")
            return m, s

        mean, scale = stats(bundle.target, bundle.target_name)
        names = bundle.condition_names or [f"condition{i}" for i in range(len(bundle.conditions))]
        cond_stats = [stats(c, n) for c, n in zip(bundle.conditions, names)]
    else:
        raise ConfigError(f"unknown normalization mode {mode!r}")
    return SeriesBundle(
        target=(bundle.target - mean) / scale,
        conditions=[(c - m) / s for c, (m, s) in zip(bundle.conditions, cond_stats)],
        target_name=bundle.target_name,
        condition_names=list(bundle.condition_names),
        mean=mean,
        scale=scale,
        cond_means=[m for m, _ in cond_stats],
        cond_scales=[s for _, s in cond_stats],
    )


def denormalize(values, bundle: SeriesBundle) -> np.ndarray:
    """Map normalized values back to the original scale of ``bundle``."""
    if bundle.mean is None or bundle.scale is None:
        raise ConfigError("bundle carries no normalization statistics")
    return np.asarray(values, dtype=np.float64) * bundle.scale + bundle.mean


def load_csv(path, target: str, conditions=(), forward_fill: bool = False) -> SeriesBundle:
    """Load named columns from a headered CSV of numbers.

    Blank cells are an error unless ``forward_fill`` is set, in which case
    each takes the previous row's value (nothing can fill a blank first row).
    Errors locate the offending row and column.
    """
    path = Path(path)
    conditions = list(conditions)
    try:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path} is empty") from None
            header = [h.strip() for h in header]
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None

    wanted = [target] + conditions
    for name in wanted:
        if name not in header:
            raise ConfigError(
                f"column {name!r} not found in {path.name} (available: {', '.join(header)})"
            )
    if len(set(wanted)) != len(wanted):
        raise ConfigError(f"duplicate column selection: {wanted}")
    index = {name: header.index(name) for name in wanted}

    columns = {name: np.empty(len(rows)) for name in wanted}
    for r, row in enumerate(rows):
        line = r + 2  # 1-based file line; the header is line 1
        if len(row) != len(header):
            raise DataError(
                f"{path.name} line {line}: expected {len(header)} cells, found {len(row)}"
            )
        for name, col in index.items():
            cell = row[col].strip()
            if cell == "":
                if not forward_fill:
                    raise DataError(
                        f"{path.name} line {line}, column {name!r}: missing value "
                        "(rerun with forward fill to impute)"
                    )
                if r == 0:
                    raise DataError(
                        f"{path.name} line {line}, column {name!r}: nothing precedes "
                        "a blank first row"
                    )
                columns[name][r] = columns[name][r - 1]
                continue
            try:
                columns[name][r] = float(cell)
            except ValueError:
                raise DataError(
                    f"{path.name} line {line}, column {name!r}: cannot parse {cell!r}"
                ) from None
    if len(rows) == 0:
        raise DataError(f"{path.name} has a header but no data rows")
    return SeriesBundle(
        target=columns[target],
        conditions=[columns[c] for c in conditions],
        target_name=target,
        condition_names=conditions,
    )


@dataclass(frozen=True)
class SplitPlan:
    """Walk-forward layout: fit on train_len points, score on the next
    test_len, slide by test_len."""

    train_len: int = 750
    test_len: int = 350

    def __post_init__(self):
        if self.train_len < 1:
            raise ConfigError(f"train_len must be >= 1, got {self.train_len}")
        if self.test_len < 1:
            raise ConfigError(f"test_len must be >= 1, got {self.test_len}")


@dataclass(frozen=True)
class Split:
    train_start: int
    train_stop: int
    test_start: int
    test_stop: int


def make_splits(length: int, plan: SplitPlan) -> list:
    """All full walk-forward splits that fit into ``length`` points."""
    window = plan.train_len + plan.test_len
    if length < window:
        raise DataError(
            f"series of length {length} is shorter than one split "
            f"({plan.train_len} train + {plan.test_len} test)"
        )
    splits = []
    start = 0
    while start + window <= length:
        splits.append(
            Split(
                train_start=start,
                train_stop=start + plan.train_len,
                test_start=start + plan.train_len,
                test_stop=start + window,
            )
        )
        start += plan.test_len
    return splits
