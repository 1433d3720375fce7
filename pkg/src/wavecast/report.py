"""Rendering of results: delimited files, a table-style text report, figures.

Everything here takes computed values and writes them somewhere; nothing in
this module trains or predicts. CSV cells use ``repr`` of Python floats so a
rerun with identical inputs produces byte-identical files. Figures go through
the Agg backend and never require a display.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigError
from .metrics import MetricsReport

__all__ = [
    "format_summary",
    "metrics_table",
    "write_metrics_csv",
    "write_forecast_csv",
    "write_trace_csv",
    "forecast_figure",
    "trace_figure",
]


def _fmt(x: float) -> str:
    return repr(float(x))


def format_summary(summary, digits: int = 5) -> str:
    """Render one metric as ``mean (std)``, the layout used in the tables."""
    return f"{summary.mean:.{digits}f} ({summary.std:.{digits}f})"


def metrics_table(rows, digits: int = 5) -> str:
    """A text table of ``mean (std)`` cells, one row per model.

    ``rows`` is a sequence of (label, report) pairs. All reports must agree
    on the number of test points; mixing windows in one table is a mistake.
    """
    rows = list(rows)
    if not rows:
        raise ConfigError("metrics_table needs at least one row")
    points = {rep.n_points for _, rep in rows}
    if len(points) > 1:
        raise ConfigError(f"reports cover different test windows: {sorted(points)}")
    header = ["model", "RMSE", "MASE", "HITS", "scale"]
    body = [
        [label, format_summary(rep.rmse, digits), format_summary(rep.mase, digits),
         format_summary(rep.hits, digits), rep.scale]
        for label, rep in rows
    ]
    widths = [max(len(r[c]) for r in [header] + body) for c in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in body:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    lines.append(f"(test points: {points.pop()})")
    return "\n".join(lines) + "\n"


def write_metrics_csv(path, rows) -> None:
    """One line per (label, report) pair and metric: label, metric, scale,
    mean, std, per-seed values."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "metric", "scale", "mean", "std", "n_points", "per_seed"])
        for label, rep in rows:
            for metric_name in ("rmse", "mase", "hits"):
                s = getattr(rep, metric_name)
                writer.writerow(
                    [label, metric_name, rep.scale, _fmt(s.mean), _fmt(s.std),
                     rep.n_points, ";".join(_fmt(v) for v in s.values)]
                )


def write_forecast_csv(path, times, actuals, forecasts: dict[str, np.ndarray]) -> None:
    """Columns: t, actual, then one forecast column per label."""
    actuals = np.asarray(actuals, dtype=np.float64)
    labels = list(forecasts)
    cols = [np.asarray(forecasts[k], dtype=np.float64) for k in labels]
    for label, col in zip(labels, cols):
        if col.shape != actuals.shape:
            raise ConfigError(
                f"forecast column {label!r} has {col.size} values for {actuals.size} actuals"
            )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "actual"] + labels)
        for i, t in enumerate(times):
            writer.writerow([t, _fmt(actuals[i])] + [_fmt(c[i]) for c in cols])


def write_trace_csv(path, trace) -> None:
    """Loss trace as (iteration, objective) pairs."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "objective"])
        for i, value in enumerate(np.asarray(trace, dtype=np.float64)):
            writer.writerow([i, _fmt(value)])


def forecast_figure(path, times, actuals, forecasts: dict[str, np.ndarray],
                    title: str = "", train_boundary=None) -> None:
    """Plot forecasts against the actual series over the test window."""
    fig, ax = plt.subplots(figsize=(9, 4.5))
    ax.plot(times, np.asarray(actuals, dtype=np.float64), color="black",
            linewidth=1.2, label="actual")
    for label, values in forecasts.items():
        ax.plot(times, np.asarray(values, dtype=np.float64), linewidth=0.9, label=label)
    if train_boundary is not None:
        ax.axvline(train_boundary, color="gray", linestyle=":", linewidth=1.0)
    ax.set_xlabel("t")
    ax.set_ylabel("value")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Date": None})
    plt.close(fig)


def trace_figure(path, traces: dict[int, np.ndarray], title: str = "") -> None:
    """Plot per-seed training objectives on a log scale."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for seed, trace in traces.items():
        ax.plot(np.asarray(trace, dtype=np.float64), linewidth=0.9, label=f"seed {seed}")
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Date": None})
    plt.close(fig)
