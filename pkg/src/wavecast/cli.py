"""Command-line front end: generate data, train, evaluate, forecast.

A run directory is the unit of work. ``train`` validates the full
configuration, echoes the resolved values to ``config.json``, then fills
``checkpoints/`` and ``traces/``; ``evaluate`` and ``forecast`` read that
directory back and add ``metrics/`` and ``forecasts/``. Nothing is written
before validation passes, so a configuration error never leaves a partial
run behind.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import fit_ar, forecast_ar, load_ar, predict_ar, save_ar
from .data import (
    LorenzConfig,
    SeriesBundle,
    SplitPlan,
    compute_returns,
    denormalize,
    load_csv,
    lorenz_generate,
    make_splits,
    normalize,
)
from .errors import ConfigError, DataError, NumericError, WavecastError
from .metrics import MetricsReport, aggregate, hits, mase, rmse
from .network import (
    NetworkConfig,
    forecast_n_steps,
    load_params,
    receptive_field,
    save_params,
)
from .report import (
    forecast_figure,
    metrics_table,
    trace_figure,
    write_forecast_csv,
    write_metrics_csv,
    write_trace_csv,
)
from .training import TrainConfig, train_ensemble

MODELS = ("uwn", "cwn", "ar", "var", "naive")
NORM_MODES = {"per-series": "per_series", "pooled": "pooled"}

# Protocol defaults; flags override config-file values, which override these.
DEFAULTS = {
    "model": "uwn",
    "data": None,
    "target": None,
    "conditions": [],
    "returns": False,
    "norm": "per-series",
    "train_len": 1000,
    "test_len": 500,
    "walk_forward": False,
    "layers": 4,
    "filter_width": 2,
    "channels": 1,
    "gamma": 0.001,
    "learning_rate": 0.001,
    "iterations": 20000,
    "num_seeds": 3,
    "seed_pool": 5,
    "seed": 0,
    "jobs": 1,
    "order": 4,
}


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# Configuration resolution.
# ---------------------------------------------------------------------------

def resolve_config(args: argparse.Namespace) -> dict:
    """DEFAULTS <- config file <- explicit flags, with unknown keys rejected."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        unknown = sorted(set(raw) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys in {path}: {', '.join(unknown)}")
        cfg.update(raw)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if isinstance(cfg["conditions"], str):
        cfg["conditions"] = [c.strip() for c in cfg["conditions"].split(",") if c.strip()]
    return cfg


def validate_config(cfg: dict) -> None:
    if cfg["model"] not in MODELS:
        raise ConfigError(f"unknown model {cfg['model']!r} (choose from {', '.join(MODELS)})")
    if cfg["norm"] not in NORM_MODES:
        raise ConfigError(
            f"unknown normalization {cfg['norm']!r} (choose from {', '.join(NORM_MODES)})"
        )
    if cfg["data"] is None:
        raise ConfigError("no data file given (use --data)")
    if cfg["target"] is None:
        raise ConfigError("no target column given (use --target)")
    if cfg["model"] in ("cwn", "var") and not cfg["conditions"]:
        raise ConfigError(f"model {cfg['model']!r} needs at least one condition column")
    if cfg["model"] in ("uwn", "ar", "naive") and cfg["conditions"]:
        raise ConfigError(
            f"model {cfg['model']!r} does not take conditions; drop --cond or use cwn/var"
        )
    if not Path(cfg["data"]).exists():
        raise ConfigError(f"data file {cfg['data']} does not exist")


def load_bundle(cfg: dict) -> SeriesBundle:
    bundle = load_csv(cfg["data"], target=cfg["target"], conditions=cfg["conditions"])
    if cfg["returns"]:
        bundle = SeriesBundle(
            target=compute_returns(bundle.target),
            conditions=[compute_returns(c) for c in bundle.conditions],
            target_name=bundle.target_name,
            condition_names=list(bundle.condition_names),
        )
    return bundle


def plan_splits(cfg: dict, bundle: SeriesBundle) -> list:
    plan = SplitPlan(train_len=cfg["train_len"], test_len=cfg["test_len"])
    splits = make_splits(bundle.length, plan)
    return splits if cfg["walk_forward"] else splits[:1]


def network_config(cfg: dict) -> NetworkConfig:
    return NetworkConfig(
        layers=cfg["layers"],
        filter_width=cfg["filter_width"],
        channels=cfg["channels"],
        num_conditions=len(cfg["conditions"]) if cfg["model"] == "cwn" else 0,
        l2_gamma=cfg["gamma"],
        seed=cfg["seed"],
    )


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        iterations=cfg["iterations"],
        learning_rate=cfg["learning_rate"],
        l2_gamma=cfg["gamma"],
        num_seeds=cfg["num_seeds"],
        seed_pool=cfg["seed_pool"],
        jobs=cfg["jobs"],
    )


def normalized_split(cfg: dict, bundle: SeriesBundle, split) -> SeriesBundle:
    """The split's data, normalized with its own train-window statistics."""
    window = SeriesBundle(
        target=bundle.target[split.train_start:split.test_stop],
        conditions=[c[split.train_start:split.test_stop] for c in bundle.conditions],
        target_name=bundle.target_name,
        condition_names=list(bundle.condition_names),
    )
    return normalize(window, train_len=cfg["train_len"], mode=NORM_MODES[cfg["norm"]])


def write_config(out: Path, cfg: dict) -> None:
    payload = dict(cfg, version=__version__)
    (out / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_run_config(run: Path) -> dict:
    path = run / "config.json"
    if not path.exists():
        raise ConfigError(f"{run} is not a run directory (missing config.json)")
    cfg = json.loads(path.read_text())
    cfg.pop("version", None)
    return cfg


# ---------------------------------------------------------------------------
# generate-lorenz
# ---------------------------------------------------------------------------

def cmd_generate_lorenz(args: argparse.Namespace) -> int:
    config = LorenzConfig(
        sigma=args.sigma, rho=args.rho, beta=args.beta,
        x0=args.x0, y0=args.y0, z0=args.z0,
        dt=args.dt, num_points=args.points,
        as_printed=bool(args.as_printed),
    )
    trajectory = lorenz_generate(config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["X", "Y", "Z"])
        for row in trajectory:
            writer.writerow([_fmt(v) for v in row])
    print(f"wrote {config.num_points} samples to {out}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _checkpoint_name(model: str, split_index: int, seed=None) -> str:
    base = f"{model}_split{split_index}"
    return f"{base}_seed{seed}.json" if seed is not None else f"{base}.json"


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    validate_config(cfg)
    bundle = load_bundle(cfg)
    splits = plan_splits(cfg, bundle)
    normalized = [normalized_split(cfg, bundle, s) for s in splits]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(out, cfg)
    model = cfg["model"]
    if model == "naive":
        print("naive model has no parameters; configuration recorded, nothing to train")
        return 0
    (out / "checkpoints").mkdir(exist_ok=True)
    (out / "traces").mkdir(exist_ok=True)

    for index, nb in enumerate(normalized):
        train_target = nb.target[:cfg["train_len"]]
        train_conds = [c[:cfg["train_len"]] for c in nb.conditions]
        if model in ("uwn", "cwn"):
            reports = train_ensemble(
                network_config(cfg), train_config(cfg), train_target,
                train_conds if model == "cwn" else None,
            )
            for report in reports:
                save_params(report.params,
                            out / "checkpoints" / _checkpoint_name(model, index, report.seed))
                write_trace_csv(out / "traces" / f"split{index}_seed{report.seed}.csv",
                                report.loss_trace)
            trace_figure(out / "traces" / f"split{index}_loss.png",
                         {r.seed: r.loss_trace for r in reports},
                         title=f"training objective, split {index}")
            kept = ", ".join(f"seed {r.seed}: {r.train_mae:.6f}" for r in reports)
            print(f"split {index}: kept {len(reports)} of {cfg['seed_pool']} ({kept})")
        else:
            matrix = train_target if model == "ar" else np.column_stack(
                [train_target] + train_conds)
            fitted = fit_ar(matrix, order=cfg["order"])
            save_ar(fitted, out / "checkpoints" / _checkpoint_name(model, index))
            print(f"split {index}: fitted {model} of order {cfg['order']}")
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _load_ensemble(run: Path, model: str, split_index: int, expected: NetworkConfig):
    """(seed, params) pairs for every checkpoint of one split, ordered by seed."""
    pattern = f"{model}_split{split_index}_seed*.json"
    paths = sorted((run / "checkpoints").glob(pattern),
                   key=lambda p: int(p.stem.rsplit("seed", 1)[1]))
    if not paths:
        raise ConfigError(f"no checkpoints matching {pattern} under {run / 'checkpoints'}")
    return [(int(p.stem.rsplit("seed", 1)[1]), load_params(p, expected_config=expected))
            for p in paths]


def _network_one_step(params, nb: SeriesBundle, train_len: int) -> np.ndarray:
    """One-step predictions over the test window from true history."""
    from .network import build_graph

    conds = nb.conditions if params.config.num_conditions else None
    out = build_graph(params, nb.target, conds, None).data[:, 0]
    return out[train_len:nb.length]


def _metric_report(per_seed_preds, actuals, naive, scale: str) -> MetricsReport:
    values = {"rmse": [], "mase": [], "hits": []}
    for preds in per_seed_preds:
        values["rmse"].append(rmse(preds, actuals))
        values["mase"].append(mase(preds, actuals, naive))
        values["hits"].append(hits(preds, actuals))
    return MetricsReport(
        rmse=aggregate(values["rmse"]),
        mase=aggregate(values["mase"]),
        hits=aggregate(values["hits"]),
        n_points=len(np.asarray(actuals).ravel()),
        scale=scale,
    )


def cmd_evaluate(args: argparse.Namespace) -> int:
    run = Path(args.run)
    cfg = read_run_config(run)
    validate_config(cfg)
    bundle = load_bundle(cfg)
    splits = plan_splits(cfg, bundle)
    model = cfg["model"]
    train_len = cfg["train_len"]

    # Gather predictions for every split before writing anything.
    evaluated = []
    for index, split in enumerate(splits):
        nb = normalized_split(cfg, bundle, split)
        raw_actuals = bundle.target[split.test_start:split.test_stop]
        norm_actuals = nb.target[train_len:]
        norm_naive = nb.target[train_len - 1:nb.length - 1]
        raw_naive = bundle.target[split.test_start - 1:split.test_stop - 1]

        seeds = []
        if model in ("uwn", "cwn"):
            ensemble = _load_ensemble(run, model, index, network_config(cfg))
            seeds = [s for s, _ in ensemble]
            preds_norm = [_network_one_step(p, nb, train_len) for _, p in ensemble]
        elif model in ("ar", "var"):
            fitted = load_ar(run / "checkpoints" / _checkpoint_name(model, index))
            matrix = nb.target[:, None] if model == "ar" else np.column_stack(
                [nb.target] + nb.conditions)
            if fitted.num_features != matrix.shape[1]:
                raise ConfigError(
                    f"checkpoint expects {fitted.num_features} series, data has "
                    f"{matrix.shape[1]}; the run directory does not match its data"
                )
            preds_norm = [np.array([predict_ar(fitted, matrix[:t])[0]
                                    for t in range(train_len, nb.length)])]
        else:  # naive
            preds_norm = [norm_naive.copy()]
        if model == "naive":
            # The previous raw value is the forecast; a normalization
            # round trip would only add rounding error.
            preds_raw = [raw_naive.copy()]
        else:
            preds_raw = [denormalize(p, nb) for p in preds_norm]
        evaluated.append((index, split, seeds, raw_actuals, norm_actuals,
                          raw_naive, norm_naive, preds_norm, preds_raw))

    (run / "metrics").mkdir(exist_ok=True)
    (run / "forecasts").mkdir(exist_ok=True)
    all_rows = []
    for (index, split, seeds, raw_actuals, norm_actuals,
         raw_naive, norm_naive, preds_norm, preds_raw) in evaluated:
        original = [(model, _metric_report(preds_raw, raw_actuals, raw_naive, "original"))]
        normalized = [(model, _metric_report(preds_norm, norm_actuals, norm_naive, "normalized"))]
        if model != "naive":  # reference row, skipped when it would repeat the model row
            original.append(("naive", _metric_report([raw_naive], raw_actuals, raw_naive,
                                                     "original")))
            normalized.append(("naive", _metric_report([norm_naive], norm_actuals, norm_naive,
                                                       "normalized")))
        rows = original + normalized
        all_rows.append(rows)
        write_metrics_csv(run / "metrics" / f"split{index}.csv", rows)
        table = (metrics_table(original) + "\n" + metrics_table(normalized))
        (run / "metrics" / f"split{index}.txt").write_text(table)
        print(f"one-step evaluation, split {index}:")
        print(table, end="")

        times = range(split.test_start, split.test_stop)
        forecast_cols = {}
        if len(preds_raw) > 1:
            for seed, p in zip(seeds, preds_raw):
                forecast_cols[f"{model}_seed{seed}"] = p
            forecast_cols[f"{model}_mean"] = np.mean(preds_raw, axis=0)
        else:
            forecast_cols[model] = preds_raw[0]
        forecast_cols["naive"] = raw_naive
        write_forecast_csv(run / "forecasts" / f"one_step_split{index}.csv",
                           times, raw_actuals, forecast_cols)
        forecast_figure(run / "forecasts" / f"one_step_split{index}.png",
                        times, raw_actuals,
                        {k: v for k, v in forecast_cols.items() if k != "naive"},
                        title=f"one-step forecasts, split {index}")

    if len(evaluated) > 1:
        pooled = {}
        for rows in all_rows:
            for label, rep in rows:
                bucket = pooled.setdefault((label, rep.scale), {"rmse": [], "mase": [], "hits": []})
                for name in bucket:
                    bucket[name].extend(getattr(rep, name).values)
        n_points = sum(rows[0][1].n_points for rows in all_rows)
        agg_rows = [
            (label, MetricsReport(rmse=aggregate(b["rmse"]), mase=aggregate(b["mase"]),
                                  hits=aggregate(b["hits"]), n_points=n_points, scale=scale))
            for (label, scale), b in pooled.items()
        ]
        write_metrics_csv(run / "metrics" / "aggregate.csv", agg_rows)
        print(f"aggregated {len(evaluated)} splits into metrics/aggregate.csv")
    return 0


# ---------------------------------------------------------------------------
# forecast
# ---------------------------------------------------------------------------

def cmd_forecast(args: argparse.Namespace) -> int:
    run = Path(args.run)
    cfg = read_run_config(run)
    validate_config(cfg)
    if args.steps < 1:
        raise ConfigError(f"--steps must be >= 1, got {args.steps}")
    bundle = load_bundle(cfg)
    splits = plan_splits(cfg, bundle)
    split = splits[0]
    nb = normalized_split(cfg, bundle, split)
    model = cfg["model"]
    history_len = args.history_len if args.history_len is not None else cfg["train_len"]
    if not (1 <= history_len <= nb.length):
        raise ConfigError(
            f"--history-len must be in [1, {nb.length}], got {history_len}"
        )

    history = nb.target[:history_len]
    cond_histories = [c[:history_len] for c in nb.conditions]
    labels = [model]
    if model in ("uwn", "cwn"):
        net_cfg = network_config(cfg)
        if history_len < receptive_field(net_cfg):
            raise ConfigError(
                f"history of {history_len} points is shorter than the receptive "
                f"field ({receptive_field(net_cfg)}); the forecast would see only padding"
            )
        ensemble = _load_ensemble(run, model, 0, net_cfg)
        paths = [forecast_n_steps(p, history, args.steps,
                                  cond_histories if model == "cwn" else None)
                 for _, p in ensemble]
        if len(ensemble) > 1:
            labels = [f"{model}_seed{s}" for s, _ in ensemble]
    elif model in ("ar", "var"):
        fitted = load_ar(run / "checkpoints" / _checkpoint_name(model, 0))
        if history_len < fitted.order:
            raise ConfigError(
                f"history of {history_len} points is shorter than the order {fitted.order}"
            )
        matrix = history[:, None] if model == "ar" else np.column_stack(
            [history] + cond_histories)
        paths = [forecast_ar(fitted, matrix, args.steps)[:, 0]]
    else:  # naive
        paths = [np.full(args.steps, history[-1])]

    (run / "forecasts").mkdir(exist_ok=True)
    times = list(range(split.train_start + history_len,
                       split.train_start + history_len + args.steps))
    mean_norm = np.mean(paths, axis=0)
    out_path = run / "forecasts" / f"iterated_n{args.steps}.csv"
    with out_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + labels + ["mean", "mean_normalized"])
        for i, t in enumerate(times):
            raw_vals = [_fmt(denormalize(p[i], nb)) for p in paths]
            writer.writerow([t] + raw_vals
                            + [_fmt(denormalize(mean_norm[i], nb)), _fmt(mean_norm[i])])

    overlap = min(split.train_start + nb.length, times[-1] + 1) - times[0]
    tail = range(max(split.train_start, times[0] - 100), times[0])
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(9, 4.5))
    ax.plot(list(tail),
            bundle.target[tail.start:tail.stop], color="black", linewidth=1.2,
            label="history")
    if overlap > 0:
        ax.plot(times[:overlap],
                bundle.target[times[0]:times[0] + overlap],
                color="gray", linewidth=1.0, label="actual")
    for label, p in zip(labels, paths):
        ax.plot(times, denormalize(p, nb), linewidth=0.9, label=label)
    ax.axvline(times[0] - 0.5, color="gray", linestyle=":", linewidth=1.0)
    ax.set_xlabel("t")
    ax.set_ylabel(bundle.target_name or "value")
    ax.set_title(f"{args.steps}-step iterated forecast")
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    fig.savefig(run / "forecasts" / f"iterated_n{args.steps}.png", dpi=120,
                metadata={"Date": None})
    plt.close(fig)
    print(f"wrote {args.steps}-step forecast to {out_path}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing and dispatch.
# ---------------------------------------------------------------------------

def _add_experiment_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON file with configuration values")
    sub.add_argument("--model", choices=MODELS)
    sub.add_argument("--data", help="CSV data file")
    sub.add_argument("--target", help="target column name")
    sub.add_argument("--cond", dest="conditions",
                     help="comma-separated condition column names")
    sub.add_argument("--returns", action="store_true", default=None,
                     help="convert price columns to simple returns first")
    sub.add_argument("--norm", choices=sorted(NORM_MODES),
                     help="normalization statistics: per-series or pooled")
    sub.add_argument("--train-len", dest="train_len", type=int)
    sub.add_argument("--test-len", dest="test_len", type=int)
    sub.add_argument("--walk-forward", dest="walk_forward", action="store_true",
                     default=None, help="use every walk-forward split, not just the first")
    sub.add_argument("--layers", type=int)
    sub.add_argument("--filter-width", dest="filter_width", type=int)
    sub.add_argument("--channels", type=int)
    sub.add_argument("--gamma", type=float, help="L2 penalty strength")
    sub.add_argument("--lr", dest="learning_rate", type=float)
    sub.add_argument("--iters", dest="iterations", type=int)
    sub.add_argument("--num-seeds", dest="num_seeds", type=int,
                     help="ensemble size kept after selection")
    sub.add_argument("--seed-pool", dest="seed_pool", type=int,
                     help="number of seeds trained before selection")
    sub.add_argument("--seed", type=int, help="base seed; the pool uses consecutive values")
    sub.add_argument("--jobs", type=int, help="parallel training processes")
    sub.add_argument("--order", type=int, help="autoregression order for ar/var")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavecast",
        description="Dilated causal convolution forecasting with baselines.",
    )
    parser.add_argument("--version", action="version", version=f"wavecast {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("generate-lorenz",
                              help="integrate the chaotic benchmark and write X,Y,Z CSV")
    gen.add_argument("--out", required=True, help="output CSV path")
    gen.add_argument("--points", type=int, default=1500)
    gen.add_argument("--dt", type=float, default=0.01)
    gen.add_argument("--sigma", type=float, default=10.0)
    gen.add_argument("--rho", type=float, default=28.0)
    gen.add_argument("--beta", type=float, default=8.0 / 3.0)
    gen.add_argument("--x0", type=float, default=0.0)
    gen.add_argument("--y0", type=float, default=1.0)
    gen.add_argument("--z0", type=float, default=1.05)
    gen.add_argument("--as-printed", dest="as_printed", action="store_true",
                     help="use the dZ = XY - beta*Y variant instead of the canonical system")
    gen.set_defaults(handler=cmd_generate_lorenz)

    tr = commands.add_parser("train", help="train a model and write checkpoints")
    tr.add_argument("--out", required=True, help="run directory to create")
    _add_experiment_flags(tr)
    tr.set_defaults(handler=cmd_train)

    ev = commands.add_parser("evaluate",
                             help="one-step-ahead evaluation of a trained run")
    ev.add_argument("--run", required=True, help="run directory written by train")
    ev.set_defaults(handler=cmd_evaluate)

    fc = commands.add_parser("forecast", help="iterated multi-step forecast")
    fc.add_argument("--run", required=True, help="run directory written by train")
    fc.add_argument("--steps", type=int, required=True, help="forecast horizon")
    fc.add_argument("--history-len", dest="history_len", type=int,
                    help="observations fed to the model (default: train length)")
    fc.set_defaults(handler=cmd_forecast)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except NumericError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, WavecastError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
