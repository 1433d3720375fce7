"""Training: MAE objective with L2 weight penalty, Adam, seed ensembles.

Training is full-batch: every iteration runs one forward pass over the whole
series, one backward pass, and one Adam update. The objective is

    E = mean |prediction - target|  +  (gamma / 2) * sum(filter weights ** 2)

where the targets are x(1 .. N-1): the network's first output comes from pure
padding and its last one has no observed counterpart, so neither enters the
loss. Biases are exempt from the penalty.

The ensemble protocol trains ``seed_pool`` networks from consecutive seeds,
discards any whose final training MAE exceeds 1.5x the pool median (stuck
runs), and keeps the best ``num_seeds`` of the rest.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autograd import Tape, mean_abs_error, slice_time
from .errors import ConfigError, NumericError
from .network import NetworkConfig, NetworkParams, build_graph, init_params

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

__all__ = [
    "TrainConfig",
    "TrainReport",
    "AdamState",
    "adam_step",
    "objective",
    "l2_penalty",
    "train",
    "train_ensemble",
    "select_reports",
]


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; defaults reproduce the reference protocol."""

    iterations: int = 20000
    learning_rate: float = 0.001
    l2_gamma: float = 0.001
    num_seeds: int = 3
    seed_pool: int = 5
    jobs: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.l2_gamma < 0:
            raise ConfigError(f"l2_gamma must be >= 0, got {self.l2_gamma}")
        if self.num_seeds < 1:
            raise ConfigError(f"num_seeds must be >= 1, got {self.num_seeds}")
        if self.seed_pool < self.num_seeds:
            raise ConfigError(
                f"seed_pool ({self.seed_pool}) must be >= num_seeds ({self.num_seeds})"
            )
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")


@dataclass
class TrainReport:
    """Outcome of one training run."""

    seed: int
    loss_trace: np.ndarray  # objective value per iteration, before the update
    train_mae: float  # MAE of the final parameters on the training series
    params: NetworkParams | None


def l2_penalty(params: NetworkParams, gamma: float) -> float:
    """(gamma / 2) * sum of squared filter weights; biases excluded."""
    if gamma == 0.0:
        return 0.0
    return 0.5 * gamma * sum(float(np.sum(p.value ** 2)) for p in params.weight_parameters())


def objective(params: NetworkParams, predictions, targets, l2_gamma: float) -> float:
    """Mean absolute error of aligned predictions plus the L2 weight penalty."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ConfigError(f"predictions {p.shape} and targets {t.shape} are not aligned")
    return float(np.mean(np.abs(p - t))) + l2_penalty(params, l2_gamma)


class AdamState:
    """First/second moment accumulators for a fixed parameter list."""

    def __init__(self, params):
        self.params = list(params)
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0
        self._index = {id(p): i for i, p in enumerate(self.params)}


def adam_step(params, grads, state: AdamState, learning_rate: float) -> None:
    """One Adam update in place; ``grads`` maps id(parameter) -> array."""
    state.t += 1
    t = state.t
    correct1 = 1.0 - ADAM_BETA1 ** t
    correct2 = 1.0 - ADAM_BETA2 ** t
    for p in params:
        i = state._index.get(id(p))
        if i is None:
            raise ConfigError(f"parameter {p.name!r} is not tracked by this optimizer state")
        g = np.asarray(grads[id(p)], dtype=np.float64)
        if g.shape != p.value.shape:
            raise ConfigError(
                f"gradient shape {g.shape} does not match parameter {p.name!r} "
                f"shape {p.value.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {p.name!r}")
        m = state.m[i]
        v = state.v[i]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p.value -= learning_rate * (m / correct1) / (np.sqrt(v / correct2) + ADAM_EPSILON)


def _objective_gradients(params: NetworkParams, x, conditions, gamma: float):
    """Objective value and its exact gradients for the current parameters."""
    series = np.asarray(x, dtype=np.float64)
    n = series.size
    tape = Tape()
    out = build_graph(params, series, conditions, tape)
    predictions = slice_time(out, 1, n, tape)  # x^(1 .. N-1)
    mae_node = mean_abs_error(predictions, series[1:, None], tape)
    loss = mae_node.value + l2_penalty(params, gamma)
    grads = tape.backward(mae_node)
    gdict = {}
    for p in params.all_parameters():
        gdict[id(p)] = grads.wrt(p)
    if gamma != 0.0:
        for p in params.weight_parameters():
            gdict[id(p)] = gdict[id(p)] + gamma * p.value
    return loss, gdict


def train(
    network_config: NetworkConfig,
    train_config: TrainConfig,
    x,
    conditions=None,
    rng_seed: int | None = None,
) -> TrainReport:
    """Train one network on a series (and optional condition series).

    Deterministic for a given seed. Raises NumericError if the loss or a
    gradient goes non-finite; the message names the failing iteration.
    """
    series = np.asarray(x, dtype=np.float64)
    if series.ndim != 1 or series.size < 3:
        raise ConfigError("training needs a one-dimensional series of at least 3 points")
    conds = None
    if network_config.num_conditions > 0:
        if conditions is None:
            raise ConfigError("network_config declares conditions but none were given")
        conds = [np.asarray(c, dtype=np.float64) for c in conditions]
    seed = network_config.seed if rng_seed is None else rng_seed
    params = init_params(network_config, rng_seed=seed)
    all_params = list(params.all_parameters())
    state = AdamState(all_params)
    trace = np.empty(train_config.iterations)
    for iteration in range(train_config.iterations):
        try:
            loss, grads = _objective_gradients(params, series, conds, train_config.l2_gamma)
            trace[iteration] = loss
            adam_step(all_params, grads, state, train_config.learning_rate)
        except NumericError as exc:
            raise NumericError(
                f"training diverged at iteration {iteration} (seed {seed}): {exc}"
            ) from exc
    final = build_graph(params, series, conds, None).data[1:series.size, 0]
    train_mae = float(np.mean(np.abs(final - series[1:])))
    return TrainReport(seed=seed, loss_trace=trace, train_mae=train_mae, params=params)


def select_reports(reports, num_seeds: int):
    """Apply the discard rule, then keep the best runs by training MAE.

    Runs above 1.5x the pool median MAE are dropped; if that leaves fewer
    than requested, selection falls back to plain rank order.
    """
    ranked = sorted(reports, key=lambda r: r.train_mae)
    if num_seeds > len(ranked):
        raise ConfigError(f"cannot select {num_seeds} runs from a pool of {len(ranked)}")
    cutoff = 1.5 * float(np.median([r.train_mae for r in ranked]))
    kept = [r for r in ranked if r.train_mae <= cutoff]
    if len(kept) < num_seeds:
        kept = ranked
    return kept[:num_seeds]


def _train_one(args):
    network_config, train_config, series, conds, seed = args
    return train(network_config, train_config, series, conds, rng_seed=seed)


def train_ensemble(
    network_config: NetworkConfig,
    train_config: TrainConfig,
    x,
    conditions=None,
):
    """Train ``seed_pool`` networks from consecutive seeds and select.

    Returns the selected TrainReports ordered by training MAE. Seeds whose
    training blows up numerically are dropped from the pool; if every seed
    blows up, the last failure is re-raised.
    """
    seeds = [network_config.seed + i for i in range(train_config.seed_pool)]
    jobs = [(network_config, train_config, np.asarray(x, dtype=np.float64),
             None if conditions is None else [np.asarray(c, dtype=np.float64) for c in conditions],
             s) for s in seeds]
    reports = []
    failure = None
    if train_config.jobs > 1:
        with ProcessPoolExecutor(max_workers=train_config.jobs) as pool:
            futures = [pool.submit(_train_one, j) for j in jobs]
            for fut in futures:
                try:
                    reports.append(fut.result())
                except NumericError as exc:
                    failure = exc
    else:
        for j in jobs:
            try:
                reports.append(_train_one(j))
            except NumericError as exc:
                failure = exc
    if not reports:
        raise NumericError(f"every seed in the pool diverged; last failure: {failure}")
    if len(reports) < train_config.num_seeds:
        raise NumericError(
            f"only {len(reports)} of {train_config.seed_pool} seeds finished; "
            f"cannot select {train_config.num_seeds} (last failure: {failure})"
        )
    return select_reports(reports, train_config.num_seeds)
