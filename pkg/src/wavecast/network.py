"""Network assembly: stacks of dilated causal convolutions with shortcuts.

A network of L layers uses filter width k and dilation 2**(l-1) in layer l,
giving a receptive field of r = 2**(L-1) * k past values. The input series is
left-padded with r zeros, so a series of length N yields N + 1 outputs: one
prediction aligned with every observed position plus one step beyond the end.

Layer 1 of a conditioned network runs one dilated filter over the target and
one over each condition series, sums the ReLU outputs, and adds parametrized
1x1 shortcuts from the padded target and conditions (these replace the plain
residual of that layer). Later layers are dilated conv + ReLU + residual,
with a 1x1 adapter on the residual branch when channel counts differ, except
the last dilated layer, which keeps its residual but applies no ReLU: its
activation is linear, and a final linear 1x1 convolution then maps the last
feature map to the predicted series.

Only filter width 2 keeps the padding arithmetic above exact, so the forward
passes insist on it; the convolution ops themselves are width-agnostic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import (
    ConvFilter,
    FeatureMap,
    Tape,
    add,
    causal_dilated_conv,
    conv_1x1,
    left_pad_zeros,
    relu,
    slice_time,
)
from .errors import CheckpointError, ConfigError

CHECKPOINT_VERSION = 1

__all__ = [
    "NetworkConfig",
    "NetworkParams",
    "receptive_field",
    "param_count",
    "init_params",
    "forward_unconditional",
    "forward_conditional",
    "predict_next",
    "forecast_n_steps",
    "save_params",
    "load_params",
]


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture description; hashable and JSON-serializable."""

    layers: int = 4
    filter_width: int = 2
    channels: tuple = 1  # one int (all layers) or a per-layer sequence
    num_conditions: int = 0
    l2_gamma: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.filter_width < 1:
            raise ConfigError(f"filter_width must be >= 1, got {self.filter_width}")
        chans = self.channels
        if isinstance(chans, int):
            chans = (chans,) * self.layers
        else:
            chans = tuple(int(c) for c in chans)
        if len(chans) != self.layers:
            raise ConfigError(
                f"channels needs one entry per layer ({self.layers}), got {len(chans)}"
            )
        if any(c < 1 for c in chans):
            raise ConfigError(f"channel counts must be >= 1, got {chans}")
        object.__setattr__(self, "channels", chans)
        if self.num_conditions < 0:
            raise ConfigError(f"num_conditions must be >= 0, got {self.num_conditions}")
        if self.l2_gamma < 0:
            raise ConfigError(f"l2_gamma must be >= 0, got {self.l2_gamma}")

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "filter_width": self.filter_width,
            "channels": list(self.channels),
            "num_conditions": self.num_conditions,
            "l2_gamma": self.l2_gamma,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "NetworkConfig":
        try:
            return cls(
                layers=int(raw["layers"]),
                filter_width=int(raw["filter_width"]),
                channels=tuple(raw["channels"]),
                num_conditions=int(raw["num_conditions"]),
                l2_gamma=float(raw["l2_gamma"]),
                seed=int(raw["seed"]),
            )
        except KeyError as missing:
            raise CheckpointError(f"checkpoint config is missing field {missing}") from None


def receptive_field(config: NetworkConfig) -> int:
    """Number of past values that can influence one prediction."""
    return 2 ** (config.layers - 1) * config.filter_width


@dataclass
class NetworkParams:
    """All trainable filters of one network, grouped by role.

    ``adapters`` holds one optional 1x1 filter per layer for residual
    branches whose channel counts differ; ``skip_input``/``skip_conditions``
    exist only on conditioned networks and carry the layer-1 shortcuts.
    """

    config: NetworkConfig
    dilated: list
    conditions: list = field(default_factory=list)
    skip_input: ConvFilter | None = None
    skip_conditions: list = field(default_factory=list)
    adapters: list = field(default_factory=list)
    output: ConvFilter = None

    def all_filters(self):
        for f in self.dilated:
            yield f
        for f in self.conditions:
            yield f
        if self.skip_input is not None:
            yield self.skip_input
        for f in self.skip_conditions:
            yield f
        for f in self.adapters:
            if f is not None:
                yield f
        yield self.output

    def all_parameters(self):
        for f in self.all_filters():
            yield f.weights
            yield f.bias

    def weight_parameters(self):
        """Filter weights only; the L2 penalty never touches biases."""
        for f in self.all_filters():
            yield f.weights


def _layer_channels(config: NetworkConfig) -> tuple:
    """Channel counts including the single input channel at index 0."""
    return (1,) + config.channels


def _needs_adapter(config: NetworkConfig, layer: int) -> bool:
    chans = _layer_channels(config)
    if chans[layer] == chans[layer + 1]:
        return False
    # Layer 1 of a conditioned network maps channels through its shortcut.
    return not (layer == 0 and config.num_conditions > 0)


def param_count(config: NetworkConfig) -> int:
    """Closed-form number of trainable scalars for a configuration."""
    chans = _layer_channels(config)
    k = config.filter_width
    m1 = chans[1]
    total = sum(k * chans[l] * chans[l + 1] + chans[l + 1] for l in range(config.layers))
    if config.num_conditions > 0:
        total += config.num_conditions * (k * m1 + m1)  # condition filters
        total += (m1 + m1) * (1 + config.num_conditions)  # layer-1 shortcuts
    total += sum(
        chans[l] * chans[l + 1] + chans[l + 1]
        for l in range(config.layers)
        if _needs_adapter(config, l)
    )
    total += chans[-1] + 1  # linear output
    return total


def init_params(config: NetworkConfig, rng_seed: int | None = None) -> NetworkParams:
    """Draw fresh parameters, deterministically for a given seed.

    Weights of filters that feed a ReLU come from Normal(0, sqrt(2 / z)) with
    z = out_channels * k of the filter. The two filters on the purely linear
    tail, the last dilated layer and the output convolution, start at zero,
    so a fresh network computes the zero map and training grows the linear
    tail before the rectified branches; this costs nothing in capacity and
    avoids the large hinge outputs a random linear tail would inject. Biases
    start at zero. Draw order is fixed (dilated layers, condition filters,
    shortcuts, adapters, output; zero-initialized filters consume no draws)
    so a seed pins every weight regardless of platform.
    """
    seed = config.seed if rng_seed is None else rng_seed
    rng = np.random.default_rng(seed)
    chans = _layer_channels(config)
    k = config.filter_width

    def draw(shape, dilation, name):
        std = np.sqrt(2.0 / (shape[2] * shape[0]))
        return ConvFilter(rng.normal(0.0, std, size=shape), dilation=dilation, name=name)

    def zeros(shape, dilation, name):
        return ConvFilter(np.zeros(shape), dilation=dilation, name=name)

    last = config.layers - 1
    dilated = [
        (zeros if l == last else draw)((k, chans[l], chans[l + 1]), 2 ** l, f"layer{l + 1}")
        for l in range(config.layers)
    ]
    conditions = [
        draw((k, 1, chans[1]), 1, f"condition{c}") for c in range(config.num_conditions)
    ]
    skip_input = None
    skip_conditions = []
    if config.num_conditions > 0:
        skip_input = draw((1, 1, chans[1]), 1, "skip_input")
        skip_conditions = [
            draw((1, 1, chans[1]), 1, f"skip_condition{c}") for c in range(config.num_conditions)
        ]
    adapters = [
        draw((1, chans[l], chans[l + 1]), 1, f"adapter{l + 1}")
        if _needs_adapter(config, l)
        else None
        for l in range(config.layers)
    ]
    output = zeros((1, chans[-1], 1), 1, "output")
    return NetworkParams(
        config=config,
        dilated=dilated,
        conditions=conditions,
        skip_input=skip_input,
        skip_conditions=skip_conditions,
        adapters=adapters,
        output=output,
    )


def _as_series(values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ConfigError(f"{what} must be a non-empty one-dimensional series")
    return arr


def build_graph(
    params: NetworkParams, x, conditions=None, tape: Tape | None = None
) -> FeatureMap:
    """Assemble the forward graph; returns the (N + 1, 1) prediction map.

    ``conditions=None`` runs the target-only path: condition branches are
    omitted entirely, but a layer-1 input shortcut is still honored when the
    parameter set carries one (that is what makes a conditioned network with
    zeroed condition branches reduce to this function exactly).
    """
    config = params.config
    if config.filter_width != 2:
        raise ConfigError(
            "forward passes require filter_width=2; other widths break the "
            "one-extra-output padding arithmetic"
        )
    series = _as_series(x, "input series")
    n = series.size
    if conditions is not None:
        if len(conditions) != config.num_conditions:
            raise ConfigError(
                f"network expects {config.num_conditions} condition series, "
                f"got {len(conditions)}"
            )
        conditions = [_as_series(c, "condition series") for c in conditions]
        for c in conditions:
            if c.size != n:
                raise ConfigError(
                    f"condition length {c.size} does not match series length {n}"
                )
    r = receptive_field(config)
    shift = config.filter_width - 1  # layer-1 alignment crop
    last = config.layers - 1  # the last dilated layer has a linear activation

    def activate(node, layer):
        return node if layer == last else relu(node, tape)

    padded = left_pad_zeros(FeatureMap(series), r, tape)
    h = activate(causal_dilated_conv(padded, params.dilated[0], tape), 0)
    if conditions is not None and config.num_conditions > 0:
        padded_conds = [left_pad_zeros(FeatureMap(c), r, tape) for c in conditions]
        for pc, vf in zip(padded_conds, params.conditions):
            h = add(h, activate(causal_dilated_conv(pc, vf, tape), 0), tape)
        h = add(h, conv_1x1(slice_time(padded, shift, padded.length, tape),
                            params.skip_input, tape), tape)
        for pc, sf in zip(padded_conds, params.skip_conditions):
            h = add(h, conv_1x1(slice_time(pc, shift, pc.length, tape), sf, tape), tape)
    else:
        shortcut = slice_time(padded, shift, padded.length, tape)
        if params.skip_input is not None:
            shortcut = conv_1x1(shortcut, params.skip_input, tape)
        elif params.adapters[0] is not None:
            shortcut = conv_1x1(shortcut, params.adapters[0], tape)
        h = add(h, shortcut, tape)

    feature = h
    for l in range(1, config.layers):
        filt = params.dilated[l]
        crop = filt.dilation * (config.filter_width - 1)
        activated = activate(causal_dilated_conv(feature, filt, tape), l)
        shortcut = slice_time(feature, crop, feature.length, tape)
        if params.adapters[l] is not None:
            shortcut = conv_1x1(shortcut, params.adapters[l], tape)
        feature = add(activated, shortcut, tape)

    return conv_1x1(feature, params.output, tape)


def forward_unconditional(params: NetworkParams, x) -> np.ndarray:
    """Predictions [x^(0), ..., x^(N)] from the target series alone."""
    return build_graph(params, x, None, None).data[:, 0].copy()


def forward_conditional(params: NetworkParams, x, conditions) -> np.ndarray:
    """Predictions [x^(0), ..., x^(N)] using the condition series as well."""
    return build_graph(params, x, list(conditions), None).data[:, 0].copy()


def predict_next(params: NetworkParams, window, condition_windows=None) -> float:
    """One-step prediction from the trailing receptive field of ``window``.

    Equals the final element of the full forward pass on the same history:
    the window fills the receptive field exactly, so the zero padding never
    reaches the prediction.
    """
    r = receptive_field(params.config)
    series = _as_series(window, "window")
    if series.size < r:
        raise ConfigError(f"window of length {series.size} is shorter than the receptive field {r}")
    tail = series[-r:]
    conds = None
    if params.config.num_conditions > 0:
        if condition_windows is None:
            raise ConfigError("conditioned network needs condition windows")
        conds = []
        for c in condition_windows:
            c = _as_series(c, "condition window")
            if c.size < r:
                raise ConfigError(
                    f"condition window of length {c.size} is shorter than the receptive field {r}"
                )
            conds.append(c[-r:])
    out = build_graph(params, tail, conds, None)
    return float(out.data[-1, 0])


def forecast_n_steps(params: NetworkParams, history, n: int, condition_histories=None) -> np.ndarray:
    """Iterated n-step forecast, feeding each prediction back as input.

    Condition series are not forecast; beyond the observed end they are held
    at their last observed value.
    """
    if n < 1:
        raise ConfigError(f"forecast steps must be >= 1, got {n}")
    r = receptive_field(params.config)
    series = list(_as_series(history, "history"))
    if len(series) < r:
        raise ConfigError(f"history of length {len(series)} is shorter than the receptive field {r}")
    cond_ext = []
    if params.config.num_conditions > 0:
        if condition_histories is None:
            raise ConfigError("conditioned network needs condition histories")
        for c in condition_histories:
            c = _as_series(c, "condition history")
            if c.size != len(series):
                raise ConfigError("condition history length does not match target history")
            cond_ext.append(np.concatenate([c, np.full(n, c[-1])]))
    out = np.empty(n)
    for step in range(n):
        end = len(series)
        windows = [ce[end - r:end] for ce in cond_ext] or None
        out[step] = predict_next(params, series[-r:], windows)
        series.append(out[step])
    return out


# ---------------------------------------------------------------------------
# Checkpoints: a versioned, self-describing JSON document. Weights are stored
# flat in layer order; JSON float repr round-trips binary64 exactly, so a
# save/load cycle is bitwise.
# ---------------------------------------------------------------------------

def _encode_filter(filt: ConvFilter | None):
    if filt is None:
        return None
    return {
        "dilation": filt.dilation,
        "shape": list(filt.weights.value.shape),
        "weights": filt.weights.value.ravel().tolist(),
        "bias": filt.bias.value.tolist(),
    }


def _decode_filter(raw, name: str) -> ConvFilter | None:
    if raw is None:
        return None
    try:
        shape = tuple(int(s) for s in raw["shape"])
        weights = np.asarray(raw["weights"], dtype=np.float64).reshape(shape)
        bias = np.asarray(raw["bias"], dtype=np.float64)
        dilation = int(raw["dilation"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed filter entry {name!r}: {exc}") from None
    return ConvFilter(weights, bias=bias, dilation=dilation, name=name)


def save_params(params: NetworkParams, path) -> None:
    """Write a checkpoint document for one parameter set."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "kind": "wavenet",
        "config": params.config.to_dict(),
        "filters": {
            "dilated": [_encode_filter(f) for f in params.dilated],
            "conditions": [_encode_filter(f) for f in params.conditions],
            "skip_input": _encode_filter(params.skip_input),
            "skip_conditions": [_encode_filter(f) for f in params.skip_conditions],
            "adapters": [_encode_filter(f) for f in params.adapters],
            "output": _encode_filter(params.output),
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def _config_diff(expected: NetworkConfig, found: NetworkConfig) -> str:
    parts = []
    for key, want in expected.to_dict().items():
        got = found.to_dict()[key]
        if want != got:
            parts.append(f"{key}: expected {want}, found {got}")
    return "; ".join(parts) or "configs differ"


def load_params(path, expected_config: NetworkConfig | None = None) -> NetworkParams:
    """Read a checkpoint; optionally insist it matches ``expected_config``."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {doc.get('format_version')!r} "
            f"(this build reads version {CHECKPOINT_VERSION})"
        )
    if doc.get("kind") != "wavenet":
        raise CheckpointError(f"checkpoint holds a {doc.get('kind')!r} model, expected 'wavenet'")
    config = NetworkConfig.from_dict(doc.get("config", {}))
    if expected_config is not None and config != expected_config:
        raise CheckpointError(
            f"checkpoint configuration mismatch: {_config_diff(expected_config, config)}"
        )
    filters = doc.get("filters", {})

    def pick(key):
        got = filters.get(key)
        if got is None and key not in ("skip_input",):
            raise CheckpointError(f"checkpoint is missing filter group {key!r}")
        return got

    params = NetworkParams(
        config=config,
        dilated=[_decode_filter(f, f"layer{i + 1}") for i, f in enumerate(pick("dilated"))],
        conditions=[_decode_filter(f, f"condition{i}") for i, f in enumerate(pick("conditions"))],
        skip_input=_decode_filter(filters.get("skip_input"), "skip_input"),
        skip_conditions=[
            _decode_filter(f, f"skip_condition{i}")
            for i, f in enumerate(pick("skip_conditions"))
        ],
        adapters=[_decode_filter(f, f"adapter{i + 1}") for i, f in enumerate(pick("adapters"))],
        output=_decode_filter(pick("output"), "output"),
    )
    _check_shapes(params)
    return params


def _check_shapes(params: NetworkParams) -> None:
    """Stored filters must match what the stored config implies."""
    reference = init_params(params.config, rng_seed=0)
    mismatches = []

    def compare(name, got, want):
        if (got is None) != (want is None):
            mismatches.append(f"{name}: presence mismatch")
        elif got is not None and got.weights.value.shape != want.weights.value.shape:
            mismatches.append(
                f"{name}: shape {got.weights.value.shape} vs {want.weights.value.shape}"
            )

    for group in ("dilated", "conditions", "skip_conditions", "adapters"):
        got_list = getattr(params, group)
        want_list = getattr(reference, group)
        if len(got_list) != len(want_list):
            mismatches.append(f"{group}: {len(got_list)} filters vs {len(want_list)}")
            continue
        for i, (g, w) in enumerate(zip(got_list, want_list)):
            compare(f"{group}[{i}]", g, w)
    compare("skip_input", params.skip_input, reference.skip_input)
    compare("output", params.output, reference.output)
    if mismatches:
        raise CheckpointError(
            "checkpoint filters do not match its configuration: " + "; ".join(mismatches)
        )
