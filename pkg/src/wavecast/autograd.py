"""Reverse-mode differentiable ops for causal convolution stacks.

Everything is float64 and operates on 2-D (time, channel) blocks. The op set
is deliberately small: dilated causal convolution, 1x1 convolution, ReLU,
addition, zero left-padding, time slicing, and two scalar reductions. Each op
optionally records onto a :class:`Tape`; calling :meth:`Tape.backward` on a
scalar result replays the records in exact reverse order and accumulates
adjoints, so gradients are exact (not approximated) for every parameter.

Conventions:

* convolutions are valid-mode only; any padding is the caller's business and
  must go through :func:`left_pad_zeros` so it is explicit and differentiable;
* filter tap ``j = 0`` sits at the current position and tap ``j`` reaches
  ``dilation * j`` steps into the past;
* the ReLU subgradient at exactly zero is zero.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericError

__all__ = [
    "FeatureMap",
    "Parameter",
    "ConvFilter",
    "Scalar",
    "Tape",
    "Gradients",
    "causal_dilated_conv",
    "conv_1x1",
    "relu",
    "add",
    "left_pad_zeros",
    "slice_time",
    "sum_all",
    "mean_abs_error",
]


def _as_float64(values, what):
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what} contains non-finite values")
    return arr


class FeatureMap:
    """An immutable (length, channels) block of float64 values.

    One-dimensional input is treated as a single channel. Non-finite values
    are rejected at construction, which is what keeps NaNs from propagating
    silently through a network: every op output passes through here.
    """

    __slots__ = ("data",)

    def __init__(self, values):
        arr = _as_float64(values, "feature map")
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ConfigError(f"feature map must be (length, channels), got shape {arr.shape}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def _wrap(cls, arr):
        """Adopt a freshly computed array without copying (internal)."""
        if not np.all(np.isfinite(arr)):
            raise NumericError("operation produced non-finite values")
        obj = object.__new__(cls)
        arr.setflags(write=False)
        object.__setattr__(obj, "data", arr)
        return obj

    @property
    def length(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    def __repr__(self):
        return f"FeatureMap(length={self.length}, channels={self.channels})"


class Parameter:
    """A named trainable array. Mutable so optimizers can update in place."""

    __slots__ = ("value", "name")

    def __init__(self, value, name: str = ""):
        self.value = _as_float64(value, f"parameter {name or '<unnamed>'}")
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class ConvFilter:
    """Weights and bias of one convolution.

    ``weights`` has shape (k, in_channels, out_channels) with tap 0 at the
    current position; ``bias`` has shape (out_channels,) and defaults to
    zeros. ``dilation`` is the step between taps.
    """

    __slots__ = ("weights", "bias", "dilation")

    def __init__(self, weights, bias=None, dilation: int = 1, name: str = ""):
        w = weights if isinstance(weights, Parameter) else Parameter(weights, f"{name}.weights")
        if w.value.ndim != 3:
            raise ConfigError(
                f"filter weights must be (k, in_channels, out_channels), got {w.value.shape}"
            )
        cout = w.value.shape[2]
        if bias is None:
            bias = np.zeros(cout)
        b = bias if isinstance(bias, Parameter) else Parameter(bias, f"{name}.bias")
        if b.value.shape != (cout,):
            raise ConfigError(f"bias shape {b.value.shape} does not match {cout} output channels")
        if dilation < 1:
            raise ConfigError(f"dilation must be >= 1, got {dilation}")
        self.weights = w
        self.bias = b
        self.dilation = int(dilation)

    @property
    def k(self) -> int:
        return self.weights.value.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.value.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.value.shape[2]

    def parameters(self):
        return (self.weights, self.bias)

    def __repr__(self):
        return (
            f"ConvFilter(k={self.k}, in={self.in_channels}, out={self.out_channels}, "
            f"dilation={self.dilation})"
        )


class Scalar:
    """A scalar node produced by a reduction; the only valid backward seed."""

    __slots__ = ("value",)

    def __init__(self, value: float):
        if not np.isfinite(value):
            raise NumericError("scalar reduction produced a non-finite value")
        self.value = float(value)

    def __repr__(self):
        return f"Scalar({self.value!r})"


class Gradients:
    """Gradient store returned by :meth:`Tape.backward`, keyed by node."""

    def __init__(self, adjoints, touched):
        self._adjoints = adjoints
        self._touched = touched

    def wrt(self, node):
        """Gradient w.r.t. a node that took part in the recorded forward pass.

        Nodes that were recorded but do not influence the loss get an exact
        zero array; nodes the tape never saw raise ConfigError.
        """
        got = self._adjoints.get(id(node))
        if got is not None:
            return got
        shape = self._touched.get(id(node))
        if shape is None:
            raise ConfigError("node was not recorded on this tape")
        return np.zeros(shape)


class Tape:
    """Ordered record of ops; backward() replays it in exact reverse order."""

    __slots__ = ("_records", "_touched")

    def __init__(self):
        self._records = []
        self._touched = {}

    def _touch(self, node):
        key = id(node)
        if key not in self._touched:
            if isinstance(node, Parameter):
                self._touched[key] = node.value.shape
            elif isinstance(node, FeatureMap):
                self._touched[key] = node.data.shape
            else:
                self._touched[key] = ()

    def _record(self, pull, *nodes):
        for node in nodes:
            self._touch(node)
        self._records.append(pull)

    def backward(self, loss: Scalar) -> Gradients:
        """Accumulate d(loss)/d(node) for every node recorded on this tape."""
        if not isinstance(loss, Scalar):
            raise ConfigError("backward() expects a scalar node")
        if id(loss) not in self._touched:
            raise ConfigError("loss was not produced by operations on this tape")
        adjoints = {id(loss): np.float64(1.0)}
        for pull in reversed(self._records):
            pull(adjoints)
        return Gradients(adjoints, self._touched)


def _accumulate(adjoints, node, value):
    key = id(node)
    held = adjoints.get(key)
    if held is None:
        adjoints[key] = value
    else:
        adjoints[key] = held + value


def causal_dilated_conv(x: FeatureMap, filt: ConvFilter, tape: Tape | None = None) -> FeatureMap:
    """Valid-mode causal convolution with dilation.

    out(i, h) = bias(h) + sum_{j,m} w(j, m, h) * x(i + d*(k-1) - d*j, m),
    so output position i sees input positions i .. i + d*(k-1) and nothing
    later. Output length is len(x) - d*(k-1), which must stay positive.
    """
    w = filt.weights.value
    k, cin, cout = w.shape
    d = filt.dilation
    if cin != x.channels:
        raise ConfigError(f"filter expects {cin} input channels, feature map has {x.channels}")
    lout = x.length - d * (k - 1)
    if lout < 1:
        raise ConfigError(
            f"input of length {x.length} is too short for k={k}, dilation={d}"
        )
    data = x.data
    out = np.tile(filt.bias.value, (lout, 1))
    # Tap j multiplies the input slice starting d*(k-1-j) rows in; each slice
    # is a view, so the whole conv is k small matmuls.
    for j in range(k):
        start = d * (k - 1 - j)
        out += data[start:start + lout] @ w[j]
    result = FeatureMap._wrap(out)

    if tape is not None:
        def pull(adjoints, x=x, filt=filt, result=result, lout=lout, d=d, k=k):
            g = adjoints.get(id(result))
            if g is None:
                return
            w = filt.weights.value
            gw = np.empty_like(w)
            gx = np.zeros_like(x.data)
            for j in range(k):
                start = d * (k - 1 - j)
                sl = x.data[start:start + lout]
                gw[j] = sl.T @ g
                gx[start:start + lout] += g @ w[j].T
            _accumulate(adjoints, filt.weights, gw)
            _accumulate(adjoints, filt.bias, g.sum(axis=0))
            _accumulate(adjoints, x, gx)

        tape._record(pull, x, filt.weights, filt.bias, result)
    return result


def conv_1x1(x: FeatureMap, filt: ConvFilter, tape: Tape | None = None) -> FeatureMap:
    """Position-wise channel mix: a k=1 convolution (one matmul plus bias)."""
    w = filt.weights.value
    if w.shape[0] != 1:
        raise ConfigError(f"conv_1x1 requires k=1 filters, got k={w.shape[0]}")
    if w.shape[1] != x.channels:
        raise ConfigError(f"filter expects {w.shape[1]} input channels, feature map has {x.channels}")
    result = FeatureMap._wrap(x.data @ w[0] + filt.bias.value)

    if tape is not None:
        def pull(adjoints, x=x, filt=filt, result=result):
            g = adjoints.get(id(result))
            if g is None:
                return
            _accumulate(adjoints, filt.weights, (x.data.T @ g)[None, :, :])
            _accumulate(adjoints, filt.bias, g.sum(axis=0))
            _accumulate(adjoints, x, g @ filt.weights.value[0].T)

        tape._record(pull, x, filt.weights, filt.bias, result)
    return result


def relu(x: FeatureMap, tape: Tape | None = None) -> FeatureMap:
    """Elementwise max(x, 0); the subgradient at exactly zero is zero."""
    result = FeatureMap._wrap(np.maximum(x.data, 0.0))

    if tape is not None:
        mask = x.data > 0.0

        def pull(adjoints, x=x, result=result, mask=mask):
            g = adjoints.get(id(result))
            if g is None:
                return
            _accumulate(adjoints, x, np.where(mask, g, 0.0))

        tape._record(pull, x, result)
    return result


def add(a: FeatureMap, b: FeatureMap, tape: Tape | None = None) -> FeatureMap:
    """Elementwise sum of two feature maps of identical shape."""
    if a.data.shape != b.data.shape:
        raise ConfigError(f"cannot add shapes {a.data.shape} and {b.data.shape}")
    result = FeatureMap._wrap(a.data + b.data)

    if tape is not None:
        def pull(adjoints, a=a, b=b, result=result):
            g = adjoints.get(id(result))
            if g is None:
                return
            _accumulate(adjoints, a, g)
            _accumulate(adjoints, b, g)

        tape._record(pull, a, b, result)
    return result


def left_pad_zeros(x: FeatureMap, count: int, tape: Tape | None = None) -> FeatureMap:
    """Prepend ``count`` all-zero rows; the only sanctioned padding path."""
    if count < 0:
        raise ConfigError(f"pad count must be >= 0, got {count}")
    out = np.zeros((x.length + count, x.channels))
    out[count:] = x.data
    result = FeatureMap._wrap(out)

    if tape is not None:
        def pull(adjoints, x=x, result=result, count=count):
            g = adjoints.get(id(result))
            if g is None:
                return
            _accumulate(adjoints, x, g[count:])

        tape._record(pull, x, result)
    return result


def slice_time(x: FeatureMap, start: int, stop: int, tape: Tape | None = None) -> FeatureMap:
    """Keep rows [start, stop); the backward pass scatters into place."""
    if not (0 <= start < stop <= x.length):
        raise ConfigError(f"slice [{start}, {stop}) invalid for length {x.length}")
    result = FeatureMap._wrap(x.data[start:stop].copy())

    if tape is not None:
        def pull(adjoints, x=x, result=result, start=start, stop=stop):
            g = adjoints.get(id(result))
            if g is None:
                return
            gx = np.zeros_like(x.data)
            gx[start:stop] = g
            _accumulate(adjoints, x, gx)

        tape._record(pull, x, result)
    return result


def sum_all(x: FeatureMap, tape: Tape | None = None) -> Scalar:
    """Sum of all entries, as a scalar node."""
    result = Scalar(float(x.data.sum()))

    if tape is not None:
        def pull(adjoints, x=x, result=result):
            g = adjoints.get(id(result))
            if g is None:
                return
            _accumulate(adjoints, x, np.full_like(x.data, g))

        tape._record(pull, x, result)
    return result


def mean_abs_error(pred: FeatureMap, target, tape: Tape | None = None) -> Scalar:
    """Mean absolute deviation of ``pred`` from a constant target block."""
    t = np.asarray(target, dtype=np.float64)
    if t.ndim == 1:
        t = t[:, None]
    if t.shape != pred.data.shape:
        raise ConfigError(f"target shape {t.shape} does not match predictions {pred.data.shape}")
    diff = pred.data - t
    result = Scalar(float(np.mean(np.abs(diff))))

    if tape is not None:
        sign = np.sign(diff) / diff.size

        def pull(adjoints, pred=pred, result=result, sign=sign):
            g = adjoints.get(id(result))
            if g is None:
                return
            _accumulate(adjoints, pred, g * sign)

        tape._record(pull, pred, result)
    return result
