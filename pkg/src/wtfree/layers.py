"""Layer definitions and their hand-derived forward/backward rules.

A layer is described by an immutable spec (shape-level facts only) plus,
for parameterized layers, a :class:`LayerState` holding the forward
weights, the bias, and a fixed random feedback matrix of the same shape
as the weights.

The backward pass routes the incoming error through one of two kernels:

* ``WEIGHT_TRANSPORT``: the transpose path of the forward weights, i.e.
  classic backpropagation;
* ``FEEDBACK_ALIGNMENT``: the layer's fixed feedback matrix, so the
  update rule never reads the forward weights on the way down.

Both modes share one code path that differs only in which matrix is
plugged into the routing step.  Everything else (activation derivatives,
weight/bias gradients, pooling adjoints) is identical by construction.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, TapeError
from .tensor import (
    DTYPE,
    avg_pool2,
    avg_pool2_grad,
    conv2d,
    conv2d_input_grad,
    conv2d_kernel_grad,
    uniform_init,
)


class FeedbackMode(enum.Enum):
    """How error signals travel backward through parameterized layers."""

    WEIGHT_TRANSPORT = "bp"
    FEEDBACK_ALIGNMENT = "fa"

    @classmethod
    def parse(cls, text: str) -> "FeedbackMode":
        try:
            return cls(text)
        except ValueError:
            valid = ", ".join(repr(m.value) for m in cls)
            raise ConfigError(f"unknown gradient mode {text!r}, expected one of {valid}") from None


# ------------------------------------------------------------ layer specs


@dataclass(frozen=True)
class Conv:
    """Valid cross-correlation with square kernels, stride 1 by default."""

    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel_size", "stride"):
            if getattr(self, name) < 1:
                raise ConfigError(f"Conv.{name} must be >= 1, got {getattr(self, name)}")


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int

    def __post_init__(self):
        if self.in_features < 1 or self.out_features < 1:
            raise ConfigError(f"Dense extents must be >= 1, got {self}")


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class AvgPool:
    """Non-overlapping 2x2 mean pooling."""


@dataclass(frozen=True)
class Flatten:
    pass


LayerSpec = Union[Conv, Dense, Relu, AvgPool, Flatten]

_SPEC_KINDS = {"conv": Conv, "dense": Dense, "relu": Relu, "avg_pool": AvgPool, "flatten": Flatten}


def spec_to_dict(spec: LayerSpec) -> dict:
    """JSON-friendly description of a layer spec."""
    for kind, cls in _SPEC_KINDS.items():
        if type(spec) is cls:
            d = {"kind": kind}
            d.update(spec.__dict__)
            return d
    raise ContractError(f"not a layer spec: {spec!r}")


def spec_from_dict(d: dict) -> LayerSpec:
    d = dict(d)
    kind = d.pop("kind", None)
    cls = _SPEC_KINDS.get(kind)
    if cls is None:
        raise ConfigError(f"unknown layer kind {kind!r}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad fields for layer kind {kind!r}: {exc}") from None


def is_parameterized(spec: LayerSpec) -> bool:
    return isinstance(spec, (Conv, Dense))


def fan_in(spec: LayerSpec) -> int:
    if isinstance(spec, Conv):
        return spec.in_channels * spec.kernel_size * spec.kernel_size
    if isinstance(spec, Dense):
        return spec.in_features
    raise ContractError(f"{type(spec).__name__} has no parameters")


# ------------------------------------------------------------ layer state


@dataclass(frozen=True)
class LayerState:
    """Parameters of one layer.

    ``feedback`` has the same shape as ``weight`` and is frozen: it is
    drawn once at init time and the array is marked read-only, so nothing
    downstream can accidentally train it.
    """

    weight: np.ndarray
    bias: np.ndarray
    feedback: np.ndarray

    def __post_init__(self):
        if self.feedback.shape != self.weight.shape:
            raise ContractError(
                f"feedback shape {self.feedback.shape} must match weight shape {self.weight.shape}"
            )
        self.feedback.flags.writeable = False

    def with_params(self, weight: np.ndarray, bias: np.ndarray) -> "LayerState":
        """New state with updated forward parameters and the same feedback."""
        return LayerState(weight=weight, bias=bias, feedback=self.feedback)


def init_layer(
    spec: LayerSpec,
    init_rng: np.random.Generator,
    feedback_rng: np.random.Generator,
) -> Optional[LayerState]:
    """Fresh parameters for one layer, or None for stateless layers.

    Weights and feedback are drawn i.i.d. uniform on
    [-sqrt(3/fan_in), +sqrt(3/fan_in)] (variance 1/fan_in) from two
    independent streams; biases start at zero.
    """
    if not is_parameterized(spec):
        return None
    scale = math.sqrt(3.0 / fan_in(spec))
    if isinstance(spec, Conv):
        shape = (spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size)
        bias = np.zeros(spec.out_channels, dtype=DTYPE)
    else:
        shape = (spec.out_features, spec.in_features)
        bias = np.zeros(spec.out_features, dtype=DTYPE)
    weight = uniform_init(init_rng, shape, scale)
    feedback = uniform_init(feedback_rng, shape, scale)
    return LayerState(weight=weight, bias=bias, feedback=feedback)


# ---------------------------------------------------------------- tapes


@dataclass
class LayerTape:
    """What one layer's forward pass saved for its backward pass.

    Single use: the backward pass consumes the tape, and a second
    consumption raises.  This catches accidental reuse of stale
    activations across steps.
    """

    spec: LayerSpec
    x: Optional[np.ndarray]
    in_shape: tuple
    _used: bool = field(default=False, repr=False)

    def consume(self) -> None:
        if self._used:
            raise TapeError(f"tape for {type(self.spec).__name__} already consumed")
        self._used = True


# ------------------------------------------------------------- the rules


def layer_forward(spec: LayerSpec, state: Optional[LayerState], x: np.ndarray):
    """Apply one layer to a batch.  Returns (output, tape).

    ``x`` is (N, C, H, W) for spatial layers and (N, F) after flattening.
    """
    x = np.asarray(x, dtype=DTYPE)
    if isinstance(spec, Conv):
        _require_state(spec, state)
        if x.ndim != 4 or x.shape[1] != spec.in_channels:
            raise DimensionError(f"Conv expects (N, {spec.in_channels}, H, W), got {x.shape}")
        y = conv2d(x, state.weight, spec.stride) + state.bias[:, np.newaxis, np.newaxis]
        return y, LayerTape(spec, x, x.shape)
    if isinstance(spec, Dense):
        _require_state(spec, state)
        if x.ndim != 2 or x.shape[1] != spec.in_features:
            raise DimensionError(f"Dense expects (N, {spec.in_features}), got {x.shape}")
        y = x @ state.weight.T + state.bias
        return y, LayerTape(spec, x, x.shape)
    if isinstance(spec, Relu):
        return np.maximum(x, 0.0), LayerTape(spec, x, x.shape)
    if isinstance(spec, AvgPool):
        if x.ndim != 4:
            raise DimensionError(f"AvgPool expects (N, C, H, W), got {x.shape}")
        return avg_pool2(x), LayerTape(spec, None, x.shape)
    if isinstance(spec, Flatten):
        if x.ndim != 4:
            raise DimensionError(f"Flatten expects (N, C, H, W), got {x.shape}")
        return x.reshape(x.shape[0], -1), LayerTape(spec, None, x.shape)
    raise ContractError(f"not a layer spec: {spec!r}")


def layer_backward(
    spec: LayerSpec,
    state: Optional[LayerState],
    tape: LayerTape,
    delta: np.ndarray,
    mode: FeedbackMode,
):
    """Propagate the error one layer down.  Returns (input_delta, grads).

    ``grads`` is None for stateless layers and a (weight_grad, bias_grad)
    pair otherwise.  Parameter gradients are summed over the batch; the
    caller decides whether to average.  Only the routing of
    ``input_delta`` depends on ``mode``; parameter gradients use the same
    formula either way.
    """
    if tape.spec is not spec and tape.spec != spec:
        raise TapeError(f"tape was recorded for {tape.spec!r}, not {spec!r}")
    tape.consume()
    delta = np.asarray(delta, dtype=DTYPE)

    if isinstance(spec, Conv):
        _require_state(spec, state)
        kernels = state.weight if mode is FeedbackMode.WEIGHT_TRANSPORT else state.feedback
        dx = conv2d_input_grad(delta, kernels, tape.in_shape[1:], spec.stride)
        dw = conv2d_kernel_grad(tape.x, delta, spec.stride)
        db = delta.sum(axis=(0, 2, 3))
        return dx, (dw, db)
    if isinstance(spec, Dense):
        _require_state(spec, state)
        kernels = state.weight if mode is FeedbackMode.WEIGHT_TRANSPORT else state.feedback
        dx = delta @ kernels
        dw = delta.T @ tape.x
        db = delta.sum(axis=0)
        return dx, (dw, db)
    if isinstance(spec, Relu):
        # Subgradient 0 at exactly 0, matching forward's max(x, 0).
        return delta * (tape.x > 0.0), None
    if isinstance(spec, AvgPool):
        return avg_pool2_grad(delta, tape.in_shape), None
    if isinstance(spec, Flatten):
        return delta.reshape(tape.in_shape), None
    raise ContractError(f"not a layer spec: {spec!r}")


def _require_state(spec: LayerSpec, state: Optional[LayerState]) -> None:
    if state is None:
        raise ContractError(f"{type(spec).__name__} layer needs a LayerState")
