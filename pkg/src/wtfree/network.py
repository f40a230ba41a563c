"""Feedforward networks built from layer specs, plus the training loss.

A network is a tuple of layer specs with a declared per-sample input
shape and class count; parameters live in a parallel list of
``LayerState`` (None for stateless layers).  Shapes are validated once,
at construction, by walking the spec arithmetic, so a bad architecture
fails before any array is allocated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .layers import (
    AvgPool,
    Conv,
    Dense,
    FeedbackMode,
    Flatten,
    LayerSpec,
    LayerState,
    Relu,
    init_layer,
    layer_backward,
    layer_forward,
    spec_from_dict,
    spec_to_dict,
)
from .tensor import DTYPE, make_rng


def _next_shape(spec: LayerSpec, shape: tuple) -> tuple:
    """Per-sample output shape of one layer, or ConfigError if it cannot apply."""
    if isinstance(spec, Conv):
        if len(shape) != 3 or shape[0] != spec.in_channels:
            raise ConfigError(f"Conv({spec.in_channels}->{spec.out_channels}) cannot take {shape}")
        c, h, w = shape
        k, s = spec.kernel_size, spec.stride
        if h < k or w < k or (h - k) % s or (w - k) % s:
            raise ConfigError(f"Conv kernel {k} stride {s} does not tile input {h}x{w}")
        return (spec.out_channels, (h - k) // s + 1, (w - k) // s + 1)
    if isinstance(spec, AvgPool):
        if len(shape) != 3 or shape[1] % 2 or shape[2] % 2:
            raise ConfigError(f"AvgPool needs even spatial extents, got {shape}")
        return (shape[0], shape[1] // 2, shape[2] // 2)
    if isinstance(spec, Flatten):
        if len(shape) != 3:
            raise ConfigError(f"Flatten expects a (C, H, W) shape, got {shape}")
        return (shape[0] * shape[1] * shape[2],)
    if isinstance(spec, Dense):
        if shape != (spec.in_features,):
            raise ConfigError(f"Dense({spec.in_features}->{spec.out_features}) cannot take {shape}")
        return (spec.out_features,)
    if isinstance(spec, Relu):
        return shape
    raise ContractError(f"not a layer spec: {spec!r}")


@dataclass(frozen=True)
class NetworkSpec:
    """An ordered stack of layers mapping (C, H, W) images to class logits."""

    layers: tuple
    input_shape: tuple
    n_classes: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(e) for e in self.input_shape))
        if len(self.input_shape) != 3 or any(e < 1 for e in self.input_shape):
            raise ConfigError(f"input_shape must be (C, H, W), got {self.input_shape}")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        shape = self.input_shape
        for spec in self.layers:
            shape = _next_shape(spec, shape)
        if shape != (self.n_classes,):
            raise ConfigError(
                f"network output shape {shape} does not match n_classes={self.n_classes}"
            )

    def shapes(self) -> list:
        """Per-sample shapes after each layer, starting with the input."""
        out = [self.input_shape]
        for spec in self.layers:
            out.append(_next_shape(spec, out[-1]))
        return out

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "n_classes": self.n_classes,
            "layers": [spec_to_dict(s) for s in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        try:
            layers = tuple(spec_from_dict(ld) for ld in d["layers"])
            return cls(layers=layers, input_shape=tuple(d["input_shape"]), n_classes=int(d["n_classes"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad network description: {exc}") from None


def build_lenet(input_shape: Sequence[int], n_classes: int = 10) -> NetworkSpec:
    """Classic small convnet: two conv/pool stages, then three dense layers.

    Works for any (C, H, W) whose geometry survives two valid 5x5
    convolutions with 2x2 pooling, e.g. (1, 28, 28) or (3, 32, 32).
    """
    c, h, w = (int(e) for e in input_shape)

    def after(e: int) -> int:
        for _ in range(2):  # conv5 then pool2, twice
            e -= 4
            if e < 2 or e % 2:
                raise ConfigError(
                    f"input {h}x{w} does not survive two conv5+pool2 stages"
                )
            e //= 2
        return e

    flat = 16 * after(h) * after(w)
    layers = (
        Conv(c, 6, 5),
        Relu(),
        AvgPool(),
        Conv(6, 16, 5),
        Relu(),
        AvgPool(),
        Flatten(),
        Dense(flat, 120),
        Relu(),
        Dense(120, 84),
        Relu(),
        Dense(84, n_classes),
    )
    return NetworkSpec(layers=layers, input_shape=(c, h, w), n_classes=n_classes)


def init_network(
    spec: NetworkSpec, init_seed: int, feedback_seed: int
) -> list:
    """Fresh parameter list for every layer (None entries for stateless ones).

    Two seeds drive two independent streams: one for forward weights, one
    for the fixed feedback matrices.
    """
    init_rng = make_rng(init_seed)
    feedback_rng = make_rng(feedback_seed)
    return [init_layer(s, init_rng, feedback_rng) for s in spec.layers]


def _normalize_input(spec: NetworkSpec, x: np.ndarray):
    x = np.asarray(x, dtype=DTYPE)
    single = x.ndim == 3
    if single:
        x = x[np.newaxis]
    if x.ndim != 4 or x.shape[1:] != spec.input_shape:
        raise DimensionError(
            f"expected input shaped {spec.input_shape} (optionally batched), got {x.shape}"
        )
    return x, single


def network_forward(spec: NetworkSpec, states: Sequence[Optional[LayerState]], x: np.ndarray):
    """Run the stack.  Returns (logits, tapes); tapes feed network_backward.

    A single (C, H, W) sample is accepted and yields 1-d logits; batches
    are (N, C, H, W) in, (N, n_classes) out.
    """
    _check_states(spec, states)
    x, single = _normalize_input(spec, x)
    tapes = []
    for layer, state in zip(spec.layers, states):
        x, tape = layer_forward(layer, state, x)
        tapes.append(tape)
    return (x[0] if single else x), tapes


def network_logits(spec: NetworkSpec, states: Sequence[Optional[LayerState]], x: np.ndarray):
    """Forward pass without keeping tapes."""
    logits, _ = network_forward(spec, states, x)
    return logits


def network_backward(
    spec: NetworkSpec,
    states: Sequence[Optional[LayerState]],
    tapes: list,
    output_delta: np.ndarray,
    mode: FeedbackMode,
):
    """Propagate an output-layer error to the input.

    Returns (input_grad, param_grads), where param_grads lines up with
    ``states`` (None for stateless layers, (weight_grad, bias_grad)
    otherwise).  Parameter gradients are summed over the batch.
    """
    _check_states(spec, states)
    if len(tapes) != len(spec.layers):
        raise ContractError(f"expected {len(spec.layers)} tapes, got {len(tapes)}")
    delta = np.asarray(output_delta, dtype=DTYPE)
    single = delta.ndim == 1
    if single:
        delta = delta[np.newaxis]
    if delta.ndim != 2 or delta.shape[1] != spec.n_classes:
        raise DimensionError(f"output delta must have {spec.n_classes} columns, got {delta.shape}")
    grads = [None] * len(spec.layers)
    for i in range(len(spec.layers) - 1, -1, -1):
        delta, grads[i] = layer_backward(spec.layers[i], states[i], tapes[i], delta, mode)
    return (delta[0] if single else delta), grads


def _check_states(spec: NetworkSpec, states: Sequence[Optional[LayerState]]) -> None:
    if len(states) != len(spec.layers):
        raise ContractError(f"expected {len(spec.layers)} layer states, got {len(states)}")


def tie_feedback(states: Sequence[Optional[LayerState]]) -> list:
    """Copies of the states with every feedback matrix set equal to the weights.

    With tied feedback the two routing modes are the same computation, so
    their outputs must agree bit for bit; this is the standard control
    when separating the effect of the routing from everything else.
    """
    return [
        None if s is None else LayerState(weight=s.weight, bias=s.bias, feedback=s.weight.copy())
        for s in states
    ]


# ------------------------------------------------------------------ loss


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for overflow safety."""
    logits = np.asarray(logits, dtype=DTYPE)
    single = logits.ndim == 1
    z = logits[np.newaxis] if single else logits
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return p[0] if single else p


def loss_and_output_delta(logits: np.ndarray, labels: np.ndarray):
    """Per-sample cross-entropy and its gradient at the logits.

    Returns (losses, delta) with delta = softmax(logits) - onehot(labels),
    unscaled: every sample contributes its own full gradient, and callers
    that want a batch mean divide by N themselves.  The delta is the same
    object regardless of how errors are later routed backward, since the
    routing choice only affects layers below the output.
    """
    logits = np.asarray(logits, dtype=DTYPE)
    single = logits.ndim == 1
    z = logits[np.newaxis] if single else logits
    labels = np.atleast_1d(np.asarray(labels))
    if not np.issubdtype(labels.dtype, np.integer):
        raise ContractError(f"labels must be integers, got dtype {labels.dtype}")
    n, k = z.shape
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ContractError(f"labels must lie in [0, {k}), got range "
                            f"[{labels.min()}, {labels.max()}]")
    shifted = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    losses = logsumexp - shifted[rows, labels]
    delta = softmax_probs(z)
    delta[rows, labels] -= 1.0
    if single:
        return float(losses[0]), delta[0]
    return losses, delta


def predictions(logits: np.ndarray) -> np.ndarray:
    """Argmax class per row (ties break toward the lower index)."""
    logits = np.asarray(logits)
    return np.argmax(logits, axis=-1)
