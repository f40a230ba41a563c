"""Gradient-based evasion attacks on image classifiers.

Three attacks are provided, all operating on pixel values in [0, 1]:

* fgsm: one signed-gradient step of size epsilon;
* bim: n signed steps of size epsilon/n, re-clipped after every step to
  the epsilon-ball around the original image intersected with [0, 1];
* mifgsm: like bim, but steps follow an accumulated velocity with decay
  mu, each raw gradient first normalized to unit L1 norm per sample.

The gradients come from a GradientOracle, which pairs a trained network
with a routing mode, so any attack can be driven either by true
backpropagation gradients or by the error signals the network would see
under fixed-feedback training.  Attacks never mutate their inputs.
"""

from __future__ import annotations

import json
import os
from typing import Optional

import numpy as np

from .checkpoint import load_checkpoint
from .data import save_cifar10_binary, save_idx_images, save_idx_labels
from .errors import ConfigError, ContractError
from .layers import FeedbackMode
from .network import (
    NetworkSpec,
    loss_and_output_delta,
    network_backward,
    network_forward,
    predictions,
)
from .tensor import DTYPE, clip_box, sign

ATTACK_NAMES = ("fgsm", "bim", "mifgsm")

# Floor for the L1 normalization in the momentum update; gradients this
# small mean the attack has nothing to follow and the step becomes inert.
L1_GUARD = 1e-12


class GradientOracle:
    """A trained network exposed as a source of input-space gradients."""

    def __init__(self, spec: NetworkSpec, states: list, mode: FeedbackMode):
        if not isinstance(mode, FeedbackMode):
            raise ConfigError(f"mode must be a FeedbackMode, got {mode!r}")
        self.spec = spec
        self.states = list(states)
        self.mode = mode

    @classmethod
    def from_checkpoint(cls, path, mode: Optional[FeedbackMode] = None) -> "GradientOracle":
        """Build from a saved network.

        When ``mode`` is omitted the checkpoint metadata must carry the
        gradient_mode it was trained with, and that mode is used.
        """
        ck = load_checkpoint(path)
        if mode is None:
            recorded = ck.metadata.get("gradient_mode")
            if not recorded:
                raise ConfigError(
                    f"{path}: checkpoint metadata has no gradient_mode; pass one explicitly"
                )
            mode = FeedbackMode.parse(recorded)
        return cls(ck.spec, ck.states, mode)

    def logits(self, x: np.ndarray) -> np.ndarray:
        out, _ = network_forward(self.spec, self.states, x)
        return out

    def predictions(self, x: np.ndarray) -> np.ndarray:
        return predictions(self.logits(x))

    def input_gradient(self, x: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """d(per-sample loss)/dx, routed per the oracle's mode.

        Per-sample: no batch averaging, so each row is that sample's own
        gradient.
        """
        logits, tapes = network_forward(self.spec, self.states, x)
        _, delta = loss_and_output_delta(logits, labels)
        grad, _ = network_backward(self.spec, self.states, tapes, delta, self.mode)
        return grad


def _check_attack_inputs(x: np.ndarray, epsilon: float) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    if epsilon < 0:
        raise ContractError(f"epsilon must be non-negative, got {epsilon}")
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ContractError(
            f"attack inputs must lie in [0, 1], got [{x.min()}, {x.max()}]"
        )
    return x


def fgsm(oracle: GradientOracle, x: np.ndarray, labels, epsilon: float) -> np.ndarray:
    """One signed-gradient step, then clip back to valid pixels."""
    x = _check_attack_inputs(x, epsilon)
    grad = oracle.input_gradient(x, labels)
    return clip_box(x + epsilon * sign(grad), 0.0, 1.0)


def _ball_bounds(x: np.ndarray, epsilon: float):
    lo = np.maximum(x - epsilon, 0.0)
    hi = np.minimum(x + epsilon, 1.0)
    return lo, hi


def bim(
    oracle: GradientOracle, x: np.ndarray, labels, epsilon: float, n_iter: int = 10
) -> np.ndarray:
    """Iterative signed steps of size epsilon/n_iter inside the epsilon ball."""
    x = _check_attack_inputs(x, epsilon)
    if n_iter < 1:
        raise ContractError(f"n_iter must be >= 1, got {n_iter}")
    alpha = epsilon / n_iter
    lo, hi = _ball_bounds(x, epsilon)
    adv = x
    for _ in range(n_iter):
        grad = oracle.input_gradient(adv, labels)
        adv = clip_box(adv + alpha * sign(grad), lo, hi)
    return adv


def momentum_update(velocity: np.ndarray, grad: np.ndarray, decay: float) -> np.ndarray:
    """One velocity update: v <- decay * v + grad / max(||grad||_1, guard).

    The L1 norm is taken per sample (over everything but the batch axis)
    so each sample's history accumulates at a comparable scale.
    """
    grad = np.asarray(grad, dtype=DTYPE)
    axes = tuple(range(1, grad.ndim)) if grad.ndim > 1 else None
    if axes:
        norm = np.abs(grad).sum(axis=axes, keepdims=True)
    else:
        norm = np.abs(grad).sum()
    norm = np.maximum(norm, L1_GUARD)
    return decay * velocity + grad / norm


def mifgsm(
    oracle: GradientOracle,
    x: np.ndarray,
    labels,
    epsilon: float,
    n_iter: int = 10,
    momentum: float = 0.8,
) -> np.ndarray:
    """Momentum-guided iterative attack with per-sample L1 normalization."""
    x = _check_attack_inputs(x, epsilon)
    if n_iter < 1:
        raise ContractError(f"n_iter must be >= 1, got {n_iter}")
    if momentum < 0:
        raise ContractError(f"momentum must be non-negative, got {momentum}")
    alpha = epsilon / n_iter
    lo, hi = _ball_bounds(x, epsilon)
    adv = x
    velocity = np.zeros_like(x)
    for _ in range(n_iter):
        grad = oracle.input_gradient(adv, labels)
        velocity = momentum_update(velocity, grad, momentum)
        adv = clip_box(adv + alpha * sign(velocity), lo, hi)
    return adv


def run_attack(
    oracle: GradientOracle,
    method: str,
    x: np.ndarray,
    labels,
    epsilon: float,
    n_iter: int = 10,
    momentum: float = 0.8,
) -> np.ndarray:
    """Dispatch one of the named attacks."""
    if method == "fgsm":
        return fgsm(oracle, x, labels, epsilon)
    if method == "bim":
        return bim(oracle, x, labels, epsilon, n_iter)
    if method == "mifgsm":
        return mifgsm(oracle, x, labels, epsilon, n_iter, momentum)
    raise ConfigError(f"unknown attack {method!r}, expected one of {ATTACK_NAMES}")


def dump_adversarial(out_dir, stem: str, images: np.ndarray, labels: np.ndarray, meta: dict):
    """Write adversarial images in the format their source dataset uses.

    One-channel images go out as an IDX pair, (3, 32, 32) images as a
    single binary batch file.  A JSON sidecar records the attack
    parameters plus the quantization warning (u8 rounds pixels to the
    nearest 1/255).  Returns the list of paths written.
    """
    images = np.asarray(images)
    labels = np.asarray(labels)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if images.ndim == 4 and images.shape[1] == 1:
        ip = os.path.join(out_dir, f"{stem}-images-idx3-ubyte")
        lp = os.path.join(out_dir, f"{stem}-labels-idx1-ubyte")
        save_idx_images(ip, images)
        save_idx_labels(lp, labels)
        written += [ip, lp]
        fmt = "idx-u8"
    elif images.ndim == 4 and images.shape[1:] == (3, 32, 32):
        bp = os.path.join(out_dir, f"{stem}.bin")
        save_cifar10_binary(bp, images, labels)
        written.append(bp)
        fmt = "batch-bin-u8"
    else:
        raise ContractError(f"no on-disk image format for shape {images.shape}")
    sidecar = os.path.join(out_dir, f"{stem}.json")
    record = {
        "format": fmt,
        "n_samples": int(images.shape[0]),
        "note": "pixels quantized to the u8 grid (nearest 1/255)",
    }
    record.update(meta)
    with open(sidecar, "w") as f:
        json.dump(record, f, indent=2, sort_keys=True)
        f.write("\n")
    written.append(sidecar)
    return written
