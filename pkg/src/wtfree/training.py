"""Plain SGD training with selectable backward routing.

One master seed drives everything: parameter init, the fixed feedback
draw, and per-epoch shuffling all come from separate streams derived
from it, so a (config, dataset) pair reproduces training bit for bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .data import LabeledImageSet, batch_indices
from .errors import ConfigError, ContractError, DimensionError, TrainingDivergedError
from .layers import FeedbackMode
from .network import (
    NetworkSpec,
    init_network,
    loss_and_output_delta,
    network_backward,
    network_forward,
    network_logits,
    predictions,
)
from .tensor import make_rng, spawn_seeds


@dataclass(frozen=True)
class TrainConfig:
    mode: FeedbackMode
    epochs: int
    learning_rate: float = 0.05
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        # epochs == 0 is allowed: it means "just initialize".
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not isinstance(self.mode, FeedbackMode):
            raise ConfigError(f"mode must be a FeedbackMode, got {self.mode!r}")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    mean_loss: float
    clean_accuracy: float


@dataclass
class TrainResult:
    states: list
    metrics: List[EpochMetrics]
    init_seed: int
    feedback_seed: int


def apply_gradients(states: list, grads: list, learning_rate: float) -> list:
    """Descend: W <- W - lr*dW, b <- b - lr*db.  Feedback is untouched.

    Pure function of (states, grads); zero gradients or a zero learning
    rate give back states with identical parameter values.
    """
    if learning_rate < 0:
        raise ConfigError(f"learning_rate must be non-negative, got {learning_rate}")
    if len(grads) != len(states):
        raise DimensionError(f"{len(states)} states but {len(grads)} gradients")
    new_states = []
    for state, grad in zip(states, grads):
        if grad is None:
            if state is not None:
                raise DimensionError("gradient missing for a parameterized layer")
            new_states.append(state)
            continue
        dw, db = grad
        if state is None:
            raise DimensionError("gradient supplied for a stateless layer")
        if dw.shape != state.weight.shape or db.shape != state.bias.shape:
            raise DimensionError(
                f"gradient shapes {dw.shape}/{db.shape} do not match parameters "
                f"{state.weight.shape}/{state.bias.shape}"
            )
        new_states.append(
            state.with_params(
                state.weight - learning_rate * dw,
                state.bias - learning_rate * db,
            )
        )
    return new_states


def sgd_step(
    spec: NetworkSpec,
    states: list,
    x: np.ndarray,
    labels: np.ndarray,
    learning_rate: float,
    mode: FeedbackMode,
):
    """One mean-gradient descent step.  Returns (new_states, mean_loss).

    The input states are not mutated; the returned list holds fresh
    weight/bias arrays but the very same frozen feedback objects.
    Overflow during a blow-up is tolerated silently here because the
    trainer checks the loss for finiteness after every step.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        logits, tapes = network_forward(spec, states, x)
        losses, delta = loss_and_output_delta(logits, labels)
        delta = delta / float(len(labels))
        _, grads = network_backward(spec, states, tapes, delta, mode)
        new_states = apply_gradients(states, grads, learning_rate)
    return new_states, float(np.mean(losses))


def evaluate_accuracy(
    spec: NetworkSpec, states: list, dataset: LabeledImageSet, batch_size: int = 256
) -> float:
    """Fraction of samples whose argmax logit matches the label.

    Argmax ties break toward the lowest class index.
    """
    if len(dataset) == 0:
        raise ContractError("cannot evaluate accuracy on an empty dataset")
    hits = 0
    for idx in batch_indices(len(dataset), batch_size):
        logits = network_logits(spec, states, dataset.images[idx])
        hits += int((predictions(logits) == dataset.labels[idx]).sum())
    return hits / len(dataset)


def train(
    spec: NetworkSpec,
    config: TrainConfig,
    dataset: LabeledImageSet,
    eval_set: Optional[LabeledImageSet] = None,
    initial_states: Optional[list] = None,
    on_step: Optional[Callable[[int, int, list], None]] = None,
) -> TrainResult:
    """Run SGD for the configured number of epochs.

    ``eval_set`` controls which data the per-epoch accuracy is measured
    on (the training set when omitted).  ``initial_states`` lets a caller
    continue from existing parameters instead of a fresh init.
    ``on_step`` is called as on_step(epoch, global_step, states) after
    every parameter update; the angle tracking in the harness hangs off
    this hook.

    A non-finite batch loss aborts with TrainingDivergedError carrying
    the epoch, batch index, and offending loss value.
    """
    if len(dataset) == 0:
        raise ContractError("cannot train on an empty dataset")
    if dataset.input_shape != spec.input_shape:
        raise ConfigError(
            f"dataset images {dataset.input_shape} do not fit network input {spec.input_shape}"
        )
    if dataset.n_classes != spec.n_classes:
        raise ConfigError(
            f"dataset has {dataset.n_classes} classes, network expects {spec.n_classes}"
        )
    init_seed, feedback_seed, shuffle_seed = spawn_seeds(config.seed, 3)
    states = initial_states if initial_states is not None else init_network(
        spec, init_seed, feedback_seed
    )
    metrics: List[EpochMetrics] = []
    step = 0
    for epoch in range(config.epochs):
        # Fresh stream per epoch keeps shuffles independent of batch count.
        epoch_seed = np.random.SeedSequence([shuffle_seed, epoch]).generate_state(
            1, dtype=np.uint64
        )[0]
        shuffle_rng = make_rng(int(epoch_seed))
        total_loss = 0.0
        for batch_no, idx in enumerate(batch_indices(len(dataset), config.batch_size, shuffle_rng)):
            states, mean_loss = sgd_step(
                spec,
                states,
                dataset.images[idx],
                dataset.labels[idx],
                config.learning_rate,
                config.mode,
            )
            if not np.isfinite(mean_loss):
                raise TrainingDivergedError(epoch=epoch, batch=batch_no, loss=mean_loss)
            total_loss += mean_loss * len(idx)
            if on_step is not None:
                on_step(epoch, step, states)
            step += 1
        measured = eval_set if eval_set is not None else dataset
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                mean_loss=total_loss / len(dataset),
                clean_accuracy=evaluate_accuracy(spec, states, measured),
            )
        )
    return TrainResult(
        states=states, metrics=metrics, init_seed=init_seed, feedback_seed=feedback_seed
    )


def write_metrics_csv(path, metrics: List[EpochMetrics]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "mean_loss", "clean_accuracy"])
        for m in metrics:
            writer.writerow([m.epoch, f"{m.mean_loss:.6f}", f"{m.clean_accuracy:.6f}"])
