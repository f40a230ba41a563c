"""Experiment harness: robustness sweeps, transfer matrices, angle tracking.

Three experiment families, all emitting plot-ready tabular reports:

* epsilon_sweep: each network attacked with its own gradient routing
  (self-attack), accuracy per (attack, epsilon) cell;
* transfer_sweep: adversarial examples generated on one network and
  evaluated on the other, both directions;
* angle tracking: per-layer angles between the weight updates the two
  routing modes would take, recorded over training steps.

Reports are value objects with a fixed column order and a deterministic
row sort, so two runs with the same inputs emit byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .attacks import ATTACK_NAMES, GradientOracle, run_attack
from .checkpoint import Checkpoint
from .data import LabeledImageSet
from .errors import ConfigError, ContractError, DimensionError
from .layers import FeedbackMode
from .network import (
    init_network,
    loss_and_output_delta,
    network_backward,
    network_forward,
    predictions,
    tie_feedback,
)
from .training import TrainConfig, train

DEFAULT_EPSILONS = tuple(i / 10 for i in range(11))


@dataclass(frozen=True)
class SweepConfig:
    """Grid description for the robustness experiments.

    The epsilon grid must be strictly ascending and start at 0, so every
    sweep carries its own clean-accuracy baseline.
    """

    epsilons: Tuple[float, ...] = DEFAULT_EPSILONS
    attacks: Tuple[str, ...] = ATTACK_NAMES
    n_iter: int = 10
    momentum: float = 0.8
    n_samples: int = 1000
    sample_seed: int = 0

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        object.__setattr__(self, "epsilons", eps)
        object.__setattr__(self, "attacks", tuple(self.attacks))
        if not eps or eps[0] != 0.0:
            raise ConfigError(f"epsilon grid must start at 0, got {eps[:3]}...")
        if any(b <= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("epsilon grid must be strictly ascending")
        if not self.attacks:
            raise ConfigError("at least one attack is required")
        unknown = [a for a in self.attacks if a not in ATTACK_NAMES]
        if unknown:
            raise ConfigError(f"unknown attacks {unknown}, expected subset of {ATTACK_NAMES}")
        if self.n_iter < 1:
            raise ConfigError(f"n_iter must be >= 1, got {self.n_iter}")
        if self.momentum < 0:
            raise ConfigError(f"momentum must be non-negative, got {self.momentum}")
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {self.n_samples}")


@dataclass(frozen=True)
class SweepRow:
    attack: str
    gradient_mode: str
    target: str
    epsilon: float
    adversarial_accuracy: float
    n_samples: int


@dataclass(frozen=True)
class TransferRow:
    attack: str
    direction: str
    epsilon: float
    accuracy: float
    n_samples: int


@dataclass(frozen=True)
class AngleRow:
    layer: int
    step: int
    angle_degrees: Optional[float]


@dataclass
class SweepReport:
    rows: List[SweepRow] = field(default_factory=list)
    columns = ("attack", "gradient_mode", "target", "epsilon", "adversarial_accuracy", "n_samples")

    def sorted_rows(self) -> List[SweepRow]:
        return sorted(self.rows, key=lambda r: (r.attack, r.gradient_mode, r.target, r.epsilon))


@dataclass
class TransferReport:
    rows: List[TransferRow] = field(default_factory=list)
    columns = ("attack", "direction", "epsilon", "accuracy", "n_samples")

    def sorted_rows(self) -> List[TransferRow]:
        return sorted(self.rows, key=lambda r: (r.attack, r.direction, r.epsilon))


@dataclass
class AngleReport:
    rows: List[AngleRow] = field(default_factory=list)
    columns = ("layer", "step", "angle_degrees")

    def sorted_rows(self) -> List[AngleRow]:
        return sorted(self.rows, key=lambda r: (r.step, r.layer))


# -------------------------------------------------------------- the sweeps


def _self_oracles(bp_ckpt: Checkpoint, fa_ckpt: Checkpoint):
    if bp_ckpt.spec != fa_ckpt.spec:
        raise ConfigError(
            "checkpoints have different architectures; sweeps need matching networks"
        )
    return (
        GradientOracle(bp_ckpt.spec, bp_ckpt.states, FeedbackMode.WEIGHT_TRANSPORT),
        GradientOracle(fa_ckpt.spec, fa_ckpt.states, FeedbackMode.FEEDBACK_ALIGNMENT),
    )


def _subset(test_set: LabeledImageSet, cfg: SweepConfig) -> LabeledImageSet:
    if len(test_set) == 0:
        raise ContractError("test set is empty")
    return test_set.take(cfg.n_samples, seed=cfg.sample_seed)


def _accuracy_against(oracle: GradientOracle, images: np.ndarray, labels: np.ndarray) -> float:
    hits = 0
    for start in range(0, images.shape[0], 256):
        chunk = slice(start, start + 256)
        hits += int((predictions(oracle.logits(images[chunk])) == labels[chunk]).sum())
    return hits / images.shape[0]


def _run_cells(cells, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda f: f(), cells))
    return [f() for f in cells]


def epsilon_sweep(
    bp_ckpt: Checkpoint,
    fa_ckpt: Checkpoint,
    test_set: LabeledImageSet,
    cfg: SweepConfig,
    threads: int = 1,
) -> SweepReport:
    """Self-attack grid: each network attacked through its own routing.

    The epsilon=0 rows are the clean accuracies, reproduced exactly (no
    attack is run for them).  All cells share one seeded subset of the
    test set, so columns are comparable across attacks and epsilons.
    """
    subset = _subset(test_set, cfg)
    oracles = dict(zip(("bp", "fa"), _self_oracles(bp_ckpt, fa_ckpt)))
    clean = {name: _accuracy_against(o, subset.images, subset.labels) for name, o in oracles.items()}

    def cell(attack: str, name: str, eps: float):
        oracle = oracles[name]

        def run() -> SweepRow:
            if eps == 0.0:
                acc = clean[name]
            else:
                adv = run_attack(
                    oracle, attack, subset.images, subset.labels, eps, cfg.n_iter, cfg.momentum
                )
                acc = _accuracy_against(oracle, adv, subset.labels)
            return SweepRow(
                attack=attack,
                gradient_mode=name,
                target=name,
                epsilon=eps,
                adversarial_accuracy=acc,
                n_samples=len(subset),
            )

        return run

    cells = [
        cell(attack, name, eps)
        for attack in cfg.attacks
        for name in ("bp", "fa")
        for eps in cfg.epsilons
    ]
    return SweepReport(rows=_run_cells(cells, threads))


def transfer_sweep(
    bp_ckpt: Checkpoint,
    fa_ckpt: Checkpoint,
    test_set: LabeledImageSet,
    cfg: SweepConfig,
    threads: int = 1,
) -> TransferReport:
    """Cross-network grid: generate on the source, evaluate on the target.

    Direction strings name source then target: "bp->fa" means examples
    crafted with the backprop-trained network's own gradients, scored on
    the fixed-feedback network.
    """
    subset = _subset(test_set, cfg)
    bp_oracle, fa_oracle = _self_oracles(bp_ckpt, fa_ckpt)
    routes = {
        "bp->fa": (bp_oracle, fa_oracle),
        "fa->bp": (fa_oracle, bp_oracle),
    }
    clean = {
        "bp->fa": _accuracy_against(fa_oracle, subset.images, subset.labels),
        "fa->bp": _accuracy_against(bp_oracle, subset.images, subset.labels),
    }

    def cell(attack: str, direction: str, eps: float):
        source, target = routes[direction]

        def run() -> TransferRow:
            if eps == 0.0:
                acc = clean[direction]
            else:
                adv = run_attack(
                    source, attack, subset.images, subset.labels, eps, cfg.n_iter, cfg.momentum
                )
                acc = _accuracy_against(target, adv, subset.labels)
            return TransferRow(
                attack=attack,
                direction=direction,
                epsilon=eps,
                accuracy=acc,
                n_samples=len(subset),
            )

        return run

    cells = [
        cell(attack, direction, eps)
        for attack in cfg.attacks
        for direction in ("bp->fa", "fa->bp")
        for eps in cfg.epsilons
    ]
    return TransferReport(rows=_run_cells(cells, threads))


# ------------------------------------------------------------ angle tools


def vector_angle_degrees(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    """Angle between two flattened arrays, or None when either has norm 0."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"cannot compare gradients shaped {a.shape} and {b.shape}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return None
    # Equal and opposite arrays are decided by value, not by the cosine:
    # sqrt(d)**2 != d in floats, so the quotient misses +/-1 by an ulp at
    # exactly the endpoints that matter (tied feedback must read 0.0).
    if np.array_equal(a, b):
        return 0.0
    if np.array_equal(a, -b):
        return 180.0
    cosine = float(np.dot(a, b)) / (na * nb)
    return math.degrees(math.acos(max(-1.0, min(1.0, cosine))))


def gradient_angle(bp_grads: Sequence, fa_grads: Sequence) -> List[Tuple[int, Optional[float]]]:
    """Per-layer angle between the weight gradients of the two routings.

    Inputs are the parallel gradient lists network_backward returns (None
    for stateless layers, (weight_grad, bias_grad) otherwise), computed
    from the same input, labels, and states.  Only the weight part is
    compared.  Returns (layer_index, angle) pairs for parameterized
    layers; an angle of None marks the undefined case where a gradient
    vanished.
    """
    if len(bp_grads) != len(fa_grads):
        raise DimensionError(
            f"gradient lists have different lengths: {len(bp_grads)} vs {len(fa_grads)}"
        )
    out = []
    for i, (gb, gf) in enumerate(zip(bp_grads, fa_grads)):
        if (gb is None) != (gf is None):
            raise DimensionError(f"layer {i}: one gradient list has an entry, the other does not")
        if gb is None:
            continue
        dw_b, _ = gb
        dw_f, _ = gf
        if dw_b.shape != dw_f.shape:
            raise DimensionError(
                f"layer {i}: gradient shapes differ, {dw_b.shape} vs {dw_f.shape}"
            )
        out.append((i, vector_angle_degrees(dw_b, dw_f)))
    return out


def mode_gradients(spec, states, x, labels):
    """Weight gradients under both routings for one (input, label, states).

    Two passes because forward tapes are single-use; the output delta is
    identical in both, so any difference below the top layer is pure
    routing.
    """
    grads = {}
    for mode in (FeedbackMode.WEIGHT_TRANSPORT, FeedbackMode.FEEDBACK_ALIGNMENT):
        logits, tapes = network_forward(spec, states, x)
        _, delta = loss_and_output_delta(logits, labels)
        _, grads[mode] = network_backward(spec, states, tapes, delta, mode)
    return grads[FeedbackMode.WEIGHT_TRANSPORT], grads[FeedbackMode.FEEDBACK_ALIGNMENT]


def angle_over_training(
    spec,
    config: TrainConfig,
    dataset: LabeledImageSet,
    probe_size: int = 128,
    every: int = 1,
    initial_states: Optional[list] = None,
    tie: bool = False,
) -> AngleReport:
    """Track per-layer update angles while a network trains.

    A fixed probe batch (the first probe_size samples) is re-measured as
    parameters evolve: step 0 is the initialization, step s the state
    after s updates.  Records every ``every``-th step plus step 0 and the
    final step.  With tie=True each measurement first copies the current
    weights into the feedback matrices, which forces every defined angle
    to 0 -- a live self-check of the measurement machinery.
    """
    if every < 1:
        raise ConfigError(f"every must be >= 1, got {every}")
    probe = dataset.take(min(probe_size, len(dataset)))
    rows: List[AngleRow] = []

    def record(step: int, states: list) -> None:
        measured = tie_feedback(states) if tie else states
        bp_g, fa_g = mode_gradients(spec, measured, probe.images, probe.labels)
        for layer, angle in gradient_angle(bp_g, fa_g):
            rows.append(AngleRow(layer=layer, step=step, angle_degrees=angle))

    total_steps = config.epochs * math.ceil(len(dataset) / config.batch_size)

    def on_step(epoch: int, step: int, states: list) -> None:
        version = step + 1  # states after this many updates
        if version % every == 0 or version == total_steps:
            record(version, states)

    result = train(
        spec, config, dataset, initial_states=initial_states, on_step=on_step
    )
    # Step 0 is the initialization; rebuilding from the trainer's derived
    # seeds reproduces exactly the states it started from.
    init_states = initial_states
    if init_states is None:
        init_states = init_network(spec, result.init_seed, result.feedback_seed)
    record(0, init_states)
    return AngleReport(rows=rows)


# ------------------------------------------------------------- report I/O


def _format_value(v) -> str:
    if v is None:
        return "undefined"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _json_value(v):
    if isinstance(v, float):
        return round(v, 6)
    return v


def emit_report(report, path, fmt: str = "csv") -> None:
    """Write a report as CSV or JSON lines.

    Columns keep their declared order; rows are sorted the same way every
    time; floats carry six decimal digits.  Undefined angles become the
    string "undefined" in CSV and null in JSON lines.
    """
    columns = report.columns
    rows = report.sorted_rows()
    if fmt == "csv":
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_format_value(getattr(row, c)) for c in columns])
    elif fmt in ("jsonl", "json-lines"):
        with open(path, "w") as f:
            for row in rows:
                f.write(json.dumps({c: _json_value(getattr(row, c)) for c in columns}))
                f.write("\n")
    else:
        raise ConfigError(f"unknown report format {fmt!r}, expected 'csv' or 'jsonl'")
