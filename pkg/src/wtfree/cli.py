"""Command line front end.

Five subcommands cover the full experimental loop:

* train     -- fit a network with either backward routing, save a checkpoint
* attack    -- perturb test images against one checkpoint, dump the results
* sweep     -- self-attack accuracy grid over attacks and budgets
* transfer  -- cross-network grid (examples made on one net, scored on the other)
* angles    -- per-layer update-angle trace over a training run

Every run writes a ``config.resolved`` snapshot of the settings it actually
used next to its outputs, in the same flat key=value format ``--config``
reads, so any run can be replayed byte-for-byte by pointing ``--config`` at
the snapshot.  Explicit command line flags always win over config values.

Exit codes: 0 success, 2 bad usage or configuration, 3 file system trouble,
4 malformed data or checkpoint files, 5 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from typing import Optional

from .attacks import ATTACK_NAMES, GradientOracle, dump_adversarial, run_attack
from .checkpoint import load_checkpoint, save_checkpoint
from .data import load_named_dataset
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataFormatError,
    TrainingDivergedError,
)
from .harness import (
    SweepConfig,
    angle_over_training,
    emit_report,
    epsilon_sweep,
    transfer_sweep,
)
from .layers import FeedbackMode
from .network import build_lenet
from .training import TrainConfig, train, write_metrics_csv

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_PARSE = 4
EXIT_DIVERGED = 5

DEFAULT_GRID = "0.0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0"
DEFAULT_ATTACKS = ",".join(ATTACK_NAMES)
SNAPSHOT_NAME = "config.resolved"


# ------------------------------------------------------------ config files


def read_config_file(path: str) -> dict:
    """Flat key=value settings, '#' comments and blank lines ignored."""
    values = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def apply_config_defaults(subparser: argparse.ArgumentParser, values: dict) -> None:
    """Install config-file values as parser defaults (flags still override)."""
    actions = {
        a.dest: a
        for a in subparser._actions
        if a.dest not in ("help", "config") and not isinstance(a, argparse._SubParsersAction)
    }
    for key, text in values.items():
        action = actions.get(key)
        if action is None:
            raise ConfigError(
                f"unknown config key {key!r}; valid keys: {sorted(actions)}"
            )
        if isinstance(action, argparse._StoreTrueAction):
            value = _parse_bool(text)
        elif action.type is not None:
            try:
                value = action.type(text)
            except (TypeError, ValueError):
                raise ConfigError(f"config key {key!r}: cannot read {text!r}")
        else:
            value = text
        subparser.set_defaults(**{key: value})


def write_snapshot(out_dir: str, args: argparse.Namespace) -> str:
    """Record every resolved setting of this run as a replayable config."""
    skip = {"func", "command", "config"}
    lines = []
    for key, value in sorted(vars(args).items()):
        if key in skip or value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key}={value}")
    path = os.path.join(out_dir, SNAPSHOT_NAME)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    return path


def _parse_grid(text: str) -> tuple:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise ConfigError(f"cannot read epsilon grid {text!r}; expected numbers like {DEFAULT_GRID}")


def _parse_attacks(text: str) -> tuple:
    return tuple(tok.strip() for tok in text.split(",") if tok.strip())


def _prepare_out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


# -------------------------------------------------------------- subcommands


def cmd_train(args) -> int:
    mode = FeedbackMode.parse(args.mode)
    train_set = load_named_dataset(args.dataset, "train", args.data_dir)
    test_set = load_named_dataset(args.dataset, "test", args.data_dir)
    spec = build_lenet(train_set.input_shape, n_classes=train_set.n_classes)
    config = TrainConfig(
        mode=mode,
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch,
        seed=args.seed,
    )
    result = train(spec, config, train_set, eval_set=test_set)
    out = _prepare_out(args)
    ckpt_path = os.path.join(out, f"{args.mode}.ckpt")
    save_checkpoint(
        ckpt_path,
        spec,
        result.states,
        result.init_seed,
        result.feedback_seed,
        metadata={
            "gradient_mode": args.mode,
            "dataset": args.dataset,
            "epochs": args.epochs,
            "learning_rate": args.lr,
            "batch_size": args.batch,
            "seed": args.seed,
        },
    )
    write_metrics_csv(os.path.join(out, "metrics.csv"), result.metrics)
    write_snapshot(out, args)
    if result.metrics:
        last = result.metrics[-1]
        print(f"epoch {last.epoch}: loss {last.mean_loss:.4f}, accuracy {last.clean_accuracy:.4f}")
    else:
        print("initialized without training (0 epochs)")
    print(f"checkpoint: {ckpt_path}")
    return EXIT_OK


def cmd_attack(args) -> int:
    if args.checkpoint is None:
        raise ConfigError("missing required settings: --checkpoint")
    override = FeedbackMode.parse(args.grad_mode) if args.grad_mode else None
    oracle = GradientOracle.from_checkpoint(args.checkpoint, mode=override)
    test_set = load_named_dataset(args.dataset, "test", args.data_dir)
    subset = test_set.take(args.samples, seed=args.seed)
    x, y = subset.images, subset.labels
    adv = run_attack(oracle, args.attack, x, y, args.eps, args.n, args.mu)
    clean_pred = oracle.predictions(x)
    adv_pred = oracle.predictions(adv)

    out = _prepare_out(args)
    results_path = os.path.join(out, "results.csv")
    with open(results_path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["index", "label", "clean_prediction", "adversarial_prediction", "success"])
        for i in range(len(subset)):
            writer.writerow(
                [i, int(y[i]), int(clean_pred[i]), int(adv_pred[i]), int(adv_pred[i] != y[i])]
            )
    written = dump_adversarial(
        out,
        f"adv-{args.attack}",
        adv,
        y,
        meta={
            "attack": args.attack,
            "epsilon": args.eps,
            "n_iter": args.n,
            "momentum": args.mu,
            "checkpoint": os.path.basename(args.checkpoint),
        },
    )
    write_snapshot(out, args)
    clean_acc = float((clean_pred == y).mean())
    adv_acc = float((adv_pred == y).mean())
    print(f"clean accuracy: {clean_acc:.4f}")
    print(f"adversarial accuracy: {adv_acc:.4f}")
    print(f"attack success rate: {float((adv_pred != y).mean()):.4f}")
    for path in [results_path, *written]:
        print(f"wrote {path}")
    return EXIT_OK


def _sweep_inputs(args):
    missing = [
        flag
        for flag, value in (("--bp-checkpoint", args.bp_checkpoint), ("--fa-checkpoint", args.fa_checkpoint))
        if value is None
    ]
    if missing:
        raise ConfigError(f"missing required settings: {', '.join(missing)}")
    bp_ckpt = load_checkpoint(args.bp_checkpoint)
    fa_ckpt = load_checkpoint(args.fa_checkpoint)
    test_set = load_named_dataset(args.dataset, "test", args.data_dir)
    cfg = SweepConfig(
        epsilons=_parse_grid(args.eps_grid),
        attacks=_parse_attacks(args.attacks),
        n_iter=args.n,
        momentum=args.mu,
        n_samples=args.samples,
        sample_seed=args.seed,
    )
    return bp_ckpt, fa_ckpt, test_set, cfg


def _report_path(out: str, stem: str, fmt: str) -> str:
    return os.path.join(out, f"{stem}.{'csv' if fmt == 'csv' else 'jsonl'}")


def cmd_sweep(args) -> int:
    bp_ckpt, fa_ckpt, test_set, cfg = _sweep_inputs(args)
    report = epsilon_sweep(bp_ckpt, fa_ckpt, test_set, cfg, threads=max(1, args.threads))
    out = _prepare_out(args)
    path = _report_path(out, "sweep", args.format)
    emit_report(report, path, args.format)
    write_snapshot(out, args)
    print(f"wrote {path} ({len(report.rows)} rows)")
    return EXIT_OK


def cmd_transfer(args) -> int:
    bp_ckpt, fa_ckpt, test_set, cfg = _sweep_inputs(args)
    report = transfer_sweep(bp_ckpt, fa_ckpt, test_set, cfg, threads=max(1, args.threads))
    out = _prepare_out(args)
    path = _report_path(out, "transfer", args.format)
    emit_report(report, path, args.format)
    write_snapshot(out, args)
    print(f"wrote {path} ({len(report.rows)} rows)")
    return EXIT_OK


def cmd_angles(args) -> int:
    train_set = load_named_dataset(args.dataset, "train", args.data_dir)
    spec = build_lenet(train_set.input_shape, n_classes=train_set.n_classes)
    config = TrainConfig(
        mode=FeedbackMode.parse(args.mode),
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch,
        seed=args.seed,
    )
    report = angle_over_training(
        spec,
        config,
        train_set,
        probe_size=args.probe_size,
        every=args.every,
        tie=args.tie_feedback,
    )
    out = _prepare_out(args)
    path = _report_path(out, "angles", args.format)
    emit_report(report, path, args.format)
    write_snapshot(out, args)
    print(f"wrote {path} ({len(report.rows)} rows)")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default="out", help="directory for outputs (default: ./out)")
    p.add_argument("--config", default=None, help="flat key=value settings file")
    p.add_argument(
        "--data-dir",
        dest="data_dir",
        default=None,
        help="dataset directory (default: $WTFREE_DATA_DIR)",
    )
    p.add_argument("--seed", type=int, default=0, help="master seed")


def _add_dataset(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--dataset",
        choices=("mnist", "cifar10", "synthetic"),
        default="mnist",
        help="which dataset to use",
    )


def _add_training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=5, help="training epochs (0 = just initialize)")
    p.add_argument("--lr", type=float, default=0.05, help="learning rate")
    p.add_argument("--batch", type=int, default=64, help="batch size")


def _add_sweep(p: argparse.ArgumentParser) -> None:
    # Not argparse-required: these may arrive via --config instead, and the
    # config file is only merged after a successful first parse.
    p.add_argument("--bp-checkpoint", dest="bp_checkpoint", default=None)
    p.add_argument("--fa-checkpoint", dest="fa_checkpoint", default=None)
    p.add_argument("--eps-grid", dest="eps_grid", default=DEFAULT_GRID, help="comma separated budgets")
    p.add_argument("--attacks", default=DEFAULT_ATTACKS, help="comma separated attack names")
    p.add_argument("--n", type=int, default=10, help="iterations for the iterative attacks")
    p.add_argument("--mu", type=float, default=0.8, help="momentum decay")
    p.add_argument("--samples", type=int, default=1000, help="test samples per cell")
    p.add_argument("--threads", type=int, default=1, help="worker thread cap")
    p.add_argument("--format", choices=("csv", "json-lines"), default="csv")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wtfree",
        description="train, attack, and compare networks with and without weight transport",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    p = sub.add_parser("train", help="fit a network and save a checkpoint")
    p.add_argument("--mode", choices=("bp", "fa"), default="bp", help="backward routing")
    _add_dataset(p)
    _add_training(p)
    _add_common(p)
    p.set_defaults(func=cmd_train)
    subparsers["train"] = p

    p = sub.add_parser("attack", help="perturb test images against one checkpoint")
    p.add_argument("--checkpoint", default=None, help="network to attack")
    p.add_argument("--attack", choices=ATTACK_NAMES, default="fgsm")
    p.add_argument("--eps", type=float, default=0.1, help="max-norm budget")
    p.add_argument("--n", type=int, default=10, help="iterations for the iterative attacks")
    p.add_argument("--mu", type=float, default=0.8, help="momentum decay")
    p.add_argument(
        "--grad-mode",
        dest="grad_mode",
        choices=("bp", "fa"),
        default=None,
        help="gradient routing override (default: the checkpoint's own)",
    )
    p.add_argument("--samples", type=int, default=1000, help="how many test images")
    _add_dataset(p)
    _add_common(p)
    p.set_defaults(func=cmd_attack)
    subparsers["attack"] = p

    p = sub.add_parser("sweep", help="self-attack accuracy over attacks and budgets")
    _add_sweep(p)
    _add_dataset(p)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)
    subparsers["sweep"] = p

    p = sub.add_parser("transfer", help="cross-network attack accuracy grid")
    _add_sweep(p)
    _add_dataset(p)
    _add_common(p)
    p.set_defaults(func=cmd_transfer)
    subparsers["transfer"] = p

    p = sub.add_parser("angles", help="update-angle trace over a training run")
    p.add_argument("--mode", choices=("bp", "fa"), default="fa", help="training mode")
    _add_dataset(p)
    _add_training(p)
    p.add_argument("--probe-size", dest="probe_size", type=int, default=128)
    p.add_argument("--every", type=int, default=1, help="record every k-th step")
    p.add_argument(
        "--tie-feedback",
        dest="tie_feedback",
        action="store_true",
        help="copy weights into feedback before each measurement (all angles 0)",
    )
    p.add_argument("--format", choices=("csv", "json-lines"), default="csv")
    _add_common(p)
    p.set_defaults(func=cmd_angles)
    subparsers["angles"] = p

    return parser, subparsers


def main(argv: Optional[list] = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        parser, subparsers = build_parser()
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:
            return int(e.code or 0)
        if args.config:
            apply_config_defaults(subparsers[args.command], read_config_file(args.config))
            try:
                args = parser.parse_args(argv)
            except SystemExit as e:
                return int(e.code or 0)
        return args.func(args)
    except (ConfigError, ContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except TrainingDivergedError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
