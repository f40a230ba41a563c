"""Shared fixtures and the acceptance-criteria summary.

The trained-network fixtures are session scoped because training, even at
desk scale, dominates the runtime of the release gate; every criterion that
needs a fitted network shares the same pair of checkpoints.

Image datasets are discovered through WTFREE_DATA_DIR (or a conventional
./data directory); when the files are absent the dependent criteria skip
with a pointer to scripts/fetch_data.py rather than failing.
"""

import os
import re

import pytest

from wtfree.checkpoint import Checkpoint
from wtfree.data import DATA_DIR_ENV, load_named_dataset
from wtfree.errors import DataFormatError
from wtfree.harness import SweepConfig, epsilon_sweep, transfer_sweep
from wtfree.layers import FeedbackMode
from wtfree.network import build_lenet
from wtfree.training import TrainConfig, train

CRITERIA = {
    1: "layer backward passes match finite differences and the adjoint identity",
    2: "tying feedback to the weights makes both routings bitwise identical",
    3: "attack outputs respect the budget, the pixel box, and the edge-case identities",
    4: "the momentum recurrence accumulates exactly as specified",
    5: "malformed data files raise structured errors; checkpoints round-trip bitwise",
    6: "clean digit accuracy reaches the floors (bp >= 0.97, fa >= 0.95)",
    7: "under self-attack the bp network collapses while the fa network stays accurate",
    8: "attack transfer between the network kinds is asymmetric",
    9: "iterative attacks are at least as strong as the single-step attack",
    10: "the robustness gap replicates on the three-channel dataset",
}

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d{2})")
_SEVERITY = {"passed": 0, "skipped": 1, "error": 2, "failed": 3}
_LABEL = {"passed": "PASS", "skipped": "SKIP", "error": "ERROR", "failed": "FAIL"}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    seen = {}
    for status, severity in _SEVERITY.items():
        for report in terminalreporter.stats.get(status, []):
            match = _CRITERION.search(getattr(report, "nodeid", "") or "")
            if not match:
                continue
            number = int(match.group(1))
            if number not in seen or severity > _SEVERITY[seen[number]]:
                seen[number] = status
    if not seen:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(seen):
        label = _LABEL[seen[number]]
        terminalreporter.write_line(
            f"criterion {number:2d}: {label:<5s} {CRITERIA.get(number, '')}"
        )


# --------------------------------------------------------- dataset fixtures


def _load_or_skip(dataset: str):
    data_dir = os.environ.get(DATA_DIR_ENV) or "data"
    try:
        return (
            load_named_dataset(dataset, "train", data_dir),
            load_named_dataset(dataset, "test", data_dir),
        )
    except DataFormatError as e:
        pytest.skip(
            f"{dataset} files unavailable ({e}); run scripts/fetch_data.py --dataset {dataset}"
        )


@pytest.fixture(scope="session")
def mnist_sets():
    return _load_or_skip("mnist")


@pytest.fixture(scope="session")
def cifar_sets():
    return _load_or_skip("cifar10")


def _train_pair(train_set, test_set, epochs):
    spec = build_lenet(train_set.input_shape, n_classes=train_set.n_classes)
    out = {}
    for name, mode in (
        ("bp", FeedbackMode.WEIGHT_TRANSPORT),
        ("fa", FeedbackMode.FEEDBACK_ALIGNMENT),
    ):
        config = TrainConfig(mode=mode, epochs=epochs, learning_rate=0.05, batch_size=64, seed=0)
        result = train(spec, config, train_set, eval_set=test_set)
        out[name] = Checkpoint(
            spec=spec,
            states=result.states,
            init_seed=result.init_seed,
            feedback_seed=result.feedback_seed,
            metadata={"gradient_mode": name},
        )
        out[f"{name}_accuracy"] = result.metrics[-1].clean_accuracy
    return out


@pytest.fixture(scope="session")
def mnist_models(mnist_sets):
    train_set, test_set = mnist_sets
    return _train_pair(train_set, test_set, epochs=5)


@pytest.fixture(scope="session")
def cifar_models(cifar_sets):
    train_set, test_set = cifar_sets
    return _train_pair(train_set, test_set, epochs=20)


_THREADS = max(1, min(4, os.cpu_count() or 1))


@pytest.fixture(scope="session")
def mnist_self_report(mnist_models, mnist_sets):
    _, test_set = mnist_sets
    cfg = SweepConfig(epsilons=(0.0, 0.2, 0.5, 1.0), n_samples=1000, sample_seed=0)
    return epsilon_sweep(mnist_models["bp"], mnist_models["fa"], test_set, cfg, threads=_THREADS)


@pytest.fixture(scope="session")
def mnist_transfer_report(mnist_models, mnist_sets):
    _, test_set = mnist_sets
    cfg = SweepConfig(epsilons=(0.0, 0.1, 0.2, 0.3, 0.5), n_samples=1000, sample_seed=0)
    return transfer_sweep(mnist_models["bp"], mnist_models["fa"], test_set, cfg, threads=_THREADS)
