"""Neural nets that learn with or without weight transport, and the
gradient-based attacks used to compare their adversarial robustness.

The backward pass can route error signals through the transposed forward
weights (classic backprop, mode "bp") or through fixed random feedback
matrices (feedback alignment, mode "fa"); everything else -- architecture,
loss, optimizer, attacks -- is identical between the two, so any behavioral
difference is attributable to the routing alone.

Typical entry points:

* LeNetClassifier / AdversarialAttack -- scikit-learn style estimators
* train / TrainConfig               -- the functional training loop
* fgsm / bim / mifgsm / run_attack  -- attacks driven by a GradientOracle
* epsilon_sweep / transfer_sweep    -- the experiment grids, as reports
* save_checkpoint / load_checkpoint -- portable binary network snapshots
"""

from .attacks import (
    ATTACK_NAMES,
    GradientOracle,
    bim,
    dump_adversarial,
    fgsm,
    mifgsm,
    momentum_update,
    run_attack,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import (
    LabeledImageSet,
    load_named_dataset,
    synthetic_gaussians,
)
from .errors import (
    CheckpointError,
    CheckpointVersionError,
    ConfigError,
    ContractError,
    DataFormatError,
    DimensionError,
    TapeError,
    TrainingDivergedError,
    WtfreeError,
)
from .estimators import AdversarialAttack, LeNetClassifier
from .harness import (
    AngleReport,
    SweepConfig,
    SweepReport,
    TransferReport,
    angle_over_training,
    emit_report,
    epsilon_sweep,
    gradient_angle,
    transfer_sweep,
    vector_angle_degrees,
)
from .layers import AvgPool, Conv, Dense, FeedbackMode, Flatten, Relu
from .network import (
    NetworkSpec,
    build_lenet,
    init_network,
    network_backward,
    network_forward,
    network_logits,
    predictions,
    softmax_probs,
    tie_feedback,
)
from .training import TrainConfig, TrainResult, evaluate_accuracy, train

__version__ = "0.1.0"

__all__ = [
    "ATTACK_NAMES",
    "AdversarialAttack",
    "AngleReport",
    "AvgPool",
    "Checkpoint",
    "CheckpointError",
    "CheckpointVersionError",
    "ConfigError",
    "ContractError",
    "Conv",
    "DataFormatError",
    "Dense",
    "DimensionError",
    "FeedbackMode",
    "Flatten",
    "GradientOracle",
    "LabeledImageSet",
    "LeNetClassifier",
    "NetworkSpec",
    "Relu",
    "SweepConfig",
    "SweepReport",
    "TapeError",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "TransferReport",
    "WtfreeError",
    "angle_over_training",
    "bim",
    "build_lenet",
    "dump_adversarial",
    "emit_report",
    "epsilon_sweep",
    "evaluate_accuracy",
    "fgsm",
    "gradient_angle",
    "init_network",
    "load_checkpoint",
    "load_named_dataset",
    "mifgsm",
    "momentum_update",
    "network_backward",
    "network_forward",
    "network_logits",
    "predictions",
    "run_attack",
    "save_checkpoint",
    "softmax_probs",
    "synthetic_gaussians",
    "tie_feedback",
    "train",
    "transfer_sweep",
    "vector_angle_degrees",
]
