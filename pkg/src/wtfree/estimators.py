"""Scikit-learn style front door: an image classifier and an attack transform.

LeNetClassifier wraps the convolutional network, the trainer, and the
checkpoint format behind the familiar fit/predict/score surface, with the
backward routing (weight transport vs. fixed random feedback) selected by a
constructor parameter.  AdversarialAttack is a transformer that maps clean
images to adversarial ones using a fitted classifier's own gradients, so
robustness experiments compose with the usual estimator tooling (get_params,
clone, pipelines).
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .attacks import GradientOracle, run_attack
from .checkpoint import load_checkpoint, save_checkpoint
from .data import LabeledImageSet
from .errors import ContractError
from .layers import FeedbackMode
from .network import build_lenet, network_logits, predictions, softmax_probs
from .training import TrainConfig, train


def _as_image_batch(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4:
        raise ContractError(f"expected images shaped (N, C, H, W), got ndim={X.ndim}")
    return X


class LeNetClassifier(ClassifierMixin, BaseEstimator):
    """Small convolutional classifier trained with a selectable backward path.

    Parameters
    ----------
    mode : {"bp", "fa"}
        "bp" updates flow back through the transposed weights;
        "fa" routes them through fixed random feedback matrices instead.
    epochs, learning_rate, batch_size : SGD schedule.
    random_state : master seed; initialization, feedback matrices, and
        shuffling all derive from it deterministically.
    input_shape : (C, H, W) or None to infer it from the data at fit time.
    """

    def __init__(
        self,
        mode: str = "bp",
        epochs: int = 5,
        learning_rate: float = 0.05,
        batch_size: int = 64,
        random_state: int = 0,
        input_shape: Optional[tuple] = None,
    ):
        self.mode = mode
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.random_state = random_state
        self.input_shape = input_shape

    # ------------------------------------------------------------- fitting

    def fit(self, X, y):
        X = _as_image_batch(X)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ContractError(f"y must be shaped ({X.shape[0]},), got {y.shape}")
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ContractError("need at least two classes to fit")
        encoded = np.searchsorted(self.classes_, y).astype(np.int64)

        shape = tuple(self.input_shape) if self.input_shape is not None else X.shape[1:]
        if tuple(X.shape[1:]) != shape:
            raise ContractError(f"X images are {X.shape[1:]}, expected {shape}")
        self.spec_ = build_lenet(shape, n_classes=len(self.classes_))
        dataset = LabeledImageSet(
            images=X, labels=encoded, name="fit", n_classes=len(self.classes_)
        )
        config = TrainConfig(
            mode=FeedbackMode.parse(self.mode),
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            seed=self.random_state,
        )
        result = train(self.spec_, config, dataset)
        self.states_ = result.states
        self.history_ = list(result.metrics)
        self.init_seed_ = result.init_seed
        self.feedback_seed_ = result.feedback_seed
        return self

    def _require_fitted(self):
        if not hasattr(self, "states_"):
            raise NotFittedError(
                "this LeNetClassifier instance is not fitted yet; call fit first"
            )

    # ----------------------------------------------------------- inference

    def decision_function(self, X):
        self._require_fitted()
        return network_logits(self.spec_, self.states_, _as_image_batch(X))

    def predict_proba(self, X):
        return softmax_probs(self.decision_function(X))

    def predict(self, X):
        self._require_fitted()
        return self.classes_[predictions(self.decision_function(X))]

    def loss_gradient(self, X, y):
        """Per-sample gradient of the loss with respect to the input pixels,
        routed according to this classifier's mode."""
        self._require_fitted()
        X = _as_image_batch(X)
        encoded = np.searchsorted(self.classes_, np.asarray(y)).astype(np.int64)
        oracle = GradientOracle(self.spec_, self.states_, FeedbackMode.parse(self.mode))
        return oracle.input_gradient(X, encoded)

    # --------------------------------------------------------- persistence

    def to_checkpoint(self, path) -> None:
        """Save the fitted network; training history is not persisted."""
        self._require_fitted()
        classes = [c.item() if hasattr(c, "item") else c for c in self.classes_]
        save_checkpoint(
            path,
            self.spec_,
            self.states_,
            self.init_seed_,
            self.feedback_seed_,
            metadata={
                "gradient_mode": self.mode,
                "classes": classes,
                "params": {
                    "epochs": self.epochs,
                    "learning_rate": self.learning_rate,
                    "batch_size": self.batch_size,
                    "random_state": self.random_state,
                },
            },
        )

    @classmethod
    def from_checkpoint(cls, path) -> "LeNetClassifier":
        ckpt = load_checkpoint(path)
        params = ckpt.metadata.get("params", {})
        est = cls(
            mode=ckpt.metadata.get("gradient_mode", "bp"),
            epochs=params.get("epochs", 5),
            learning_rate=params.get("learning_rate", 0.05),
            batch_size=params.get("batch_size", 64),
            random_state=params.get("random_state", 0),
            input_shape=ckpt.spec.input_shape,
        )
        est.spec_ = ckpt.spec
        est.states_ = ckpt.states
        est.classes_ = np.array(
            ckpt.metadata.get("classes", list(range(ckpt.spec.n_classes)))
        )
        est.history_ = []
        est.init_seed_ = ckpt.init_seed
        est.feedback_seed_ = ckpt.feedback_seed
        return est


class AdversarialAttack(TransformerMixin, BaseEstimator):
    """Transformer that perturbs images against a fitted classifier.

    Parameters
    ----------
    model : fitted LeNetClassifier whose gradients drive the attack.
    method : {"fgsm", "bim", "mifgsm"}.
    epsilon : perturbation budget in the max-norm sense.
    n_iter, momentum : schedule for the iterative attacks.
    grad_mode : None to route gradients the way the model was trained,
        or "bp"/"fa" to override (the override is what transfer
        experiments between the two network kinds are made of).

    transform(X) attacks the model's own predicted labels; pass y to
    attack the true labels instead.
    """

    def __init__(
        self,
        model: Optional[LeNetClassifier] = None,
        method: str = "fgsm",
        epsilon: float = 0.1,
        n_iter: int = 10,
        momentum: float = 0.8,
        grad_mode: Optional[str] = None,
    ):
        self.model = model
        self.method = method
        self.epsilon = epsilon
        self.n_iter = n_iter
        self.momentum = momentum
        self.grad_mode = grad_mode

    def _oracle(self) -> GradientOracle:
        if self.model is None:
            raise ContractError("AdversarialAttack needs a model")
        self.model._require_fitted()
        mode = FeedbackMode.parse(self.grad_mode or self.model.mode)
        return GradientOracle(self.model.spec_, self.model.states_, mode)

    def fit(self, X=None, y=None):
        self._oracle()  # validates model now rather than at transform time
        return self

    def transform(self, X, y=None):
        oracle = self._oracle()
        X = _as_image_batch(X)
        if y is None:
            encoded = oracle.predictions(X)
        else:
            encoded = np.searchsorted(self.model.classes_, np.asarray(y)).astype(np.int64)
        return run_attack(
            oracle, self.method, X, encoded, self.epsilon, self.n_iter, self.momentum
        )
