"""Linear readout trained by mini-batch gradient descent.

The readout maps a representation vector (reservoir state, thresholded
state, or plain embedding) to per-place logits. Training minimizes either
softmax cross-entropy or per-node sigmoid cross-entropy, averaged over the
mini-batch, with plain gradient descent. When a SPARCE layer is attached,
its learnable offsets are updated through the thresholding chain with their
own learning rate; the representations themselves are never modified.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import sparce as sparce_mod
from .binio import (
    read_array,
    read_i64,
    read_prelude,
    write_array,
    write_i64,
    write_prelude,
)
from .sparce import SparceLayer

_SNAPSHOT_MAGIC = b"ESNPRDOT"
_SNAPSHOT_VERSION = 1

LOSS_KINDS = ("softmax", "sigmoid")


@dataclass(frozen=True)
class TrainConfig:
    """Gradient-descent settings for readout (and hidden layer) training."""

    loss: str = "softmax"
    learning_rate: float = 0.01
    threshold_learning_rate: float = 0.0
    batch_size: int = 20
    epochs: int = 60
    shuffle_seed: int = 0
    use_bias: bool = True

    def __post_init__(self) -> None:
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if not self.learning_rate > 0.0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.threshold_learning_rate < 0.0:
            raise ValueError(
                "threshold_learning_rate must be >= 0, "
                f"got {self.threshold_learning_rate}"
            )
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")

    def to_dict(self) -> dict:
        return {
            "loss": self.loss,
            "learning_rate": self.learning_rate,
            "threshold_learning_rate": self.threshold_learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "shuffle_seed": self.shuffle_seed,
            "use_bias": self.use_bias,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**data)


@dataclass(frozen=True)
class ReadoutModel:
    """Output weights (places x representation size) and optional bias."""

    weights: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=float)
        if weights.ndim != 2:
            raise ValueError(f"weights must be 2-D, got shape {weights.shape}")
        if not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite")
        bias = self.bias
        if bias is not None:
            bias = np.asarray(bias, dtype=float)
            if bias.shape != (weights.shape[0],):
                raise ValueError(
                    f"bias shape {bias.shape} does not match {weights.shape[0]} places"
                )
            if not np.all(np.isfinite(bias)):
                raise ValueError("bias must be finite")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", bias)

    @property
    def places(self) -> int:
        return self.weights.shape[0]

    @property
    def rep_size(self) -> int:
        return self.weights.shape[1]


def init_readout(places: int, rep_size: int, use_bias: bool = True) -> ReadoutModel:
    """Zero-initialized readout: every place starts with a uniform score."""
    bias = np.zeros(places) if use_bias else None
    return ReadoutModel(weights=np.zeros((places, rep_size)), bias=bias)


def forward(rep: np.ndarray, model: ReadoutModel) -> np.ndarray:
    """Logits for one representation (R,) or a batch (B, R)."""
    rep = np.asarray(rep, dtype=float)
    if rep.shape[-1] != model.rep_size:
        raise ValueError(
            f"representation width {rep.shape[-1]} does not match model "
            f"rep_size {model.rep_size}"
        )
    logits = rep @ model.weights.T
    if model.bias is not None:
        logits = logits + model.bias
    return logits


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def sigmoid(logits: np.ndarray) -> np.ndarray:
    out = np.empty_like(logits, dtype=float)
    pos = logits >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
    ez = np.exp(logits[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def probabilities(logits: np.ndarray, loss: str) -> np.ndarray:
    if loss == "softmax":
        return softmax(logits)
    if loss == "sigmoid":
        return sigmoid(logits)
    raise ValueError(f"unknown loss kind {loss!r}")


def _check_targets(logits: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if logits.shape != targets.shape:
        raise ValueError(
            f"targets shape {targets.shape} does not match logits shape {logits.shape}"
        )
    return logits, targets


def softmax_ce_loss(
    logits: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood under softmax, plus its logit gradient.

    `targets` must be one-hot rows. The gradient is (softmax - target) / B,
    so parameter gradients obtained by accumulating over the batch are
    already batch means.
    """
    logits, targets = _check_targets(logits, targets)
    if not (
        np.all((targets == 0.0) | (targets == 1.0))
        and np.all(targets.sum(axis=1) == 1.0)
    ):
        raise ValueError("softmax targets must be one-hot rows")
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    log_probs = shifted - log_norm
    batch = logits.shape[0]
    loss = float(-np.sum(targets * log_probs) / batch)
    grad = (np.exp(log_probs) - targets) / batch
    return loss, grad


def sigmoid_ce_loss(
    logits: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Per-node binary cross-entropy, summed over nodes and averaged over the batch.

    Uses the overflow-free formulation max(y, 0) - y*t + log1p(exp(-|y|)),
    stable for arbitrarily large logit magnitudes.
    """
    logits, targets = _check_targets(logits, targets)
    if not np.all((targets == 0.0) | (targets == 1.0)):
        raise ValueError("sigmoid targets must be 0 or 1")
    per_node = (
        np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    )
    batch = logits.shape[0]
    loss = float(np.sum(per_node) / batch)
    grad = (sigmoid(logits) - targets) / batch
    return loss, grad


def one_hot(labels: np.ndarray, places: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError("labels must be a 1-D integer array")
    if np.any(labels < 0) or np.any(labels >= places):
        raise ValueError(f"labels must lie in [0, {places})")
    out = np.zeros((labels.shape[0], places))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def predict(rep: np.ndarray, model: ReadoutModel) -> tuple[int, np.ndarray]:
    """Predicted place index and the full logit vector.

    Ties break toward the lowest index. Any strictly increasing score
    transform (softmax, sigmoid) leaves the prediction unchanged.
    """
    logits = forward(rep, model)
    if logits.ndim != 1:
        raise ValueError("predict expects a single representation")
    return int(np.argmax(logits)), logits


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    train_accuracy: float
    val_accuracy: float | None = None


@dataclass(frozen=True)
class TrainResult:
    model: ReadoutModel
    sparce: SparceLayer | None
    trace: tuple[EpochStats, ...]


def _loss_fn(kind: str):
    return softmax_ce_loss if kind == "softmax" else sigmoid_ce_loss


def _accuracy(reps: np.ndarray, labels: np.ndarray, model: ReadoutModel) -> float:
    logits = forward(reps, model)
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def train(
    representations: np.ndarray,
    labels: np.ndarray,
    model: ReadoutModel,
    cfg: TrainConfig,
    sparce: SparceLayer | None = None,
    validation: tuple[np.ndarray, np.ndarray] | None = None,
) -> TrainResult:
    """Fit the readout (and SPARCE offsets) on precomputed representations.

    Representations stay constant across epochs, so each epoch just
    reshuffles (representation, label) pairs into mini-batches with the
    seeded generator. The inputs, including `model` and `sparce`, are left
    untouched; trained copies come back in the result together with one
    trace row per epoch.
    """
    reps = np.asarray(representations, dtype=float)
    labels = np.asarray(labels)
    if reps.ndim != 2 or reps.shape[0] == 0:
        raise ValueError("representations must be a nonempty (T, R) array")
    if labels.shape != (reps.shape[0],):
        raise ValueError("need exactly one label per representation row")
    if np.any(labels < 0) or np.any(labels >= model.places):
        raise ValueError(f"labels must lie in [0, {model.places})")
    width = sparce.size if sparce is not None else reps.shape[1]
    if width != reps.shape[1] or model.rep_size != width:
        raise ValueError(
            "representation width, model rep_size and SPARCE size must agree"
        )

    targets = one_hot(labels, model.places)
    weights = model.weights.copy()
    bias = None if model.bias is None else model.bias.copy()
    offsets = None if sparce is None else sparce.offset.copy()
    loss_fn = _loss_fn(cfg.loss)
    rng = np.random.default_rng(cfg.shuffle_seed)
    count = reps.shape[0]

    def current_model() -> ReadoutModel:
        return ReadoutModel(weights=weights.copy(), bias=None if bias is None else bias.copy())

    def current_sparce() -> SparceLayer | None:
        return None if sparce is None else sparce.with_offset(offsets.copy())

    def project(block: np.ndarray) -> np.ndarray:
        if sparce is None:
            return block
        return sparce_mod.apply(block, current_sparce())

    trace: list[EpochStats] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(count)
        epoch_losses = []
        for start in range(0, count, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            raw = reps[idx]
            batch = project(raw)
            logits = batch @ weights.T
            if bias is not None:
                logits = logits + bias
            loss, grad_logits = loss_fn(logits, targets[idx])
            epoch_losses.append(loss)
            grad_w = grad_logits.T @ batch
            if bias is not None:
                bias -= cfg.learning_rate * grad_logits.sum(axis=0)
            if offsets is not None and cfg.threshold_learning_rate > 0.0:
                upstream = grad_logits @ weights
                grad_theta = sparce_mod.threshold_gradient(
                    raw, upstream, current_sparce()
                )
                offsets -= cfg.threshold_learning_rate * grad_theta
            weights -= cfg.learning_rate * grad_w
        snapshot = current_model()
        train_acc = _accuracy(project(reps), labels, snapshot)
        val_acc = None
        if validation is not None:
            val_reps, val_labels = validation
            val_acc = _accuracy(project(np.asarray(val_reps, dtype=float)),
                                np.asarray(val_labels), snapshot)
        trace.append(
            EpochStats(
                epoch=epoch,
                loss=float(np.mean(epoch_losses)),
                train_accuracy=train_acc,
                val_accuracy=val_acc,
            )
        )
    return TrainResult(model=current_model(), sparce=current_sparce(), trace=tuple(trace))


def write_trace(path: str | Path, trace: tuple[EpochStats, ...] | list[EpochStats]) -> None:
    """Comma-separated rows: epoch, loss, train accuracy, validation accuracy."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "train_accuracy", "validation_accuracy"])
        for row in trace:
            writer.writerow(
                [
                    row.epoch,
                    f"{row.loss:.12g}",
                    f"{row.train_accuracy:.12g}",
                    "" if row.val_accuracy is None else f"{row.val_accuracy:.12g}",
                ]
            )


def save_readout(path: str | Path, model: ReadoutModel) -> None:
    with open(path, "wb") as fh:
        write_prelude(fh, _SNAPSHOT_MAGIC, _SNAPSHOT_VERSION)
        write_i64(fh, model.places, model.rep_size, 1 if model.bias is not None else 0)
        write_array(fh, model.weights, "<f8")
        if model.bias is not None:
            write_array(fh, model.bias, "<f8")


def load_readout(path: str | Path) -> ReadoutModel:
    with open(path, "rb") as fh:
        read_prelude(fh, _SNAPSHOT_MAGIC, _SNAPSHOT_VERSION)
        places, rep_size, has_bias = read_i64(fh, 3)
        weights = read_array(fh, "<f8", (places, rep_size))
        bias = read_array(fh, "<f8", (places,)) if has_bias else None
    return ReadoutModel(weights=weights, bias=bias)


def with_shuffle_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, shuffle_seed=seed)
