"""Evaluation classifiers over frozen features.

A multinomial logistic-regression probe trained with mini-batch Adam, and an
exact cosine-similarity 1-nearest-neighbor classifier. Both operate on fixed
feature vectors; no backbone is ever touched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DataError, DivergenceError, IoError
from .rand import rng_from_seed, sample_without_replacement
from .store import EmbeddingMatrix, LabelVector, NormStats, standardize

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainSchedule:
    """Adam schedule: lr multiplied by 0.1 at each milestone epoch."""

    lr: float = 0.01
    milestones: tuple[int, ...] = (50, 75)
    epochs: int = 100
    batch_size: int = 128
    weight_decay: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if self.lr <= 0:
            raise ArgumentError("lr must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ArgumentError("epochs and batch_size must be >= 1")
        if list(self.milestones) != sorted(set(self.milestones)):
            raise ArgumentError("milestones must be strictly increasing")
        if any(m < 0 or m >= self.epochs for m in self.milestones):
            raise ArgumentError("milestones must lie in [0, epochs)")

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for m in self.milestones if epoch >= m)
        return self.lr * (0.1**drops)

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "milestones": list(self.milestones),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "weight_decay": self.weight_decay,
        }


def default_batch_size(n_train: int) -> int:
    """128 for full-size pools, 4 for tiny ones (pools below one batch)."""
    return 128 if n_train >= 128 else 4


def linear_eval_schedule(n_train: int) -> TrainSchedule:
    """Evaluation-probe schedule: Adam, lr 0.01, x0.1 at epochs 50 and 75."""
    return TrainSchedule(lr=0.01, batch_size=default_batch_size(n_train))


def max_entropy_schedule(n_train: int) -> TrainSchedule:
    """Uncertainty-probe schedule: Adam, lr 0.001, x0.1 at epochs 50 and 75."""
    return TrainSchedule(lr=0.001, batch_size=default_batch_size(n_train))


@dataclass
class ProbeModel:
    """Linear classifier (weights, bias) plus the normalization statistics
    captured from its training features."""

    weights: np.ndarray  # (C, d) float64
    bias: np.ndarray  # (C,) float64
    norm_stats: NormStats
    train_log: list[dict] = field(default_factory=list)
    schedule: TrainSchedule | None = None

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1]

    def to_json(self) -> str:
        doc = {
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "norm_mean": self.norm_stats.mean.tolist(),
            "norm_std": self.norm_stats.std.tolist(),
            "train_log": self.train_log,
            "schedule": self.schedule.to_dict() if self.schedule else None,
        }
        return json.dumps(doc, indent=2) + "\n"

    def save(self, path) -> None:
        try:
            Path(path).write_text(self.to_json())
        except OSError as e:
            raise IoError(f"cannot write {path}: {e}") from e

    @classmethod
    def from_json(cls, text: str) -> "ProbeModel":
        doc = json.loads(text)
        sched = TrainSchedule(**{**doc["schedule"], "milestones": tuple(doc["schedule"]["milestones"])}) if doc.get("schedule") else None
        return cls(
            weights=np.asarray(doc["weights"], dtype=np.float64),
            bias=np.asarray(doc["bias"], dtype=np.float64),
            norm_stats=NormStats(
                mean=np.asarray(doc["norm_mean"], dtype=np.float64),
                std=np.asarray(doc["norm_std"], dtype=np.float64),
            ),
            train_log=doc.get("train_log", []),
            schedule=sched,
        )


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _loss_and_grads(
    weights: np.ndarray,
    bias: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    weight_decay: float = 0.0,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy over the batch and its gradients w.r.t. W and b."""
    b = x.shape[0]
    probs = _softmax(x @ weights.T + bias)
    loss = float(-np.log(np.maximum(probs[np.arange(b), y], 1e-300)).mean())
    g = probs
    g[np.arange(b), y] -= 1.0
    g /= b
    grad_w = g.T @ x
    grad_b = g.sum(axis=0)
    if weight_decay:
        loss += 0.5 * weight_decay * float((weights**2).sum())
        grad_w = grad_w + weight_decay * weights
    return loss, grad_w, grad_b


def probe_train(
    features: EmbeddingMatrix,
    labels: LabelVector,
    schedule: TrainSchedule,
    seed: int,
) -> ProbeModel:
    """Train the linear probe with mini-batch Adam from zero-initialized
    weights. Features are standardized first and the statistics stored on
    the model; the epoch shuffle is seeded; the last short batch is kept.

    The final-epoch model is returned as-is (no checkpoint selection).
    """
    if features.n != labels.n:
        raise ArgumentError(f"features n={features.n} but labels n={labels.n}")
    c = labels.num_classes
    if c < 2:
        raise ArgumentError("probe needs at least 2 classes")

    std_features, stats = standardize(features)
    x = std_features.data.astype(np.float64)
    y = labels.labels.astype(np.int64)
    n, d = x.shape

    w = np.zeros((c, d))
    b = np.zeros(c)
    m_w = np.zeros_like(w)
    v_w = np.zeros_like(w)
    m_b = np.zeros_like(b)
    v_b = np.zeros_like(b)
    step = 0
    rng = rng_from_seed(seed)
    log: list[dict] = []

    for epoch in range(schedule.epochs):
        lr = schedule.lr_at(epoch)
        order = sample_without_replacement(n, n, rng)
        loss_sum = 0.0
        for start in range(0, n, schedule.batch_size):
            batch = order[start : start + schedule.batch_size]
            loss, grad_w, grad_b = _loss_and_grads(w, b, x[batch], y[batch], schedule.weight_decay)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}", epoch=epoch)
            loss_sum += loss * len(batch)
            step += 1
            corr1 = 1.0 - ADAM_BETA1**step
            corr2 = 1.0 - ADAM_BETA2**step
            for param, grad, mom, vel in ((w, grad_w, m_w, v_w), (b, grad_b, m_b, v_b)):
                mom *= ADAM_BETA1
                mom += (1 - ADAM_BETA1) * grad
                vel *= ADAM_BETA2
                vel += (1 - ADAM_BETA2) * grad**2
                param -= lr * (mom / corr1) / (np.sqrt(vel / corr2) + ADAM_EPS)
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise DivergenceError(f"non-finite parameters at epoch {epoch}", epoch=epoch)
        preds = np.argmax(x @ w.T + b, axis=1)
        log.append(
            {
                "epoch": epoch,
                "loss": loss_sum / n,
                "accuracy": float((preds == y).mean()),
            }
        )

    return ProbeModel(weights=w, bias=b, norm_stats=stats, train_log=log, schedule=schedule)


def probe_predict_proba(model: ProbeModel, features: EmbeddingMatrix) -> np.ndarray:
    """(n, C) class probabilities under the stored normalization."""
    if features.d != model.d:
        raise DataError(f"features have d={features.d}, model expects {model.d}")
    std_features, _ = standardize(features, model.norm_stats)
    x = std_features.data.astype(np.float64)
    return _softmax(x @ model.weights.T + model.bias)


def probe_predict(model: ProbeModel, features: EmbeddingMatrix) -> np.ndarray:
    """Most probable class per row."""
    return np.argmax(probe_predict_proba(model, features), axis=1).astype(np.int32)


def knn_predict(
    train_features: EmbeddingMatrix,
    train_labels: LabelVector,
    query: EmbeddingMatrix,
) -> np.ndarray:
    """Exact 1-NN labels by cosine similarity.

    Rows are L2-normalized so similarity is a dot product; zero vectors get
    similarity 0 to everything. Similarity ties break toward the lowest
    training index.
    """
    if train_features.n != train_labels.n:
        raise ArgumentError("training features/labels length mismatch")
    if query.d != train_features.d:
        raise DataError(f"query d={query.d} but training d={train_features.d}")
    from .store import l2_normalize

    t = l2_normalize(train_features).data.astype(np.float64)
    q = l2_normalize(query).data.astype(np.float64)
    out = np.empty(query.n, dtype=np.int64)
    chunk = 4096
    for start in range(0, query.n, chunk):
        sims = q[start : start + chunk] @ t.T
        out[start : start + chunk] = np.argmax(sims, axis=1)
    return train_labels.labels[out]
