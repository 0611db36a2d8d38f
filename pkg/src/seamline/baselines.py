"""Comparison methods: a logistic-regression sentence classifier whose
label transitions become boundary candidates, and a uniform random
candidate baseline.

Any external per-sentence classifier can plug into the same
transition-to-boundary conversion by producing a LabelSequence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import AuthorLabel
from .detector import BoundaryPrediction
from .embeddings import EmbeddingMatrix
from .errors import DimensionMismatch, SingleClassCorpus, UnlabeledSentence


@dataclass(frozen=True)
class LogisticConfig:
    learning_rate: float = 1.0
    epochs: int = 200
    seed: int = 0


@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray  # (d,)
    bias: float
    threshold: float = 0.5

    def __post_init__(self):
        if not (0 < self.threshold < 1):
            raise ValueError("threshold must be in (0, 1)")
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.bias)):
            raise ValueError("model parameters must be finite")

    @property
    def dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class LabelSequence:
    """Per-sentence predicted labels with confidences in [0, 1]."""

    labels: tuple[AuthorLabel, ...]
    confidences: tuple[float, ...]

    def __post_init__(self):
        if len(self.labels) != len(self.confidences):
            raise ValueError("labels and confidences must align")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    positive = z >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-z[positive]))
    expz = np.exp(z[~positive])
    out[~positive] = expz / (1.0 + expz)
    return out


def train_logistic(matrix: EmbeddingMatrix | np.ndarray,
                   labels: Sequence[AuthorLabel],
                   config: LogisticConfig = LogisticConfig(),
                   val: tuple[np.ndarray, Sequence[AuthorLabel]] | None = None,
                   loss_callback=None) -> LogisticModel:
    """Full-batch gradient descent on mean cross-entropy.

    The positive class is GENERATED. Snapshots are scored each epoch on
    the validation pair when given (training data otherwise) and the model
    with the best accuracy is returned. ``loss_callback``, when given,
    receives the training loss after every epoch.
    """
    x = matrix.vectors if isinstance(matrix, EmbeddingMatrix) else matrix
    if any(lab is None for lab in labels):
        raise UnlabeledSentence("logistic training needs fully labeled data")
    y = np.array([1.0 if lab is AuthorLabel.GENERATED else 0.0 for lab in labels])
    if len(set(labels)) < 2:
        raise SingleClassCorpus("logistic training needs both labels")
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatch("embedding rows and labels must align")

    if val is None or len(val[1]) == 0:
        x_val, y_val = x, y
    else:
        if any(lab is None for lab in val[1]):
            raise UnlabeledSentence("validation data must be fully labeled")
        x_val = val[0].vectors if isinstance(val[0], EmbeddingMatrix) else val[0]
        y_val = np.array(
            [1.0 if lab is AuthorLabel.GENERATED else 0.0 for lab in val[1]]
        )

    n = x.shape[0]
    w = np.zeros(x.shape[1])
    b = 0.0
    best_acc = -1.0
    best = (w.copy(), b)
    for _ in range(config.epochs):
        z = x @ w + b
        prob = _sigmoid(z)
        grad_w = x.T @ (prob - y) / n
        grad_b = float(np.sum(prob - y) / n)
        w = w - config.learning_rate * grad_w
        b = b - config.learning_rate * grad_b
        if loss_callback is not None:
            loss_callback(logistic_loss(LogisticModel(w, float(b)), x, labels))
        pred = (_sigmoid(x_val @ w + b) >= 0.5).astype(float)
        acc = float(np.mean(pred == y_val))
        if acc > best_acc:
            best_acc = acc
            best = (w.copy(), b)
    return LogisticModel(best[0], float(best[1]))


def logistic_loss(model: LogisticModel, matrix: np.ndarray,
                  labels: Sequence[AuthorLabel]) -> float:
    """Mean cross-entropy of the model on the given data."""
    y = np.array([1.0 if lab is AuthorLabel.GENERATED else 0.0 for lab in labels])
    z = matrix @ model.weights + model.bias
    # log(1 + exp(-|z|)) formulation avoids overflow.
    return float(np.mean(np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0) - z * y))


def classify_sentences(model: LogisticModel,
                       matrix: EmbeddingMatrix | np.ndarray) -> LabelSequence:
    """Sigmoid probability >= threshold means GENERATED; confidence is the
    larger of the two class probabilities."""
    rows = matrix.vectors if isinstance(matrix, EmbeddingMatrix) else matrix
    if rows.shape[1] != model.dim:
        raise DimensionMismatch(
            f"matrix dim {rows.shape[1]} != model dim {model.dim}"
        )
    prob = _sigmoid(rows @ model.weights + model.bias)
    labels = tuple(
        AuthorLabel.GENERATED if p >= model.threshold else AuthorLabel.HUMAN
        for p in prob
    )
    confidences = tuple(float(max(p, 1.0 - p)) for p in prob)
    return LabelSequence(labels, confidences)


def transitions_to_boundaries(sequence: LabelSequence, k: int | None = None,
                              method_id: str = "transitions") -> BoundaryPrediction:
    """Positions where adjacent predicted labels differ, scored by the
    smaller of the two adjacent confidences. With k set, only the k
    highest-scored transitions survive (ties to the smaller position);
    with fewer transitions than k, all are returned.
    """
    candidates = []
    for i in range(len(sequence.labels) - 1):
        if sequence.labels[i] != sequence.labels[i + 1]:
            score = min(sequence.confidences[i], sequence.confidences[i + 1])
            candidates.append((i + 1, score))
    candidates.sort(key=lambda item: (-item[1], item[0]))
    if k is not None:
        candidates = candidates[:k]
    return BoundaryPrediction(tuple(candidates), method_id)


def random_boundaries(n: int, k: int, rng: np.random.Generator,
                      method_id: str = "random") -> BoundaryPrediction:
    """min(k, n-1) distinct positions drawn uniformly from [1, n-1]."""
    if n < 2:
        raise ValueError("random baseline needs at least 2 sentences")
    count = min(k, n - 1)
    positions = rng.choice(np.arange(1, n), size=count, replace=False)
    candidates = tuple((int(pos), 1.0) for pos in sorted(positions))
    return BoundaryPrediction(candidates, method_id)


# --- persistence -----------------------------------------------------------------

def save_logistic(model: LogisticModel, path: str | Path,
                  provider_id: str) -> None:
    record = {
        "weights": [float(x) for x in model.weights],
        "bias": model.bias,
        "threshold": model.threshold,
        "provider_id": provider_id,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(record, handle)
        handle.write("\n")


def load_logistic(path: str | Path) -> tuple[LogisticModel, str]:
    with open(path, encoding="utf-8") as handle:
        record = json.load(handle)
    model = LogisticModel(
        np.array(record["weights"], dtype=float),
        float(record["bias"]),
        float(record.get("threshold", 0.5)),
    )
    return model, record.get("provider_id", "")
