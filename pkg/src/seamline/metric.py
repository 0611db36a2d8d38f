"""Learn an embedding transformation that separates the two authorship
classes, using a triplet hinge objective over frozen base embeddings.

The trainable unit is an affine projection head applied to every sentence
vector. For a triplet (anchor, positive, negative) the loss is

    max(0, d(head(a), head(x+)) - d(head(a), head(x-)) + margin)

with Euclidean d, averaged over a batch. Training runs epochs of a fixed
number of freshly sampled triplets, decays the learning rate by a fixed
fraction after each epoch, and early-stops when the validation boundary
score fails to improve on the previous epoch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import AuthorLabel, HybridDocument
from .embeddings import EmbeddingMatrix, EmbeddingProvider
from .errors import (
    DimensionMismatch,
    NonFiniteLoss,
    SingleClassCorpus,
    UnlabeledSentence,
)

# The default grid suits the small affine head trained here; the fidelity
# grid is the much finer one appropriate for full-encoder fine-tuning.
DEFAULT_LR_GRID = (1e-4, 1e-3, 1e-2)
FIDELITY_LR_GRID = (1e-6, 5e-6, 1e-5)


@dataclass(frozen=True)
class SentenceRef:
    doc_index: int
    sentence_index: int  # 1-based within the document
    label: AuthorLabel
    text: str


@dataclass(frozen=True)
class Triplet:
    anchor: SentenceRef
    positive: SentenceRef
    negative: SentenceRef


@dataclass(frozen=True)
class ProjectionHead:
    weights: np.ndarray  # (d_out, d_in)
    bias: np.ndarray     # (d_out,)

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ValueError("weights must be a matrix and bias a vector")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ValueError("bias length must equal weight rows")
        if self.weights.shape[0] < 2:
            raise ValueError("projection head needs d_out >= 2")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("head parameters must be finite")

    @property
    def d_in(self) -> int:
        return self.weights.shape[1]

    @property
    def d_out(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float | None = None   # overrides lr_grid when set
    lr_grid: tuple[float, ...] = DEFAULT_LR_GRID
    decay: float = 0.2
    epoch_size: int = 5000
    batch_size: int = 32
    margin: float = 1.0
    patience: int = 1
    max_epochs: int = 10
    seed: int = 0
    k_validate: int = 3
    init_noise: float = 1e-3

    def __post_init__(self):
        if not 0 < self.decay < 1:
            raise ValueError("decay must be in (0, 1)")
        if self.epoch_size < 1 or self.margin <= 0:
            raise ValueError("epoch_size must be >= 1 and margin > 0")

    @property
    def rates(self) -> tuple[float, ...]:
        if self.learning_rate is not None:
            return (self.learning_rate,)
        return self.lr_grid


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_loss: float
    val_f1: float
    learning_rate: float


@dataclass(frozen=True)
class TrainHistory:
    records: tuple[EpochRecord, ...]
    best_epoch: int          # 0 means the untrained initial head won
    initial_val_f1: float
    base_rate: float
    rate_results: tuple[tuple[float, float], ...] = field(default_factory=tuple)


# --- triplet sampling -----------------------------------------------------------

def _sentence_table(docs: Sequence[HybridDocument]) -> list[SentenceRef]:
    table = []
    for doc_index, doc in enumerate(docs):
        for sentence in doc.sentences:
            if sentence.label is None:
                raise UnlabeledSentence(
                    f"document {doc.doc_id} has unlabeled sentences"
                )
            table.append(SentenceRef(
                doc_index, sentence.index, sentence.label, sentence.text
            ))
    return table


def sample_triplets(docs: Sequence[HybridDocument], count: int,
                    rng: np.random.Generator) -> list[Triplet]:
    """Draw triplets: anchor uniform, positive same-label (same document
    when the document offers one), negative other-label corpus-wide."""
    table = _sentence_table(docs)
    return [
        Triplet(table[a], table[p], table[n])
        for a, p, n in _sample_index_triplets(table, count, rng)
    ]


def _sample_index_triplets(table: list[SentenceRef], count: int,
                           rng: np.random.Generator) -> list[tuple[int, int, int]]:
    by_label: dict[AuthorLabel, list[int]] = {}
    by_doc_label: dict[tuple[int, AuthorLabel], list[int]] = {}
    for i, ref in enumerate(table):
        by_label.setdefault(ref.label, []).append(i)
        by_doc_label.setdefault((ref.doc_index, ref.label), []).append(i)

    def other(label: AuthorLabel) -> AuthorLabel:
        return (AuthorLabel.GENERATED if label is AuthorLabel.HUMAN
                else AuthorLabel.HUMAN)

    anchor_pool = [
        i for i, ref in enumerate(table)
        if len(by_label.get(ref.label, ())) >= 2
        and len(by_label.get(other(ref.label), ())) >= 1
    ]
    if not anchor_pool:
        raise SingleClassCorpus(
            "no sentence has both a same-label positive and an other-label negative"
        )

    def pick(pool: list[int], exclude: int | None = None) -> int:
        while True:
            choice = pool[int(rng.integers(0, len(pool)))]
            if choice != exclude:
                return choice

    triplets = []
    for _ in range(count):
        a = anchor_pool[int(rng.integers(0, len(anchor_pool)))]
        ref = table[a]
        local = by_doc_label.get((ref.doc_index, ref.label), [])
        pos_pool = local if len(local) >= 2 else by_label[ref.label]
        p = pick(pos_pool, exclude=a)
        n = pick(by_label[other(ref.label)])
        triplets.append((a, p, n))
    return triplets


# --- loss and gradient ----------------------------------------------------------

def project(head: ProjectionHead, matrix: EmbeddingMatrix | np.ndarray) -> np.ndarray:
    """Row-wise affine map: weights @ x + bias."""
    rows = matrix.vectors if isinstance(matrix, EmbeddingMatrix) else matrix
    if rows.shape[1] != head.d_in:
        raise DimensionMismatch(
            f"matrix dim {rows.shape[1]} != head d_in {head.d_in}"
        )
    return rows @ head.weights.T + head.bias


def _check_batch(head: ProjectionHead, anchors: np.ndarray,
                 positives: np.ndarray, negatives: np.ndarray) -> None:
    shapes = {anchors.shape, positives.shape, negatives.shape}
    if len(shapes) != 1:
        raise DimensionMismatch(f"triplet parts have differing shapes: {shapes}")
    if anchors.ndim != 2 or anchors.shape[1] != head.d_in:
        raise DimensionMismatch(
            f"batch dim {anchors.shape} incompatible with head d_in {head.d_in}"
        )


def _distances(head: ProjectionHead, anchors: np.ndarray, positives: np.ndarray,
               negatives: np.ndarray):
    pa = project(head, anchors)
    pp = project(head, positives)
    pn = project(head, negatives)
    diff_p = pa - pp
    diff_n = pa - pn
    d1 = np.linalg.norm(diff_p, axis=1)
    d2 = np.linalg.norm(diff_n, axis=1)
    return diff_p, diff_n, d1, d2


def triplet_loss(head: ProjectionHead, anchors: np.ndarray, positives: np.ndarray,
                 negatives: np.ndarray, margin: float = 1.0) -> float:
    """Mean hinge loss max(0, d1 - d2 + margin) over the batch."""
    _check_batch(head, anchors, positives, negatives)
    _, _, d1, d2 = _distances(head, anchors, positives, negatives)
    return float(np.mean(np.maximum(0.0, d1 - d2 + margin)))


def loss_gradient(head: ProjectionHead, anchors: np.ndarray, positives: np.ndarray,
                  negatives: np.ndarray, margin: float = 1.0
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Exact subgradient of the batch mean loss w.r.t. weights and bias.

    Inactive hinges contribute nothing; at d1 = 0 or d2 = 0 the distance
    subgradient is taken as the zero vector. The bias gradient is
    identically zero (distances are translation invariant); it is returned
    for interface completeness.
    """
    _check_batch(head, anchors, positives, negatives)
    diff_p, diff_n, d1, d2 = _distances(head, anchors, positives, negatives)
    batch = anchors.shape[0]
    active = (d1 - d2 + margin) > 0.0

    with np.errstate(divide="ignore", invalid="ignore"):
        u1 = np.where((d1 > 0)[:, None], diff_p / np.where(d1 == 0, 1, d1)[:, None], 0.0)
        u2 = np.where((d2 > 0)[:, None], diff_n / np.where(d2 == 0, 1, d2)[:, None], 0.0)
    u1[~active] = 0.0
    u2[~active] = 0.0

    # d(loss)/d(projected): anchor gets u1 - u2, positive -u1, negative +u2.
    grad_w = (
        (u1 - u2).T @ anchors
        + (-u1).T @ positives
        + u2.T @ negatives
    ) / batch
    grad_b = np.zeros(head.d_out)
    return grad_w, grad_b


# --- training -------------------------------------------------------------------

def identity_head(dim: int, rng: np.random.Generator,
                  noise: float = 1e-3) -> ProjectionHead:
    """Identity map plus small Gaussian noise; the training start point."""
    weights = np.eye(dim) + noise * rng.standard_normal((dim, dim))
    bias = noise * rng.standard_normal(dim)
    return ProjectionHead(weights, bias)


def _corpus_is_two_class(docs: Sequence[HybridDocument]) -> bool:
    labels = set()
    for doc in docs:
        for sentence in doc.sentences:
            if sentence.label is not None:
                labels.add(sentence.label)
    return len(labels) == 2


def _default_val_scorer(val_docs: Sequence[HybridDocument],
                        provider: EmbeddingProvider,
                        k: int) -> Callable[[ProjectionHead], float]:
    # Imported here to avoid a module cycle: the detector applies heads
    # produced by this module.
    from .detector import PrototypeParams, detect
    from .evaluation import f1_at_k
    from .corpus import ground_truth_boundaries

    params = PrototypeParams(p=1, k_candidates=k)
    truths = [set(ground_truth_boundaries(doc)) for doc in val_docs]

    def score(head: ProjectionHead) -> float:
        total = 0.0
        for doc, truth in zip(val_docs, truths):
            prediction = detect(doc, provider, head=head, params=params)
            total += f1_at_k(prediction, truth)
        return total / len(val_docs)

    return score


def train_projection(
    train_docs: Sequence[HybridDocument],
    val_docs: Sequence[HybridDocument],
    provider: EmbeddingProvider,
    config: TrainConfig,
    val_scorer: Callable[[ProjectionHead], float] | None = None,
) -> tuple[ProjectionHead, TrainHistory]:
    """Train the projection head with mini-batch gradient descent.

    Per epoch: sample ``epoch_size`` fresh triplets, descend in batches,
    decay the rate, score validation F1@K through the detector (p=1), and
    stop once the score fails to improve on the previous epoch. The
    checkpoint with the best validation score (the untrained head counts
    as epoch 0) is returned. With several candidate rates the whole
    procedure runs per rate and the best validation result wins.
    """
    if not train_docs or not val_docs:
        raise SingleClassCorpus("training and validation splits must be non-empty")
    if not _corpus_is_two_class(train_docs):
        raise SingleClassCorpus("training split must contain both labels")

    table = _sentence_table(list(train_docs))
    texts = [ref.text for ref in table]
    base = provider.embed(texts).vectors
    dim = base.shape[1]

    if val_scorer is None:
        val_scorer = _default_val_scorer(val_docs, provider, config.k_validate)

    best_overall: tuple[float, int, ProjectionHead, TrainHistory] | None = None
    rate_results: list[tuple[float, float]] = []

    for rate_index, rate in enumerate(config.rates):
        rng = np.random.default_rng([config.seed, rate_index])
        weights = np.eye(dim) + config.init_noise * rng.standard_normal((dim, dim))
        bias = config.init_noise * rng.standard_normal(dim)

        def snapshot() -> ProjectionHead:
            return ProjectionHead(weights.copy(), bias.copy())

        initial_score = float(val_scorer(snapshot()))
        best_score, best_epoch, best_head = initial_score, 0, snapshot()
        prev_score = initial_score
        records: list[EpochRecord] = []
        streak = 0

        for epoch in range(1, config.max_epochs + 1):
            lr = rate * (1.0 - config.decay) ** (epoch - 1)
            triplets = _sample_index_triplets(table, config.epoch_size, rng)
            losses = []
            for start in range(0, len(triplets), config.batch_size):
                chunk = triplets[start:start + config.batch_size]
                xa = base[[a for a, _, _ in chunk]]
                xp = base[[p for _, p, _ in chunk]]
                xn = base[[n for _, _, n in chunk]]
                if not np.all(np.isfinite(weights)):
                    raise NonFiniteLoss(
                        f"weights diverged at rate {rate}, epoch {epoch}"
                    )
                head = ProjectionHead(weights, bias)
                loss = triplet_loss(head, xa, xp, xn, config.margin)
                if not np.isfinite(loss):
                    raise NonFiniteLoss(
                        f"non-finite loss at rate {rate}, epoch {epoch}"
                    )
                losses.append((loss, len(chunk)))
                grad_w, grad_b = loss_gradient(head, xa, xp, xn, config.margin)
                weights = weights - lr * grad_w
                bias = bias - lr * grad_b
            mean_loss = (
                sum(l * n for l, n in losses) / sum(n for _, n in losses)
            )
            score = float(val_scorer(snapshot()))
            records.append(EpochRecord(epoch, float(mean_loss), score, lr))
            if score > best_score:
                best_score, best_epoch, best_head = score, epoch, snapshot()
            if score <= prev_score:
                streak += 1
                if streak >= config.patience:
                    break
            else:
                streak = 0
            prev_score = score

        rate_results.append((rate, best_score))
        history = TrainHistory(
            records=tuple(records),
            best_epoch=best_epoch,
            initial_val_f1=initial_score,
            base_rate=rate,
        )
        if best_overall is None or best_score > best_overall[0]:
            best_overall = (best_score, rate_index, best_head, history)

    _, _, head, history = best_overall
    history = TrainHistory(
        records=history.records,
        best_epoch=history.best_epoch,
        initial_val_f1=history.initial_val_f1,
        base_rate=history.base_rate,
        rate_results=tuple(rate_results),
    )
    return head, history


# --- head persistence -----------------------------------------------------------

def save_head(head: ProjectionHead, path: str | Path, provider_id: str,
              config: TrainConfig | None = None) -> None:
    record = {
        "d_in": head.d_in,
        "d_out": head.d_out,
        "weights": [[float(x) for x in row] for row in head.weights],
        "bias": [float(x) for x in head.bias],
        "provider_id": provider_id,
        "config": _config_dict(config) if config else None,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(record, handle)
        handle.write("\n")


def _config_dict(config: TrainConfig) -> dict:
    return {
        "learning_rate": config.learning_rate,
        "lr_grid": list(config.lr_grid),
        "decay": config.decay,
        "epoch_size": config.epoch_size,
        "batch_size": config.batch_size,
        "margin": config.margin,
        "patience": config.patience,
        "max_epochs": config.max_epochs,
        "seed": config.seed,
        "k_validate": config.k_validate,
    }


def load_head(path: str | Path) -> tuple[ProjectionHead, dict]:
    with open(path, encoding="utf-8") as handle:
        record = json.load(handle)
    head = ProjectionHead(
        np.array(record["weights"], dtype=float),
        np.array(record["bias"], dtype=float),
    )
    meta = {key: record.get(key) for key in ("provider_id", "config")}
    return head, meta
