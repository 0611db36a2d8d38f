"""Adjacent-prototype boundary detection.

For every inter-sentence position i the left prototype averages the
embeddings of sentence i and up to p-1 preceding sentences, the right
prototype averages sentence i+1 and up to p-1 following sentences, and the
position's score is the Euclidean distance between the two. The K
highest-scoring positions are the boundary candidates; windows truncate at
document edges so every position stays scoreable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import HybridDocument
from .embeddings import EmbeddingMatrix, EmbeddingProvider
from .errors import PositionOutOfRange, TooFewSentences
from .metric import ProjectionHead, project


@dataclass(frozen=True)
class PrototypeParams:
    p: int = 1
    k_candidates: int = 3

    def __post_init__(self):
        if self.p < 1 or self.k_candidates < 1:
            raise ValueError("prototype size and candidate count must be >= 1")


@dataclass(frozen=True)
class DistanceProfile:
    """Scores for positions 1 .. n-1; score i sits at index i-1."""

    scores: tuple[float, ...]

    def __post_init__(self):
        if any(not np.isfinite(s) or s < 0 for s in self.scores):
            raise ValueError("profile scores must be finite and non-negative")


@dataclass(frozen=True)
class BoundaryPrediction:
    """Candidate positions with scores, descending score order."""

    candidates: tuple[tuple[int, float], ...]
    method_id: str

    def positions(self) -> list[int]:
        return [pos for pos, _ in self.candidates]

    def position_set(self) -> set[int]:
        return {pos for pos, _ in self.candidates}


def _rows(matrix: EmbeddingMatrix | np.ndarray) -> np.ndarray:
    return matrix.vectors if isinstance(matrix, EmbeddingMatrix) else matrix


def prototype(matrix: EmbeddingMatrix | np.ndarray, position: int,
              side: str, p: int) -> np.ndarray:
    """Mean of the window of up to p rows ending (left) or starting (right)
    at the given inter-sentence position."""
    rows = _rows(matrix)
    n = rows.shape[0]
    if side == "left":
        if not 1 <= position <= n:
            raise PositionOutOfRange(f"left anchor {position} outside [1, {n}]")
        start = max(1, position - p + 1)
        return rows[start - 1:position].mean(axis=0)
    if side == "right":
        if not 0 <= position <= n - 1:
            raise PositionOutOfRange(f"right anchor {position} outside [0, {n - 1}]")
        end = min(n, position + p)
        return rows[position:end].mean(axis=0)
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def distance_profile(matrix: EmbeddingMatrix | np.ndarray,
                     p: int) -> DistanceProfile:
    """Euclidean distance between left and right prototypes at every
    position, computed with sliding window sums."""
    rows = _rows(matrix)
    n = rows.shape[0]
    if n < 2:
        raise TooFewSentences("distance profile needs at least 2 sentences")

    # Prefix sums give each truncated window mean in O(1).
    prefix = np.vstack([np.zeros(rows.shape[1]), np.cumsum(rows, axis=0)])
    scores = []
    for i in range(1, n):
        lo = max(1, i - p + 1)
        left = (prefix[i] - prefix[lo - 1]) / (i - lo + 1)
        hi = min(n, i + p)
        right = (prefix[hi] - prefix[i]) / (hi - i)
        scores.append(float(np.linalg.norm(left - right)))
    return DistanceProfile(tuple(scores))


def top_k_boundaries(profile: DistanceProfile, k: int,
                     method_id: str = "profile") -> BoundaryPrediction:
    """The min(k, n-1) positions with the largest scores; ties go to the
    smaller position."""
    ranked = sorted(
        ((pos, score) for pos, score in enumerate(profile.scores, start=1)),
        key=lambda item: (-item[1], item[0]),
    )
    return BoundaryPrediction(tuple(ranked[:k]), method_id)


def method_id_for(p: int, k: int, trained: bool) -> str:
    return f"tribert-p{p}-k{k}" if trained else f"tribert-nt-p{p}-k{k}"


def detect(doc: HybridDocument, provider: EmbeddingProvider,
           head: ProjectionHead | None = None,
           params: PrototypeParams = PrototypeParams()) -> BoundaryPrediction:
    """Embed, optionally project, score, and pick top-K candidates."""
    if doc.n < 2:
        raise TooFewSentences(
            f"document {doc.doc_id} has {doc.n} sentence(s); need >= 2"
        )
    matrix = provider.embed(doc.texts())
    vectors = project(head, matrix) if head is not None else matrix.vectors
    profile = distance_profile(vectors, params.p)
    return top_k_boundaries(
        profile, params.k_candidates,
        method_id=method_id_for(params.p, params.k_candidates, head is not None),
    )
