"""seamline: boundary detection for human/AI hybrid documents."""

from .corpus import (
    AuthorLabel,
    HybridDocument,
    Sentence,
    SourceEssay,
    corpus_stats,
    ground_truth_boundaries,
    load_corpus,
    save_corpus,
    segment_text,
)
from .detector import BoundaryPrediction, PrototypeParams, detect, distance_profile
from .embeddings import CachedProvider, HashingProvider, RemoteProvider
from .evaluation import expected_random_f1, f1_at_k, make_id_split, make_ood_folds
from .metric import ProjectionHead, TrainConfig, train_projection
from .synthesis import TASKS, mock_generator, synthesize_hybrid

__version__ = "0.1.0"

__all__ = [
    "AuthorLabel",
    "BoundaryPrediction",
    "CachedProvider",
    "HashingProvider",
    "HybridDocument",
    "ProjectionHead",
    "PrototypeParams",
    "RemoteProvider",
    "Sentence",
    "SourceEssay",
    "TASKS",
    "TrainConfig",
    "corpus_stats",
    "detect",
    "distance_profile",
    "expected_random_f1",
    "f1_at_k",
    "ground_truth_boundaries",
    "load_corpus",
    "make_id_split",
    "make_ood_folds",
    "mock_generator",
    "save_corpus",
    "segment_text",
    "synthesize_hybrid",
    "train_projection",
    "__version__",
]
