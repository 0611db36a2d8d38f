"""Shared fixtures: deterministic source essays, labeled documents,
cluster-embedding fixtures, and test embedding providers."""

from __future__ import annotations

import numpy as np
import pytest

from seamline.corpus import (
    AuthorLabel,
    HybridDocument,
    SourceEssay,
    make_document,
)
from seamline.embeddings import EmbeddingMatrix
from seamline.synthesis import TASKS, MockGenerator, synthesize_hybrid

H = AuthorLabel.HUMAN
G = AuthorLabel.GENERATED

_CLAUSES = [
    "students benefit from early feedback on their drafts",
    "libraries remain busy well into the evening hours",
    "regular practice builds confidence over a full season",
    "small study groups keep members honest about deadlines",
    "careful planning makes long projects far less stressful",
    "mentors help newcomers find their footing quickly",
    "reading widely sharpens judgment about sources",
    "short daily sessions beat rare marathon efforts",
    "well kept notes pay off during final revisions",
    "honest peer review stings briefly but teaches plenty",
    "clear goals turn vague ambitions into weekly steps",
    "patient revision separates rough drafts from finished work",
    "steady routines leave room for the unexpected",
    "good questions matter more than quick answers",
]


def essay_text(essay_id: str, n_sentences: int = 12) -> str:
    """Deterministic essay with unique, cleanly segmentable sentences."""
    sentences = [
        f"Paragraph {i} of essay {essay_id} notes that "
        f"{_CLAUSES[(i * 3 + len(essay_id)) % len(_CLAUSES)]}."
        for i in range(1, n_sentences + 1)
    ]
    return " ".join(sentences)


def make_source(essay_id: str, prompt_id: int = 1,
                n_sentences: int = 12) -> SourceEssay:
    return SourceEssay(
        essay_id=essay_id,
        prompt_id=prompt_id,
        text=essay_text(essay_id, n_sentences),
        instructions=f"Write an essay responding to prompt {prompt_id}.",
    )


def make_sources(per_prompt: int, prompts=range(1, 9),
                 n_sentences: int = 12) -> list[SourceEssay]:
    return [
        make_source(f"p{prompt}e{index}", prompt, n_sentences)
        for prompt in prompts
        for index in range(per_prompt)
    ]


def build_synth_corpus(sources, seed: int = 0,
                       task_ids=(1, 2, 3, 4, 5, 6)) -> list[HybridDocument]:
    generator = MockGenerator(seed=seed)
    docs = []
    for index, source in enumerate(sources):
        task = TASKS[task_ids[index % len(task_ids)]]
        rng = np.random.default_rng([seed, index])
        result = synthesize_hybrid(source, task, generator, rng)
        if result.document is not None:
            docs.append(result.document)
    return docs


def labeled_doc(labels: str, doc_id: str = "doc", prompt_id: int = 1,
                source_id: str | None = None) -> HybridDocument:
    """Document from a label string like "HHGG"."""
    pairs = [
        (f"Sentence {i} of {doc_id} reads plainly.", H if ch == "H" else G)
        for i, ch in enumerate(labels, start=1)
    ]
    return make_document(doc_id, prompt_id, source_id or f"src-{doc_id}", pairs)


class MappingProvider:
    """Embedding provider backed by an explicit text -> vector table."""

    def __init__(self, mapping: dict[str, np.ndarray], dim: int,
                 provider_id: str = "fixture"):
        self.mapping = mapping
        self._dim = dim
        self._provider_id = provider_id

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def provider_id(self) -> str:
        return self._provider_id

    def embed(self, sentences) -> EmbeddingMatrix:
        rows = np.array([self.mapping[t] for t in sentences], dtype=float)
        return EmbeddingMatrix(rows.reshape(len(sentences), self._dim),
                               self._provider_id)


class CountingProvider:
    """Wraps a provider and counts embed() calls and sentences sent."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0
        self.sentences_seen = 0

    @property
    def dim(self):
        return self.inner.dim

    @property
    def provider_id(self):
        return self.inner.provider_id

    def embed(self, sentences):
        self.calls += 1
        self.sentences_seen += len(sentences)
        return self.inner.embed(sentences)


def cluster_fixture_docs(
    n_docs: int,
    rng: np.random.Generator,
    dim: int = 16,
    separation: float = 5.0,
    noise: float = 1.0,
    n_range: tuple[int, int] = (10, 16),
    boundary_margin: int = 0,
    prompt_count: int = 2,
    shared_geometry: bool = False,
) -> tuple[list[HybridDocument], MappingProvider]:
    """Single-boundary documents whose sentence vectors form two clusters.

    Human sentences sit near one center, generated sentences near another
    ``separation`` away; per-coordinate Gaussian noise has std ``noise``.
    ``boundary_margin`` keeps the boundary at least that far from both
    document edges. By default every document gets its own pair of cluster
    centers; ``shared_geometry`` reuses one pair corpus-wide (globally
    linearly separable classes).
    """
    mapping: dict[str, np.ndarray] = {}
    docs = []
    shared_h = rng.standard_normal(dim)
    shared_dir = rng.standard_normal(dim)
    shared_dir /= np.linalg.norm(shared_dir)
    for d in range(n_docs):
        n = int(rng.integers(n_range[0], n_range[1], endpoint=True))
        lo = 1 + boundary_margin
        hi = n - 1 - boundary_margin
        boundary = int(rng.integers(lo, hi, endpoint=True))
        if shared_geometry:
            center_h, direction = shared_h, shared_dir
        else:
            direction = rng.standard_normal(dim)
            direction /= np.linalg.norm(direction)
            center_h = rng.standard_normal(dim)
        center_g = center_h + separation * direction
        doc_id = f"cluster{d}"
        pairs = []
        for i in range(1, n + 1):
            text = f"{doc_id}-s{i}"
            label = H if i <= boundary else G
            center = center_h if label is H else center_g
            mapping[text] = center + noise * rng.standard_normal(dim)
            pairs.append((text, label))
        docs.append(make_document(
            doc_id, prompt_id=(d % prompt_count) + 1,
            source_id=f"srv{d}", texts_and_labels=pairs,
        ))
    return docs, MappingProvider(mapping, dim)


def multi_boundary_cluster_docs(
    n_docs: int,
    rng: np.random.Generator,
    dim: int = 16,
    separation: float = 3.0,
    noise: float = 1.0,
    segments: int = 4,
    seg_range: tuple[int, int] = (2, 4),
) -> tuple[list[HybridDocument], MappingProvider]:
    """Documents with alternating short same-authorship segments (three
    boundaries for four segments), clustered like cluster_fixture_docs."""
    mapping: dict[str, np.ndarray] = {}
    docs = []
    for d in range(n_docs):
        center_h = rng.standard_normal(dim)
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
        center_g = center_h + separation * direction
        doc_id = f"multi{d}"
        pairs = []
        index = 0
        for segment in range(segments):
            label = H if segment % 2 == 0 else G
            center = center_h if label is H else center_g
            for _ in range(int(rng.integers(*seg_range, endpoint=True))):
                index += 1
                text = f"{doc_id}-s{index}"
                mapping[text] = center + noise * rng.standard_normal(dim)
                pairs.append((text, label))
        docs.append(make_document(
            doc_id, prompt_id=(d % 2) + 1, source_id=f"msrc{d}",
            texts_and_labels=pairs,
        ))
    return docs, MappingProvider(mapping, dim)


def nuisance_fixture_docs(
    n_docs: int,
    rng: np.random.Generator,
    dim: int = 64,
    signal: float = 1.0,
    signal_noise: float = 0.2,
    nuisance_noise: float = 3.0,
    n_range: tuple[int, int] = (10, 16),
    prompt_count: int = 2,
) -> tuple[list[HybridDocument], MappingProvider]:
    """Single-boundary documents whose class signal lives in 2 of ``dim``
    coordinates, buried under high-variance class-independent noise in the
    remaining coordinates. Euclidean geometry on the raw vectors is
    dominated by the nuisance; a learned projection can recover the signal.
    """
    mapping: dict[str, np.ndarray] = {}
    docs = []
    for d in range(n_docs):
        n = int(rng.integers(n_range[0], n_range[1], endpoint=True))
        boundary = int(rng.integers(1, n - 1, endpoint=True))
        doc_id = f"nuis{d}"
        pairs = []
        for i in range(1, n + 1):
            text = f"{doc_id}-s{i}"
            label = H if i <= boundary else G
            vec = np.empty(dim)
            sign = 1.0 if label is H else -1.0
            vec[:2] = sign * signal + signal_noise * rng.standard_normal(2)
            vec[2:] = nuisance_noise * rng.standard_normal(dim - 2)
            mapping[text] = vec
            pairs.append((text, label))
        docs.append(make_document(
            doc_id, prompt_id=(d % prompt_count) + 1,
            source_id=f"nsrc{d}", texts_and_labels=pairs,
        ))
    return docs, MappingProvider(mapping, dim)


def grouped_corpus(groups_per_prompt: int, docs_per_group: int = 2,
                   prompts=(1,), labels: str = "HHGG") -> list[HybridDocument]:
    """Labeled documents organized into source groups within prompts."""
    docs = []
    for prompt in prompts:
        for group in range(groups_per_prompt):
            source_id = f"p{prompt}src{group}"
            for index in range(docs_per_group):
                docs.append(labeled_doc(
                    labels, doc_id=f"{source_id}-d{index}",
                    prompt_id=prompt, source_id=source_id,
                ))
    return docs


def single_boundary_corpus(n_docs: int, sentences: int = 13,
                           rng: np.random.Generator | None = None,
                           prompts=(1,)) -> list[HybridDocument]:
    """One-boundary documents of fixed length, boundary position uniform."""
    rng = rng or np.random.default_rng(0)
    docs = []
    for index in range(n_docs):
        boundary = int(rng.integers(1, sentences - 1, endpoint=True))
        labels = "H" * boundary + "G" * (sentences - boundary)
        prompt = prompts[index % len(prompts)]
        docs.append(labeled_doc(
            labels, doc_id=f"sb{index}", prompt_id=prompt,
            source_id=f"sbsrc{index}",
        ))
    return docs


@pytest.fixture
def small_synth_corpus():
    """Mock-synthesized corpus across all six tasks and two prompts."""
    return build_synth_corpus(make_sources(6, prompts=(1, 2)), seed=11)
