"""Scoring, split construction, experiment running, and report rendering.

The score of a candidate list L against the ground-truth boundary set T is

    F1@K = 2 * |L intersect T| / (|L| + |T|)

where |L| is the length of the list actually emitted (always K for the
prototype detector and the random baseline, possibly fewer for classifier
transitions). Reports aggregate per-document scores overall and broken
down by boundary count, averaged over independent runs.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import html as html_lib
import json
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from .baselines import (
    LogisticConfig,
    classify_sentences,
    random_boundaries,
    train_logistic,
    transitions_to_boundaries,
)
from .corpus import HybridDocument, ground_truth_boundaries
from .detector import BoundaryPrediction, PrototypeParams, detect, method_id_for
from .embeddings import EmbeddingProvider
from .errors import EmptyCorpus, EmptyTruth, SinglePrompt, TooFewGroups
from .metric import ProjectionHead, TrainConfig, train_projection

REPORT_SCHEMA = "seamline-report/1"
BREAKDOWN_KEYS = ("1", "2", "3", "other")


# --- scoring ----------------------------------------------------------------

def f1_at_k(predicted: BoundaryPrediction, truth: set[int]) -> float:
    """Harmonic-mean overlap of the emitted candidate list and the truth set."""
    if not truth:
        raise EmptyTruth("cannot score against an empty boundary set")
    overlap = len(predicted.position_set() & truth)
    return 2.0 * overlap / (len(predicted.candidates) + len(truth))


def expected_random_f1(n: float, b: int, k: int) -> float:
    """Exact expectation of F1@K for uniformly random distinct candidates.

    The overlap of a uniform K-subset of the n-1 positions with a fixed
    b-element truth set is hypergeometric with mean K*b/(n-1); F1 is linear
    in the overlap at fixed list sizes, so the expectation is closed-form.
    """
    if n < 2 or not 1 <= b <= n - 1 or not 1 <= k <= n - 1:
        raise ValueError(f"domain violation: n={n}, b={b}, k={k}")
    return 2.0 * (k * b / (n - 1)) / (k + b)


# --- splits -----------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    mode: str                       # "id" or "ood"
    assignments: dict[str, str]     # doc_id -> train | val | test
    seed: int
    fold_id: int | None = None      # test prompt for OOD folds


def split_docs(corpus: Sequence[HybridDocument], spec: SplitSpec
               ) -> tuple[list[HybridDocument], list[HybridDocument], list[HybridDocument]]:
    parts = {"train": [], "val": [], "test": []}
    for doc in corpus:
        part = spec.assignments.get(doc.doc_id)
        if part is not None:
            parts[part].append(doc)
    return parts["train"], parts["val"], parts["test"]


def _grouped_by_source(docs: Sequence[HybridDocument]) -> dict[str, list[HybridDocument]]:
    groups: dict[str, list[HybridDocument]] = {}
    for doc in docs:
        groups.setdefault(doc.source_id, []).append(doc)
    return groups


def make_id_split(corpus: Sequence[HybridDocument],
                  ratios: tuple[float, float, float] = (0.70, 0.15, 0.15),
                  seed: int = 0) -> SplitSpec:
    """Group documents by source essay within each prompt and assign whole
    groups 70/15/15. No source essay ever straddles partitions; an odd
    leftover group goes to test."""
    if not corpus:
        raise EmptyCorpus("cannot split an empty corpus")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    rng = np.random.default_rng(seed)
    assignments: dict[str, str] = {}
    prompts: dict[int, list[HybridDocument]] = {}
    for doc in corpus:
        prompts.setdefault(doc.prompt_id, []).append(doc)
    for prompt_id in sorted(prompts):
        groups = _grouped_by_source(prompts[prompt_id])
        names = sorted(groups)
        if len(names) < 3:
            raise TooFewGroups(
                f"prompt {prompt_id} has {len(names)} source group(s); need >= 3"
            )
        order = [names[i] for i in rng.permutation(len(names))]
        n_train = int(ratios[0] * len(order) + 0.5)
        remainder = len(order) - n_train
        n_val = remainder // 2
        for rank, name in enumerate(order):
            if rank < n_train:
                part = "train"
            elif rank < n_train + n_val:
                part = "val"
            else:
                part = "test"
            for doc in groups[name]:
                assignments[doc.doc_id] = part
    return SplitSpec(mode="id", assignments=assignments, seed=seed)


def make_ood_folds(corpus: Sequence[HybridDocument],
                   seed: int = 0) -> list[SplitSpec]:
    """Prompt-wise cross-validation: each fold tests one prompt and splits
    the remaining prompts' source groups 70/30 into train/val."""
    if not corpus:
        raise EmptyCorpus("cannot split an empty corpus")
    prompt_ids = sorted({doc.prompt_id for doc in corpus})
    if len(prompt_ids) < 2:
        raise SinglePrompt("prompt-wise cross-validation needs >= 2 prompts")
    folds = []
    for fold_index, test_prompt in enumerate(prompt_ids):
        rng = np.random.default_rng([seed, fold_index])
        assignments: dict[str, str] = {}
        rest = [doc for doc in corpus if doc.prompt_id != test_prompt]
        for doc in corpus:
            if doc.prompt_id == test_prompt:
                assignments[doc.doc_id] = "test"
        groups = _grouped_by_source(rest)
        names = sorted(groups)
        order = [names[i] for i in rng.permutation(len(names))]
        n_train = int(0.7 * len(order) + 0.5)
        for rank, name in enumerate(order):
            part = "train" if rank < n_train else "val"
            for doc in groups[name]:
                assignments[doc.doc_id] = part
        folds.append(SplitSpec(
            mode="ood", assignments=assignments, seed=seed, fold_id=test_prompt
        ))
    return folds


# --- methods ----------------------------------------------------------------

class BoundaryMethod(Protocol):
    """What run_experiment drives: fit on train/val, predict per document."""

    method_id: str

    def fit(self, train_docs: Sequence[HybridDocument],
            val_docs: Sequence[HybridDocument], seed: int) -> None: ...

    def predict(self, doc: HybridDocument) -> BoundaryPrediction: ...


def _stable_seed(*parts) -> int:
    digest = hashlib.blake2b(
        "\x1f".join(str(p) for p in parts).encode("utf-8"), digest_size=4
    ).digest()
    return int.from_bytes(digest, "little")


class RandomMethod:
    """Uniform random candidates; seeded per document so predictions do not
    depend on evaluation order."""

    def __init__(self, k: int = 3):
        self.k = k
        self.method_id = "random"
        self._seed = 0

    def fit(self, train_docs, val_docs, seed: int) -> None:
        self._seed = seed

    def predict(self, doc: HybridDocument) -> BoundaryPrediction:
        rng = np.random.default_rng([self._seed, _stable_seed(doc.doc_id)])
        return random_boundaries(doc.n, self.k, rng, method_id=self.method_id)


class TriBertMethod:
    """Prototype-distance detection, with or without a trained head.

    Pass ``train_config`` to train a projection head during fit, ``head``
    to use a fixed pre-trained head, or neither for the untrained variant.
    """

    def __init__(self, provider: EmbeddingProvider,
                 params: PrototypeParams = PrototypeParams(),
                 train_config: TrainConfig | None = None,
                 head: ProjectionHead | None = None):
        self.provider = provider
        self.params = params
        self.train_config = train_config
        self.head = head
        trained = train_config is not None or head is not None
        self.method_id = method_id_for(params.p, params.k_candidates, trained)

    def fit(self, train_docs, val_docs, seed: int) -> None:
        if self.train_config is None:
            return
        config = replace(self.train_config, seed=seed)
        self.head, _ = train_projection(
            list(train_docs), list(val_docs), self.provider, config
        )

    def predict(self, doc: HybridDocument) -> BoundaryPrediction:
        return detect(doc, self.provider, head=self.head, params=self.params)


class LogisticMethod:
    """Logistic sentence classifier; label transitions become candidates."""

    def __init__(self, provider: EmbeddingProvider, k: int | None = 3,
                 config: LogisticConfig = LogisticConfig()):
        self.provider = provider
        self.k = k
        self.config = config
        self.model = None
        self.method_id = f"lr-k{k}" if k is not None else "lr-all"

    def _flatten(self, docs: Sequence[HybridDocument]):
        texts, labels = [], []
        for doc in docs:
            for sentence in doc.sentences:
                texts.append(sentence.text)
                labels.append(sentence.label)
        return texts, labels

    def fit(self, train_docs, val_docs, seed: int) -> None:
        texts, labels = self._flatten(train_docs)
        val_texts, val_labels = self._flatten(val_docs)
        matrix = self.provider.embed(texts)
        val_matrix = self.provider.embed(val_texts)
        config = replace(self.config, seed=seed)
        self.model = train_logistic(
            matrix, labels, config, val=(val_matrix.vectors, val_labels)
        )

    def predict(self, doc: HybridDocument) -> BoundaryPrediction:
        if self.model is None:
            raise RuntimeError("LogisticMethod.predict before fit")
        sequence = classify_sentences(self.model, self.provider.embed(doc.texts()))
        return transitions_to_boundaries(sequence, self.k, method_id=self.method_id)


# --- experiment -------------------------------------------------------------

@dataclass(frozen=True)
class RunScores:
    overall: float
    breakdown: dict[str, float]
    doc_scores: dict[str, float]


@dataclass(frozen=True)
class MethodResult:
    method_id: str
    overall: float | None
    breakdown: dict[str, float]
    per_run: tuple[RunScores, ...]
    error: str | None = None


@dataclass(frozen=True)
class DocAnnotation:
    doc_id: str
    sentences: tuple[str, ...]
    truth: tuple[int, ...]
    predictions: dict[str, tuple[int, ...]]


@dataclass(frozen=True)
class EvalReport:
    mode: str
    runs: int
    seed: int
    config: dict
    methods: tuple[MethodResult, ...]
    annotations: tuple[DocAnnotation, ...] = field(default_factory=tuple)
    schema: str = REPORT_SCHEMA


def _bucket(count: int) -> str:
    return str(count) if count in (1, 2, 3) else "other"


def _aggregate(doc_rows: list[tuple[str, int, float]]) -> RunScores:
    overall = sum(score for _, _, score in doc_rows) / len(doc_rows)
    by_bucket: dict[str, list[float]] = {}
    for _, count, score in doc_rows:
        by_bucket.setdefault(_bucket(count), []).append(score)
    breakdown = {
        key: sum(scores) / len(scores)
        for key, scores in by_bucket.items()
    }
    return RunScores(
        overall=overall,
        breakdown=breakdown,
        doc_scores={doc_id: score for doc_id, _, score in doc_rows},
    )


def run_experiment(
    corpus: Sequence[HybridDocument],
    methods: Sequence[BoundaryMethod],
    split: SplitSpec | None = None,
    folds: Sequence[SplitSpec] | None = None,
    runs: int = 3,
    seed: int = 0,
    annotate: bool = False,
    jobs: int = 1,
) -> EvalReport:
    """Train and score every method, averaging over independent runs.

    ID mode takes one split; OOD mode takes the fold list and pools
    per-document scores across folds (weighting folds by test-set size).
    Documents without ground-truth boundaries are excluded from scoring.
    A method that raises is recorded as failed without aborting the rest.
    """
    if (split is None) == (folds is None):
        raise ValueError("provide exactly one of split= or folds=")
    if runs < 1:
        raise ValueError("runs must be >= 1")
    units = [split] if split is not None else list(folds)
    mode = units[0].mode

    test_sets = {}
    for unit_index, unit in enumerate(units):
        _, _, test = split_docs(corpus, unit)
        scored = [
            doc for doc in test
            if len(ground_truth_boundaries(doc)) > 0
        ]
        test_sets[unit_index] = sorted(scored, key=lambda d: d.doc_id)

    results = []
    annotations: dict[str, DocAnnotation] = {}
    for method in methods:
        per_run: list[RunScores] = []
        error = None
        try:
            for run in range(runs):
                doc_rows: list[tuple[str, int, float]] = []
                for unit_index, unit in enumerate(units):
                    train, val, _ = split_docs(corpus, unit)
                    method.fit(train, val, _stable_seed(seed, run, unit_index))
                    test = test_sets[unit_index]
                    if jobs > 1:
                        with concurrent.futures.ThreadPoolExecutor(jobs) as pool:
                            predictions = list(pool.map(method.predict, test))
                    else:
                        predictions = [method.predict(doc) for doc in test]
                    for doc, prediction in zip(test, predictions):
                        truth = set(ground_truth_boundaries(doc))
                        score = f1_at_k(prediction, truth)
                        doc_rows.append((doc.doc_id, len(truth), score))
                        if annotate and run == 0:
                            existing = annotations.get(doc.doc_id)
                            preds = dict(existing.predictions) if existing else {}
                            preds[method.method_id] = tuple(prediction.positions())
                            annotations[doc.doc_id] = DocAnnotation(
                                doc_id=doc.doc_id,
                                sentences=tuple(doc.texts()),
                                truth=tuple(sorted(truth)),
                                predictions=preds,
                            )
                if not doc_rows:
                    raise EmptyCorpus("no scoreable test documents")
                per_run.append(_aggregate(doc_rows))
        except Exception as exc:  # noqa: BLE001 - survives one bad method
            error = f"{type(exc).__name__}: {exc}"
            per_run = []

        if error is None:
            overall = sum(r.overall for r in per_run) / len(per_run)
            keys = sorted({key for r in per_run for key in r.breakdown},
                          key=BREAKDOWN_KEYS.index)
            breakdown = {
                key: sum(r.breakdown[key] for r in per_run if key in r.breakdown)
                / sum(1 for r in per_run if key in r.breakdown)
                for key in keys
            }
            results.append(MethodResult(
                method.method_id, overall, breakdown, tuple(per_run)
            ))
        else:
            results.append(MethodResult(method.method_id, None, {}, (), error))

    return EvalReport(
        mode=mode,
        runs=runs,
        seed=seed,
        config={"runs": runs, "seed": seed, "mode": mode,
                "methods": [m.method_id for m in methods]},
        methods=tuple(results),
        annotations=tuple(annotations[k] for k in sorted(annotations)),
    )


# --- rendering ----------------------------------------------------------------

def report_to_dict(report: EvalReport) -> dict:
    return {
        "schema": report.schema,
        "mode": report.mode,
        "runs": report.runs,
        "seed": report.seed,
        "config": report.config,
        "methods": [
            {
                "method_id": m.method_id,
                "overall": m.overall,
                "breakdown": m.breakdown,
                "per_run": [
                    {
                        "overall": r.overall,
                        "breakdown": r.breakdown,
                        "doc_scores": r.doc_scores,
                    }
                    for r in m.per_run
                ],
                "error": m.error,
            }
            for m in report.methods
        ],
        "annotations": [
            {
                "doc_id": a.doc_id,
                "sentences": list(a.sentences),
                "truth": list(a.truth),
                "predictions": {k: list(v) for k, v in a.predictions.items()},
            }
            for a in report.annotations
        ],
    }


def report_from_dict(data: dict) -> EvalReport:
    methods = tuple(
        MethodResult(
            method_id=m["method_id"],
            overall=m["overall"],
            breakdown=dict(m["breakdown"]),
            per_run=tuple(
                RunScores(r["overall"], dict(r["breakdown"]), dict(r["doc_scores"]))
                for r in m["per_run"]
            ),
            error=m.get("error"),
        )
        for m in data["methods"]
    )
    annotations = tuple(
        DocAnnotation(
            doc_id=a["doc_id"],
            sentences=tuple(a["sentences"]),
            truth=tuple(a["truth"]),
            predictions={k: tuple(v) for k, v in a["predictions"].items()},
        )
        for a in data.get("annotations", [])
    )
    return EvalReport(
        mode=data["mode"],
        runs=data["runs"],
        seed=data["seed"],
        config=data["config"],
        methods=methods,
        annotations=annotations,
        schema=data.get("schema", REPORT_SCHEMA),
    )


def _text_table(report: EvalReport) -> str:
    headers = ["Method", "#Bry=1", "#Bry=2", "#Bry=3", "All"]
    rows = [headers]
    for m in report.methods:
        if m.error is not None:
            rows.append([m.method_id, "-", "-", "-", f"ERROR: {m.error}"])
            continue
        cells = [m.method_id]
        for key in ("1", "2", "3"):
            value = m.breakdown.get(key)
            cells.append(f"{value:.3f}" if value is not None else "-")
        cells.append(f"{m.overall:.3f}")
        rows.append(cells)
    widths = [max(len(row[i]) for row in rows) for i in range(len(headers))]
    lines = []
    for index, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if index == 0:
            lines.append("  ".join("-" * widths[i] for i in range(len(headers))))
    footer = f"(mode={report.mode}, runs={report.runs}, seed={report.seed})"
    return "\n".join(lines + [footer]) + "\n"


_MARKER = '<span class="boundary-marker" title="predicted boundary">&#9616;</span>'


def _html_doc(annotation: DocAnnotation) -> str:
    blocks = [f'<div class="doc"><h3>{html_lib.escape(annotation.doc_id)}</h3>']
    for method_id, positions in annotation.predictions.items():
        pieces = [f'<p class="method-view"><b>{html_lib.escape(method_id)}</b>: ']
        position_set = set(positions)
        for index, sentence in enumerate(annotation.sentences, start=1):
            pieces.append(f'<span class="sentence">{html_lib.escape(sentence)}</span>')
            if index in position_set:
                pieces.append(_MARKER)
            if index < len(annotation.sentences):
                pieces.append(" ")
        pieces.append("</p>")
        blocks.append("".join(pieces))
    truth = ", ".join(str(t) for t in annotation.truth)
    blocks.append(f'<p class="truth">true boundaries: {truth}</p></div>')
    return "\n".join(blocks)


def _html_report(report: EvalReport) -> str:
    table = html_lib.escape(_text_table(report))
    docs = "\n".join(_html_doc(a) for a in report.annotations)
    return (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
        "<title>boundary detection report</title>\n"
        "<style>.boundary-marker{color:#c00;font-weight:bold;padding:0 2px}"
        ".doc{margin:1em 0;border-top:1px solid #ccc}</style></head>\n"
        f"<body><pre>{table}</pre>\n{docs}\n</body></html>\n"
    )


def render_report(report: EvalReport, fmt: str = "text") -> str:
    if fmt == "text":
        return _text_table(report)
    if fmt == "json":
        return json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"
    if fmt == "html":
        return _html_report(report)
    raise ValueError(f"unknown report format {fmt!r}")
