"""Document model, sentence segmentation, corpus I/O, filtering, and statistics.

A hybrid document is an ordered list of sentences, each optionally labeled
"H" (human-written) or "G" (generated). A boundary is an index i, 1-based,
between sentence i and sentence i+1 where the two labels differ.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    EmptyCorpus,
    EmptyText,
    ParseError,
    SchemaError,
    UnlabeledSentence,
)

# Tokens that end with "." but do not terminate a sentence. Versioned with
# the package: changing this list changes segmentation, so corpora written
# with one version should be re-segmented rather than mixed.
ABBREVIATIONS = frozenset({
    "Dr.", "Mr.", "Mrs.", "Ms.", "Prof.", "Sr.", "Jr.", "St.", "Gen.",
    "Rep.", "Sen.", "Gov.", "Sgt.", "Capt.", "Lt.", "Col.",
    "vs.", "etc.", "e.g.", "i.e.", "cf.", "al.", "Fig.", "No.", "Vol.",
    "pp.", "p.", "approx.", "dept.", "est.", "Inc.", "Ltd.", "Co.",
    "U.S.", "U.K.", "a.m.", "p.m.", "Jan.", "Feb.", "Mar.", "Apr.",
    "Jun.", "Jul.", "Aug.", "Sep.", "Sept.", "Oct.", "Nov.", "Dec.",
})

_TERMINATORS = ".!?"


class AuthorLabel(Enum):
    """Authorship of one sentence; serialized as "H" / "G"."""

    HUMAN = "H"
    GENERATED = "G"


@dataclass(frozen=True)
class Sentence:
    """One sentence of a document. ``index`` is its 1-based position."""

    text: str
    index: int
    label: AuthorLabel | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("sentence text must contain a non-whitespace character")
        if self.index < 1:
            raise ValueError("sentence index is 1-based")

    @property
    def word_count(self) -> int:
        return len(self.text.split())


# Boundary count each fill-in task template produces (task ids 1-6).
TASK_BOUNDARY_COUNTS = {1: 1, 2: 1, 3: 2, 4: 2, 5: 3, 6: 3}


@dataclass(frozen=True)
class HybridDocument:
    """An ordered, optionally labeled document with provenance identifiers."""

    doc_id: str
    prompt_id: int
    source_id: str
    sentences: tuple[Sentence, ...]
    task_id: int | None = None

    def __post_init__(self):
        for expected, sentence in enumerate(self.sentences, start=1):
            if sentence.index != expected:
                raise ValueError(
                    f"sentence indexes must be contiguous from 1; "
                    f"got {sentence.index} at position {expected}"
                )
        if self.task_id is not None:
            if self.task_id not in TASK_BOUNDARY_COUNTS:
                raise ValueError(f"task_id must be 1-6, got {self.task_id}")
            if self.fully_labeled:
                changes = sum(
                    1 for a, b in zip(self.sentences, self.sentences[1:])
                    if a.label != b.label
                )
                expected_count = TASK_BOUNDARY_COUNTS[self.task_id]
                if changes != expected_count:
                    raise ValueError(
                        f"document {self.doc_id} declares task {self.task_id} "
                        f"({expected_count} boundaries) but has {changes}"
                    )

    @property
    def n(self) -> int:
        return len(self.sentences)

    @property
    def fully_labeled(self) -> bool:
        return all(s.label is not None for s in self.sentences)

    def texts(self) -> list[str]:
        return [s.text for s in self.sentences]


@dataclass(frozen=True)
class SourceEssay:
    """A raw human-written essay used as synthesis source material."""

    essay_id: str
    prompt_id: int
    text: str
    instructions: str = ""

    @property
    def word_count(self) -> int:
        return len(self.text.split())


@dataclass(frozen=True)
class CorpusStats:
    doc_count: int
    words_per_doc: float
    sentences_per_doc: float
    mean_len_generated: float
    mean_len_human: float
    generated_ratio: float
    breakdown: dict[str, "CorpusStats"] = field(default_factory=dict)


def make_document(
    doc_id: str,
    prompt_id: int,
    source_id: str,
    texts_and_labels: Sequence[tuple[str, AuthorLabel | None]],
    task_id: int | None = None,
) -> HybridDocument:
    """Build a document from (text, label) pairs, assigning 1-based indexes."""
    sentences = tuple(
        Sentence(text=text, index=i, label=label)
        for i, (text, label) in enumerate(texts_and_labels, start=1)
    )
    return HybridDocument(doc_id, prompt_id, source_id, sentences, task_id)


def _is_boundary_dot(text: str, pos: int) -> bool:
    """True when the terminator at ``pos`` ends a sentence.

    Rule: a terminator ends a sentence when followed by whitespace and an
    uppercase letter (or end of text), unless the token it closes is a known
    abbreviation.
    """
    # Trailing punctuation run: only split at the last terminator of "?!" etc.
    if pos + 1 < len(text) and text[pos + 1] in _TERMINATORS:
        return False
    tail = text[pos + 1:]
    if not tail.strip():
        return True
    if not tail[0].isspace():
        return False
    following = tail.lstrip()
    if not following[:1].isupper():
        return False
    if text[pos] == ".":
        token_start = pos
        while token_start > 0 and not text[token_start - 1].isspace():
            token_start -= 1
        if text[token_start:pos + 1] in ABBREVIATIONS:
            return False
    return True


def segment_text(text: str) -> list[Sentence]:
    """Split text into sentences by rule.

    Joining the sentence texts with single spaces recovers the input up to
    inter-sentence whitespace. Text after the last terminator becomes a
    final sentence, so no characters are dropped.
    """
    if not text.strip():
        raise EmptyText("no sentence can be produced from empty text")

    pieces: list[str] = []
    start = 0
    for pos, char in enumerate(text):
        if char in _TERMINATORS and _is_boundary_dot(text, pos):
            piece = text[start:pos + 1].strip()
            if piece:
                pieces.append(piece)
            start = pos + 1
    trailing = text[start:].strip()
    if trailing:
        pieces.append(trailing)

    if not pieces:
        raise EmptyText("no sentence can be produced")
    return [Sentence(text=piece, index=i) for i, piece in enumerate(pieces, start=1)]


def ground_truth_boundaries(doc: HybridDocument) -> list[int]:
    """Indexes i where sentence i and sentence i+1 have different labels."""
    if not doc.fully_labeled:
        raise UnlabeledSentence(f"document {doc.doc_id} has unlabeled sentences")
    return [
        i + 1
        for i in range(doc.n - 1)
        if doc.sentences[i].label != doc.sentences[i + 1].label
    ]


def filter_source_essays(essays: Iterable[SourceEssay]) -> list[SourceEssay]:
    """Keep essays with more than 100 words and no anonymization tokens.

    Anonymized source material marks entities with tokens starting with "@"
    (e.g. "@LOCATION"); such essays are dropped so the marker cannot leak
    into authorship labels.
    """
    kept = []
    for essay in essays:
        if essay.word_count <= 100:
            continue
        if any(token.startswith("@") for token in essay.text.split()):
            continue
        kept.append(essay)
    return kept


# --- JSONL corpus I/O -------------------------------------------------------
#
# One JSON object per line:
# {"doc_id": str, "prompt_id": int, "source_id": str, "task_id": int|null,
#  "sentences": [{"text": str, "label": "H"|"G"|null}]}

def _doc_to_record(doc: HybridDocument) -> dict:
    return {
        "doc_id": doc.doc_id,
        "prompt_id": doc.prompt_id,
        "source_id": doc.source_id,
        "task_id": doc.task_id,
        "sentences": [
            {"text": s.text, "label": s.label.value if s.label else None}
            for s in doc.sentences
        ],
    }


def _record_to_doc(record: dict, line_number: int) -> HybridDocument:
    for key in ("doc_id", "prompt_id", "source_id", "sentences"):
        if key not in record:
            raise SchemaError(f"line {line_number}: missing field {key!r}")
    raw_sentences = record["sentences"]
    if not isinstance(raw_sentences, list) or not raw_sentences:
        raise SchemaError(f"line {line_number}: 'sentences' must be a non-empty list")
    pairs: list[tuple[str, AuthorLabel | None]] = []
    for j, raw in enumerate(raw_sentences):
        if not isinstance(raw, dict) or "text" not in raw:
            raise SchemaError(f"line {line_number}: sentence {j} missing 'text'")
        label_value = raw.get("label")
        if label_value is None:
            label = None
        elif label_value in ("H", "G"):
            label = AuthorLabel(label_value)
        else:
            raise SchemaError(
                f"line {line_number}: label {label_value!r} outside {{'H','G',null}}"
            )
        text = raw["text"]
        if not isinstance(text, str) or not text.strip():
            raise SchemaError(f"line {line_number}: sentence {j} has empty text")
        pairs.append((text, label))
    task_id = record.get("task_id")
    if task_id is not None and not isinstance(task_id, int):
        raise SchemaError(f"line {line_number}: task_id must be int or null")
    if not isinstance(record["prompt_id"], int):
        raise SchemaError(f"line {line_number}: prompt_id must be int")
    try:
        return make_document(
            doc_id=str(record["doc_id"]),
            prompt_id=record["prompt_id"],
            source_id=str(record["source_id"]),
            texts_and_labels=pairs,
            task_id=task_id,
        )
    except ValueError as exc:
        raise SchemaError(f"line {line_number}: {exc}") from exc


def load_corpus(path: str | Path) -> list[HybridDocument]:
    docs = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_number, str(exc)) from exc
            if not isinstance(record, dict):
                raise SchemaError(f"line {line_number}: record must be an object")
            doc = _record_to_doc(record, line_number)
            if doc.doc_id in seen_ids:
                raise SchemaError(f"line {line_number}: duplicate doc_id {doc.doc_id!r}")
            seen_ids.add(doc.doc_id)
            docs.append(doc)
    return docs


def save_corpus(docs: Iterable[HybridDocument], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for doc in docs:
            handle.write(json.dumps(_doc_to_record(doc), ensure_ascii=False))
            handle.write("\n")


# --- source essay I/O -------------------------------------------------------
#
# {"essay_id": str, "prompt_id": int, "text": str, "instructions": str?}

def load_sources(path: str | Path) -> list[SourceEssay]:
    essays = []
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_number, str(exc)) from exc
            for key in ("essay_id", "prompt_id", "text"):
                if key not in record:
                    raise SchemaError(f"line {line_number}: missing field {key!r}")
            essays.append(SourceEssay(
                essay_id=str(record["essay_id"]),
                prompt_id=int(record["prompt_id"]),
                text=record["text"],
                instructions=record.get("instructions", ""),
            ))
    return essays


def save_sources(essays: Iterable[SourceEssay], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for essay in essays:
            record = {
                "essay_id": essay.essay_id,
                "prompt_id": essay.prompt_id,
                "text": essay.text,
            }
            if essay.instructions:
                record["instructions"] = essay.instructions
            handle.write(json.dumps(record, ensure_ascii=False))
            handle.write("\n")


# --- statistics -------------------------------------------------------------

def _mean(values: list[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def _stats_over(docs: list[HybridDocument]) -> CorpusStats:
    words_per_doc = []
    sentences_per_doc = []
    generated_lengths: list[float] = []
    human_lengths: list[float] = []
    generated_ratios = []
    for doc in docs:
        words_per_doc.append(float(sum(s.word_count for s in doc.sentences)))
        sentences_per_doc.append(float(doc.n))
        generated = [s for s in doc.sentences if s.label is AuthorLabel.GENERATED]
        generated_lengths.extend(float(s.word_count) for s in generated)
        human_lengths.extend(
            float(s.word_count) for s in doc.sentences
            if s.label is AuthorLabel.HUMAN
        )
        generated_ratios.append(len(generated) / doc.n)
    return CorpusStats(
        doc_count=len(docs),
        words_per_doc=_mean(words_per_doc),
        sentences_per_doc=_mean(sentences_per_doc),
        mean_len_generated=_mean(generated_lengths),
        mean_len_human=_mean(human_lengths),
        generated_ratio=_mean(generated_ratios),
    )


def corpus_stats(docs: Sequence[HybridDocument]) -> CorpusStats:
    """Corpus-level means plus a breakdown keyed by boundary count.

    Boundary counts 1, 2, and 3 get their own buckets; anything else goes
    under "other".
    """
    docs = list(docs)
    if not docs:
        raise EmptyCorpus("corpus_stats needs at least one document")
    for doc in docs:
        if not doc.fully_labeled:
            raise UnlabeledSentence(f"document {doc.doc_id} is not fully labeled")

    buckets: dict[str, list[HybridDocument]] = {}
    for doc in docs:
        count = len(ground_truth_boundaries(doc))
        key = str(count) if count in (1, 2, 3) else "other"
        buckets.setdefault(key, []).append(doc)

    overall = _stats_over(docs)
    breakdown = {
        key: _stats_over(bucket)
        for key, bucket in sorted(buckets.items())
    }
    return CorpusStats(
        doc_count=overall.doc_count,
        words_per_doc=overall.words_per_doc,
        sentences_per_doc=overall.sentences_per_doc,
        mean_len_generated=overall.mean_len_generated,
        mean_len_human=overall.mean_len_human,
        generated_ratio=overall.generated_ratio,
        breakdown=breakdown,
    )


def format_stats(stats: CorpusStats) -> str:
    """Plain-text summary of corpus statistics."""
    lines = [
        f"documents:            {stats.doc_count}",
        f"words per doc:        {stats.words_per_doc:.1f}",
        f"sentences per doc:    {stats.sentences_per_doc:.1f}",
        f"mean AI sentence len: {stats.mean_len_generated:.1f}",
        f"mean human sent len:  {stats.mean_len_human:.1f}",
        f"AI sentence ratio:    {stats.generated_ratio:.1%}",
    ]
    if stats.breakdown:
        lines.append("by boundary count:")
        for key, sub in stats.breakdown.items():
            lines.append(
                f"  #Bry={key}: {sub.doc_count} docs, "
                f"{sub.sentences_per_doc:.1f} sentences/doc, "
                f"AI ratio {sub.generated_ratio:.1%}"
            )
    return "\n".join(lines)
