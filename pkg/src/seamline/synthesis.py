"""Build labeled hybrid documents from human source essays.

Six fill-in task templates define where generated text replaces removed
source sentences:

    task 1  H->G         continue from a kept beginning
    task 2  G->H         lead into a kept ending
    task 3  H->G->H      fill between kept beginning and ending
    task 4  G->H->G      surround a kept middle
    task 5  H->G->H->G   task 3, then continue past a trimmed ending
    task 6  G->H->G->H   task 3, then lead into a trimmed beginning

Tasks 5 and 6 are composed in two generation steps; each synthesis attempt
runs the full composition. Invalid candidates (structure mismatch, empty
fill, duplicate sentences) are retried up to five times per source essay.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .corpus import (
    AuthorLabel,
    HybridDocument,
    Sentence,
    SourceEssay,
    make_document,
    segment_text,
)
from .errors import EmptyText, GeneratorUnavailable, SourceTooShort

H = AuthorLabel.HUMAN
G = AuthorLabel.GENERATED


@dataclass(frozen=True)
class FillTaskSpec:
    task_id: int
    structure: tuple[AuthorLabel, ...]

    @property
    def expected_boundaries(self) -> int:
        return len(self.structure) - 1


TASKS: dict[int, FillTaskSpec] = {
    1: FillTaskSpec(1, (H, G)),
    2: FillTaskSpec(2, (G, H)),
    3: FillTaskSpec(3, (H, G, H)),
    4: FillTaskSpec(4, (G, H, G)),
    5: FillTaskSpec(5, (H, G, H, G)),
    6: FillTaskSpec(6, (G, H, G, H)),
}

# Reason codes returned by validation.
STRUCTURE_MISMATCH = "structure_mismatch"
DUPLICATE_SENTENCE = "duplicate_sentence"
EMPTY_FILL = "empty_fill"


@dataclass(frozen=True)
class RemovalPlan:
    """Which source sentence ranges survive into the hybrid document.

    Spans are 1-based inclusive (start, end) ranges into the source
    sentence list, in source order. ``events`` holds the removal draw(s):
    one count for tasks 1-4, two for the composed tasks 5/6.
    ``stage_one_spans`` is the intermediate task-3 plan for tasks 5/6.
    """

    task_id: int
    source_count: int
    kept_spans: tuple[tuple[int, int], ...]
    removed_count: int
    events: tuple[int, ...]
    stage_one_spans: tuple[tuple[int, int], ...] | None = None


def _draw(rng: np.random.Generator, lo: int, hi: int) -> int:
    """Uniform integer in [lo, hi] inclusive."""
    return int(rng.integers(lo, hi, endpoint=True))


def plan_removal(source_sentence_count: int, task: FillTaskSpec,
                 rng: np.random.Generator) -> RemovalPlan:
    """Draw which sentences to remove from a k-sentence source.

    Removal counts are uniform over [1, k-1] per removal site, narrowed to
    the range the task structure can accommodate (every kept segment must
    retain at least one sentence). Draw order is fixed so a replayed seed
    reproduces the plan.
    """
    k = source_sentence_count
    t = task.task_id
    if t in (1, 2):
        if k < 2:
            raise SourceTooShort(f"task {t} needs at least 2 sentences, got {k}")
        r = _draw(rng, 1, k - 1)
        spans = ((1, k - r),) if t == 1 else ((r + 1, k),)
        return RemovalPlan(t, k, spans, r, (r,))
    if t == 3:
        if k < 3:
            raise SourceTooShort(f"task 3 needs at least 3 sentences, got {k}")
        r = _draw(rng, 1, k - 2)
        a = _draw(rng, 1, k - r - 1)
        return RemovalPlan(t, k, ((1, a), (a + r + 1, k)), r, (r,))
    if t == 4:
        if k < 3:
            raise SourceTooShort(f"task 4 needs at least 3 sentences, got {k}")
        r = _draw(rng, 2, k - 1)
        head = _draw(rng, 1, r - 1)
        tail = r - head
        return RemovalPlan(t, k, ((head + 1, k - tail),), r, (r,))
    if t in (5, 6):
        if k < 4:
            raise SourceTooShort(f"task {t} needs at least 4 sentences, got {k}")
        r1 = _draw(rng, 1, k - 3)
        if t == 5:
            a = _draw(rng, 1, k - r1 - 2)      # ending segment keeps >= 2
            b = k - a - r1
            r2 = _draw(rng, 1, b - 1)
            kept = ((1, a), (a + r1 + 1, k - r2))
        else:
            a = _draw(rng, 2, k - r1 - 1)      # beginning segment keeps >= 2
            r2 = _draw(rng, 1, a - 1)
            kept = ((r2 + 1, a), (a + r1 + 1, k))
        stage_one = ((1, a), (a + r1 + 1, k))
        return RemovalPlan(t, k, kept, r1 + r2, (r1, r2), stage_one)
    raise ValueError(f"unknown task id {t}")


# --- prompts ----------------------------------------------------------------

_DIRECTIVES = {
    1: 'Please begin with "{0}"',
    2: 'Please ensure to use "{0}" as the ending',
    3: 'Please begin with "{0}" and continue writing the second part. '
       'For the ending, please use "{1}" as the ending',
    4: 'Please ensure to include "{0}" in between the starting text '
       'and the ending text',
    # Second-step directives of the composed tasks; the placeholder is the
    # partially hybrid text produced by the first step.
    5: 'Please begin with "{0}"',
    6: 'Please use "{0}" as the ending',
}

_SEGMENTS_EXPECTED = {1: 1, 2: 1, 3: 2, 4: 1, 5: 1, 6: 1}


def build_prompt(task: FillTaskSpec, instructions: str,
                 segments: Sequence[str]) -> str:
    """Assemble the two-part prompt: writing instructions, then directive.

    ``segments`` holds the text snippets the directive embeds: beginning
    and/or ending for tasks 1-4, or the composed partial hybrid text for
    the second step of tasks 5/6.
    """
    expected = _SEGMENTS_EXPECTED[task.task_id]
    if len(segments) != expected:
        raise ValueError(
            f"task {task.task_id} directive takes {expected} segment(s), "
            f"got {len(segments)}"
        )
    directive = _DIRECTIVES[task.task_id].format(*segments)
    if instructions:
        return f"{instructions}\n\n{directive}"
    return directive


# --- generator interface ----------------------------------------------------

@dataclass(frozen=True)
class KeepBlock:
    """A run of fixed sentences the candidate must reproduce verbatim."""

    sentences: tuple[tuple[str, AuthorLabel], ...]

    @property
    def text(self) -> str:
        return " ".join(text for text, _ in self.sentences)


class FillSlot:
    """A gap the generator must fill with at least one new sentence."""

    def __repr__(self):  # pragma: no cover
        return "FillSlot()"


FILL = FillSlot()

Skeleton = tuple["KeepBlock | FillSlot", ...]


@dataclass(frozen=True)
class GenRequest:
    instructions: str
    directive: str
    skeleton: Skeleton
    max_tokens: int = 512


class SentenceGenerator(Protocol):
    """Contract for text generators. ``concurrent_safe`` declares whether
    simultaneous generate() calls are tolerated."""

    concurrent_safe: bool

    def generate(self, request: GenRequest) -> str: ...


# --- validation ---------------------------------------------------------------

def _normalize(text: str) -> str:
    return " ".join(text.split())


@dataclass(frozen=True)
class ValidationResult:
    valid: bool
    reason: str | None = None
    sentences: tuple[tuple[str, AuthorLabel], ...] | None = None


def _match_skeleton(candidate: str, skeleton: Skeleton) -> ValidationResult:
    """Check a candidate against keep blocks and fill slots.

    Keep blocks must appear in order at the structural positions
    (whitespace-normalized sentence match); every fill slot must receive at
    least one sentence; the whole document must be free of duplicate
    sentences (case-folded comparison).
    """
    try:
        cand_sentences = [s.text for s in segment_text(candidate)]
    except EmptyText:
        return ValidationResult(False, STRUCTURE_MISMATCH)
    normalized = [_normalize(text) for text in cand_sentences]

    folded = [text.casefold() for text in normalized]
    if len(set(folded)) != len(folded):
        return ValidationResult(False, DUPLICATE_SENTENCE)

    labels: list[AuthorLabel | None] = [None] * len(normalized)
    cursor = 0
    pending_fill = False
    for slot in skeleton:
        if isinstance(slot, FillSlot):
            pending_fill = True
            continue
        block = [_normalize(text) for text, _ in slot.sentences]
        width = len(block)
        if pending_fill:
            found = -1
            for j in range(cursor, len(normalized) - width + 1):
                if normalized[j:j + width] == block:
                    found = j
                    break
            if found < 0:
                return ValidationResult(False, STRUCTURE_MISMATCH)
            if found == cursor:
                return ValidationResult(False, EMPTY_FILL)
            for j in range(cursor, found):
                labels[j] = G
            cursor = found
            pending_fill = False
        else:
            if normalized[cursor:cursor + width] != block:
                return ValidationResult(False, STRUCTURE_MISMATCH)
        for offset, (_, label) in enumerate(slot.sentences):
            labels[cursor + offset] = label
        cursor += width
    if pending_fill:
        if cursor >= len(normalized):
            return ValidationResult(False, EMPTY_FILL)
        for j in range(cursor, len(normalized)):
            labels[j] = G
    elif cursor != len(normalized):
        return ValidationResult(False, STRUCTURE_MISMATCH)

    labeled = tuple(
        (text, label)
        for text, label in zip(cand_sentences, labels)
        if label is not None
    )
    assert len(labeled) == len(cand_sentences)
    return ValidationResult(True, None, labeled)


def _skeleton_for(structure: Sequence[AuthorLabel],
                  keep_blocks: Sequence[KeepBlock]) -> Skeleton:
    """Interleave keep blocks into the H slots of a task structure."""
    slots: list[KeepBlock | FillSlot] = []
    blocks = iter(keep_blocks)
    for label in structure:
        slots.append(next(blocks) if label is H else FILL)
    return tuple(slots)


def validate_generation(candidate: str, task: FillTaskSpec,
                        kept_segments: Sequence[str]) -> ValidationResult:
    """Validate a candidate document against a task structure.

    ``kept_segments`` are the human text spans, in order, that must appear
    verbatim (after whitespace normalization) in the positions the task
    structure requires. On success the returned sentences carry labels:
    kept spans H, everything else G.
    """
    blocks = [
        KeepBlock(tuple((s.text, H) for s in segment_text(segment)))
        for segment in kept_segments
    ]
    return _match_skeleton(candidate, _skeleton_for(task.structure, blocks))


# --- synthesis --------------------------------------------------------------

@dataclass(frozen=True)
class SynthesisResult:
    """Outcome of synthesizing one source essay: a document, or a skip."""

    document: HybridDocument | None
    attempts_used: int
    failure_reasons: tuple[str, ...] = ()

    @property
    def skipped(self) -> bool:
        return self.document is None


def _span_sentences(sentences: Sequence[Sentence],
                    span: tuple[int, int]) -> list[Sentence]:
    start, end = span
    return list(sentences[start - 1:end])


def _keep_block(sentences: Sequence[Sentence],
                label: AuthorLabel = H) -> KeepBlock:
    return KeepBlock(tuple((s.text, label) for s in sentences))


def _attempt_simple(source: SourceEssay, task: FillTaskSpec,
                    generator: SentenceGenerator, plan: RemovalPlan,
                    sentences: Sequence[Sentence]) -> ValidationResult:
    blocks = [_keep_block(_span_sentences(sentences, span))
              for span in plan.kept_spans]
    skeleton = _skeleton_for(task.structure, blocks)
    if task.task_id == 3:
        segments = [blocks[0].text, blocks[1].text]
    else:
        segments = [blocks[0].text]
    directive = build_prompt(task, source.instructions, segments)
    candidate = generator.generate(
        GenRequest(source.instructions, directive, skeleton)
    )
    return _match_skeleton(candidate, skeleton)


def _attempt_composed(source: SourceEssay, task: FillTaskSpec,
                      generator: SentenceGenerator, plan: RemovalPlan,
                      sentences: Sequence[Sentence]) -> ValidationResult:
    # Step one: a task-3 fill between the full kept beginning and ending.
    stage_blocks = [_keep_block(_span_sentences(sentences, span))
                    for span in plan.stage_one_spans]
    stage_skeleton = _skeleton_for(TASKS[3].structure, stage_blocks)
    stage_directive = build_prompt(
        TASKS[3], source.instructions,
        [stage_blocks[0].text, stage_blocks[1].text],
    )
    stage_candidate = generator.generate(
        GenRequest(source.instructions, stage_directive, stage_skeleton)
    )
    stage = _match_skeleton(stage_candidate, stage_skeleton)
    if not stage.valid:
        return stage

    # Step two: trim the relevant end of the intermediate hybrid text and
    # ask for a continuation (task 5) or a lead-in (task 6).
    r2 = plan.events[1]
    intermediate = list(stage.sentences)
    if task.task_id == 5:
        trimmed = intermediate[:len(intermediate) - r2]
        fixed = KeepBlock(tuple(trimmed))
        skeleton: Skeleton = (fixed, FILL)
    else:
        trimmed = intermediate[r2:]
        fixed = KeepBlock(tuple(trimmed))
        skeleton = (FILL, fixed)
    directive = build_prompt(task, source.instructions, [fixed.text])
    candidate = generator.generate(
        GenRequest(source.instructions, directive, skeleton)
    )
    return _match_skeleton(candidate, skeleton)


def synthesize_hybrid(source: SourceEssay, task: FillTaskSpec,
                      generator: SentenceGenerator, rng: np.random.Generator,
                      max_attempts: int = 5,
                      doc_id: str | None = None) -> SynthesisResult:
    """Plan, prompt, generate, and validate, retrying up to ``max_attempts``.

    Each attempt draws a fresh removal plan. A source that fails every
    attempt is skipped (``document is None``) with the per-attempt reason
    codes preserved.
    """
    sentences = segment_text(source.text)
    reasons: list[str] = []
    for attempt in range(1, max_attempts + 1):
        plan = plan_removal(len(sentences), task, rng)
        if task.task_id in (5, 6):
            result = _attempt_composed(source, task, generator, plan, sentences)
        else:
            result = _attempt_simple(source, task, generator, plan, sentences)
        if result.valid:
            doc = make_document(
                doc_id=doc_id or f"{source.essay_id}-t{task.task_id}",
                prompt_id=source.prompt_id,
                source_id=source.essay_id,
                texts_and_labels=list(result.sentences),
                task_id=task.task_id,
            )
            return SynthesisResult(doc, attempt, tuple(reasons))
        reasons.append(result.reason)
    return SynthesisResult(None, max_attempts, tuple(reasons))


# --- generators ---------------------------------------------------------------

# Filler vocabulary of invented words, disjoint from any English corpus.
_MOCK_VOCAB = (
    "blenvorn", "cradgill", "dromtal", "felquine", "gorsten", "hilvane",
    "jorbick", "klemrod", "lurvane", "morgriff", "nulbreth", "ostriel",
    "pravnick", "quelsorn", "rindovel", "sulmark", "tovrash", "ulgrent",
    "vexmoor", "wolprine", "yarvick", "zulcrane", "brintham", "cozzler",
    "drelfin", "morvex", "galpherd", "hundrell", "ilmarsk", "jexling",
    "kortavel", "lumbrith", "nivelock", "ovrangel", "pilquert", "rastovin",
)


class MockGenerator:
    """Deterministic stand-in for a generative language model.

    Emits filler sentences drawn from an invented vocabulary, honoring the
    requested skeleton. Output is a pure function of (seed, request), so
    calls are reproducible and safe to issue concurrently. Fault modes
    exercise the retry machinery: ``duplicate`` repeats a filler sentence,
    ``drop_ending`` omits the final segment.
    """

    concurrent_safe = True

    def __init__(self, seed: int = 0, mode: str = "ok"):
        if mode not in ("ok", "duplicate", "drop_ending"):
            raise ValueError(f"unknown mock mode {mode!r}")
        self.seed = seed
        self.mode = mode

    def _digest(self, *parts: str) -> bytes:
        h = hashlib.blake2b(key=self.seed.to_bytes(8, "little"), digest_size=16)
        for part in parts:
            h.update(part.encode("utf-8"))
            h.update(b"\x1f")
        return h.digest()

    def _fill_sentences(self, base: str, slot_index: int) -> list[str]:
        count = 2 + self._digest(base, str(slot_index), "count")[0] % 3
        sentences = []
        for sent_index in range(count):
            sent_bytes = self._digest(base, str(slot_index), str(sent_index))
            n_words = 5 + sent_bytes[0] % 4
            words = [
                _MOCK_VOCAB[sent_bytes[1 + w] % len(_MOCK_VOCAB)]
                for w in range(n_words)
            ]
            sentences.append(" ".join(words).capitalize() + ".")
        return sentences

    def generate(self, request: GenRequest) -> str:
        base = request.directive
        pieces: list[str] = []
        slots = list(request.skeleton)
        if self.mode == "drop_ending" and slots:
            slots = slots[:-1]
        fill_index = 0
        for slot in slots:
            if isinstance(slot, FillSlot):
                fills = self._fill_sentences(base, fill_index)
                if self.mode == "duplicate" and fill_index == 0:
                    fills = [fills[0], fills[0], *fills[1:]]
                pieces.extend(fills)
                fill_index += 1
            else:
                pieces.extend(text for text, _ in slot.sentences)
        return " ".join(pieces)


def mock_generator(seed: int = 0, mode: str = "ok") -> MockGenerator:
    return MockGenerator(seed=seed, mode=mode)


class ProcGenerator:
    """Adapter for an out-of-process generator speaking JSON over stdio.

    Request: {"instructions": str, "directive": str, "max_tokens": int}
    Response: {"text": str}
    """

    concurrent_safe = True

    def __init__(self, command: Sequence[str], timeout: float = 60.0):
        self.command = list(command)
        self.timeout = timeout

    def generate(self, request: GenRequest) -> str:
        payload = json.dumps({
            "instructions": request.instructions,
            "directive": request.directive,
            "max_tokens": request.max_tokens,
        })
        try:
            proc = subprocess.run(
                self.command, input=payload, capture_output=True,
                text=True, timeout=self.timeout,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise GeneratorUnavailable(str(exc)) from exc
        if proc.returncode != 0:
            raise GeneratorUnavailable(
                f"generator exited {proc.returncode}: {proc.stderr.strip()}"
            )
        try:
            return json.loads(proc.stdout)["text"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise GeneratorUnavailable(f"malformed generator response: {exc}") from exc


class HttpGenerator:
    """Adapter for a generator served over HTTP POST /generate."""

    concurrent_safe = True

    def __init__(self, base_url: str, timeout: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def generate(self, request: GenRequest) -> str:
        payload = json.dumps({
            "instructions": request.instructions,
            "directive": request.directive,
            "max_tokens": request.max_tokens,
        }).encode("utf-8")
        req = urllib.request.Request(
            f"{self.base_url}/generate", data=payload,
            headers={"Content-Type": "application/json"},
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
            raise GeneratorUnavailable(str(exc)) from exc
        if "text" not in body:
            raise GeneratorUnavailable("generator response missing 'text'")
        return body["text"]
