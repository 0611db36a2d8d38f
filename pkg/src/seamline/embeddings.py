"""Sentence embedding providers: deterministic local hashing, file cache,
and the HTTP client for the embedding bridge service.

Base encoders are frozen everywhere in this package; anything learned
happens in the metric module's projection head on top of these vectors.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import CacheMismatch, EmptySentence, ProtocolError, TransportError

DEFAULT_BRIDGE_URL = "http://127.0.0.1:8901"
BRIDGE_URL_ENV = "SEAMLINE_BRIDGE_URL"


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Per-sentence embedding rows for one document, in sentence order."""

    vectors: np.ndarray  # (n, dim) float64
    provider_id: str

    def __post_init__(self):
        if self.vectors.ndim != 2:
            raise ValueError("embedding matrix must be 2-dimensional")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding matrix contains non-finite entries")

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


class EmbeddingProvider(Protocol):
    """embed() maps sentence texts to an EmbeddingMatrix, rows in order."""

    @property
    def dim(self) -> int: ...

    @property
    def provider_id(self) -> str: ...

    def embed(self, sentences: Sequence[str]) -> EmbeddingMatrix: ...


def _check_sentences(sentences: Sequence[str]) -> None:
    for i, text in enumerate(sentences):
        if not text.strip():
            raise EmptySentence(f"sentence {i} is empty or whitespace-only")


class HashingProvider:
    """Deterministic character-trigram hashing embedder.

    Each sentence's character 3-grams are hashed (keyed blake2b, so results
    are identical across processes) into ``dim`` buckets with a +/-1 sign
    per gram, then the vector is scaled to unit Euclidean norm.
    """

    def __init__(self, dim: int = 256, seed: int = 0):
        if dim < 8:
            raise ValueError("hashing embedder needs dim >= 8")
        self._dim = dim
        self._seed = seed
        self._key = seed.to_bytes(8, "little", signed=True)

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def provider_id(self) -> str:
        return f"hash3-d{self._dim}-s{self._seed}"

    def _embed_one(self, text: str) -> np.ndarray:
        vec = np.zeros(self._dim)
        grams = (
            [text[i:i + 3] for i in range(len(text) - 2)]
            if len(text) >= 3 else [text]
        )
        for gram in grams:
            digest = hashlib.blake2b(
                gram.encode("utf-8"), key=self._key, digest_size=9
            ).digest()
            bucket = int.from_bytes(digest[:8], "little") % self._dim
            sign = 1.0 if digest[8] % 2 == 0 else -1.0
            vec[bucket] += sign
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            vec[0] = 1.0
            norm = 1.0
        return vec / norm

    def embed(self, sentences: Sequence[str]) -> EmbeddingMatrix:
        _check_sentences(sentences)
        rows = np.array([self._embed_one(t) for t in sentences])
        rows = rows.reshape(len(sentences), self._dim)
        return EmbeddingMatrix(rows, self.provider_id)


def hashing_embed(sentences: Sequence[str], dim: int = 256,
                  seed: int = 0) -> EmbeddingMatrix:
    return HashingProvider(dim=dim, seed=seed).embed(sentences)


# --- cache --------------------------------------------------------------------
#
# Append-only JSONL: a header line {"provider_id": str, "dim": int}, then one
# record per sentence {"key": sha256-hex, "vec": [floats]}.

def _content_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class EmbeddingCache:
    """Append-only store; reads need no coordination, appends are
    serialized per instance and written as whole lines."""

    def __init__(self, path: str | Path, provider_id: str, dim: int):
        self.path = Path(path)
        self.provider_id = provider_id
        self.dim = dim
        self._entries: dict[str, np.ndarray] = {}
        self._append_lock = threading.Lock()
        if self.path.exists():
            self._load()
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", encoding="utf-8", newline="\n") as handle:
                handle.write(json.dumps(
                    {"provider_id": provider_id, "dim": dim}
                ) + "\n")

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as handle:
            header_line = handle.readline()
            try:
                header = json.loads(header_line)
            except json.JSONDecodeError as exc:
                raise CacheMismatch(f"unreadable cache header: {exc}") from exc
            if (header.get("provider_id") != self.provider_id
                    or header.get("dim") != self.dim):
                raise CacheMismatch(
                    f"cache at {self.path} was built for "
                    f"{header.get('provider_id')!r} dim={header.get('dim')}, "
                    f"requested {self.provider_id!r} dim={self.dim}"
                )
            for line in handle:
                if not line.strip():
                    continue
                record = json.loads(line)
                self._entries[record["key"]] = np.array(record["vec"])

    def get(self, text: str) -> np.ndarray | None:
        return self._entries.get(_content_key(text))

    def put_many(self, pairs: Sequence[tuple[str, np.ndarray]]) -> None:
        with self._append_lock:
            lines = []
            for text, vec in pairs:
                key = _content_key(text)
                if key in self._entries:
                    continue
                self._entries[key] = vec
                lines.append(json.dumps(
                    {"key": key, "vec": [float(x) for x in vec]}
                ) + "\n")
            if lines:
                with open(self.path, "a", encoding="utf-8", newline="\n") as handle:
                    handle.write("".join(lines))


class CachedProvider:
    """Wrap a provider with a content-addressed file cache."""

    def __init__(self, inner: EmbeddingProvider, cache_path: str | Path):
        self.inner = inner
        self.cache = EmbeddingCache(cache_path, inner.provider_id, inner.dim)

    @property
    def dim(self) -> int:
        return self.inner.dim

    @property
    def provider_id(self) -> str:
        return self.inner.provider_id

    def embed(self, sentences: Sequence[str]) -> EmbeddingMatrix:
        _check_sentences(sentences)
        rows: list[np.ndarray | None] = [self.cache.get(t) for t in sentences]
        missing: list[int] = [i for i, row in enumerate(rows) if row is None]
        if missing:
            # Deduplicate misses so each unique text hits the provider once.
            unique_texts: list[str] = []
            seen: dict[str, int] = {}
            for i in missing:
                text = sentences[i]
                if text not in seen:
                    seen[text] = len(unique_texts)
                    unique_texts.append(text)
            computed = self.inner.embed(unique_texts)
            self.cache.put_many(
                list(zip(unique_texts, computed.vectors))
            )
            for i in missing:
                rows[i] = computed.vectors[seen[sentences[i]]]
        matrix = np.array([row for row in rows]).reshape(len(sentences), self.dim)
        return EmbeddingMatrix(matrix, self.provider_id)


def cached_embed(provider: EmbeddingProvider, sentences: Sequence[str],
                 cache_path: str | Path) -> EmbeddingMatrix:
    return CachedProvider(provider, cache_path).embed(sentences)


# --- remote bridge client -------------------------------------------------------

class RemoteProvider:
    """Client for the embedding bridge service (POST /embed, GET /health).

    Sends batches of at most 64 sentences, reassembles rows in input order,
    and retries transport failures up to three times with backoff.
    """

    MAX_BATCH = 64

    def __init__(self, base_url: str | None = None, timeout: float = 30.0,
                 retries: int = 3, backoff: float = 0.5):
        self.base_url = (
            base_url or os.environ.get(BRIDGE_URL_ENV, DEFAULT_BRIDGE_URL)
        ).rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._dim: int | None = None
        self._model_id: str | None = None

    def _request(self, path: str, payload: dict | None = None) -> dict:
        data = json.dumps(payload).encode("utf-8") if payload is not None else None
        req = urllib.request.Request(
            f"{self.base_url}{path}", data=data,
            headers={"Content-Type": "application/json"} if data else {},
        )
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return json.loads(resp.read().decode("utf-8"))
            except urllib.error.HTTPError as exc:
                if exc.code < 500:
                    # Client-side rejection; retrying the same payload is futile.
                    raise ProtocolError(
                        f"bridge rejected request: HTTP {exc.code}"
                    ) from exc
                last_error = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * (2 ** attempt))
            except (urllib.error.URLError, OSError, TimeoutError) as exc:
                last_error = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * (2 ** attempt))
            except json.JSONDecodeError as exc:
                raise ProtocolError(f"bridge returned invalid JSON: {exc}") from exc
        raise TransportError(
            f"bridge unreachable after {self.retries} attempts: {last_error}"
        )

    def _ensure_info(self) -> None:
        if self._dim is None:
            health = self._request("/health")
            if "dim" not in health or "model_id" not in health:
                raise ProtocolError(f"malformed health response: {health}")
            self._dim = int(health["dim"])
            self._model_id = str(health["model_id"])

    @property
    def dim(self) -> int:
        self._ensure_info()
        return self._dim

    @property
    def provider_id(self) -> str:
        self._ensure_info()
        return f"remote:{self._model_id}"

    def embed(self, sentences: Sequence[str]) -> EmbeddingMatrix:
        _check_sentences(sentences)
        self._ensure_info()
        rows: list[list[float]] = []
        for start in range(0, len(sentences), self.MAX_BATCH):
            batch = list(sentences[start:start + self.MAX_BATCH])
            body = self._request("/embed", {"sentences": batch})
            vectors = body.get("vectors")
            if not isinstance(vectors, list) or len(vectors) != len(batch):
                raise ProtocolError(
                    f"bridge returned {len(vectors) if isinstance(vectors, list) else 'no'}"
                    f" vectors for {len(batch)} sentences"
                )
            if body.get("dim") != self._dim:
                raise ProtocolError(
                    f"bridge dim changed from {self._dim} to {body.get('dim')}"
                )
            for vec in vectors:
                if len(vec) != self._dim:
                    raise ProtocolError("vector length differs from advertised dim")
                rows.append(vec)
        matrix = np.array(rows, dtype=float).reshape(len(sentences), self._dim)
        if not np.all(np.isfinite(matrix)):
            raise ProtocolError("bridge returned non-finite vector entries")
        return EmbeddingMatrix(matrix, self.provider_id)


def remote_embed(endpoint: str, sentences: Sequence[str]) -> EmbeddingMatrix:
    return RemoteProvider(base_url=endpoint).embed(sentences)
