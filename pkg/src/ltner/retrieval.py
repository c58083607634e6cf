"""Sentence embedding and exact nearest-neighbor retrieval.

The index is a flat store of (vector, text, annotation) records; queries run
an exact cosine scan over every record, which is plenty for corpus-scale
pools (tens of thousands of sentences) and makes oracle testing trivial.
Ranking ties break by insertion order.

Two embedders ship: a deterministic hashed bag-of-words embedder that needs
no network (the default for offline runs and all tests), and a thin client
for any OpenAI-compatible ``/embeddings`` endpoint.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .corpus import EntitySpan, LabeledExample, make_example

INDEX_FORMAT = "ltner-index"
INDEX_VERSION = 1


class IndexLoadError(ValueError):
    """An index file is missing, corrupt, or from an incompatible writer."""


class Embedder(Protocol):
    name: str
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


class HashedBagEmbedder:
    """Deterministic 256-dim bag-of-words embedding.

    Lowercase whitespace tokens are FNV-1a-64 hashed into 256 buckets; the
    bucket-count vector is L2-normalized. Word order is ignored by
    construction, so permutations of a sentence embed identically.
    """

    name = "hashed"
    dim = 256

    def embed(self, text: str) -> np.ndarray:
        words = text.lower().split()
        if not words:
            raise ValueError("cannot embed empty text")
        vec = np.zeros(self.dim, dtype=np.float64)
        for word in words:
            vec[fnv1a64(word.encode("utf-8")) % self.dim] += 1.0
        return vec / np.linalg.norm(vec)


class RemoteEmbedder:
    """Client for an OpenAI-compatible ``/embeddings`` endpoint."""

    def __init__(self, model: str, base_url: str, api_key: str | None = None,
                 timeout: float = 60.0, max_attempts: int = 3):
        self.name = f"remote:{model}"
        self.dim = -1  # fixed by the first response
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self.max_attempts = max_attempts

    def embed(self, text: str) -> np.ndarray:
        import requests

        if not text.strip():
            raise ValueError("cannot embed empty text")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_exc: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                resp = requests.post(
                    f"{self.base_url}/embeddings",
                    json={"model": self.model, "input": [text]},
                    headers=headers, timeout=self.timeout)
                resp.raise_for_status()
                values = resp.json()["data"][0]["embedding"]
                vec = np.asarray(values, dtype=np.float64)
                if self.dim < 0:
                    self.dim = vec.shape[0]
                return vec
            except Exception as exc:  # transport failures are retryable
                last_exc = exc
                time.sleep(min(2.0 ** attempt, 30.0))
        raise RuntimeError(f"embedding request failed after {self.max_attempts} attempts") from last_exc


@dataclass(frozen=True)
class Neighbor:
    example_id: str
    similarity: float
    rank: int


class VectorIndex:
    """Flat (vector, text, annotation) store with exact cosine search.

    Writes are lock-protected during the build phase; once built the index is
    treated as immutable and concurrent reads are safe.
    """

    def __init__(self, dim: int, embedder_name: str = "hashed"):
        self.dim = dim
        self.embedder_name = embedder_name
        self._ids: list[str] = []
        self._examples: dict[str, LabeledExample] = {}
        self._vectors: list[np.ndarray] = []
        self._matrix: np.ndarray | None = None
        self._norms: np.ndarray | None = None
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._ids)

    def add(self, example: LabeledExample, vector: np.ndarray) -> None:
        vec = np.asarray(vector, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise ValueError(f"vector has shape {vec.shape}, index dim is {self.dim}")
        if not np.linalg.norm(vec) > 0.0:
            raise ValueError(f"zero vector rejected for {example.id!r}")
        with self._lock:
            if example.id in self._examples:
                raise ValueError(f"duplicate example id {example.id!r}")
            self._ids.append(example.id)
            self._examples[example.id] = example
            self._vectors.append(vec)
            self._matrix = None
            self._norms = None

    def example(self, example_id: str) -> LabeledExample:
        return self._examples[example_id]

    def ids(self) -> list[str]:
        return list(self._ids)

    def _ensure_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        with self._lock:
            if self._matrix is None:
                self._matrix = np.vstack(self._vectors) if self._vectors else np.zeros((0, self.dim))
                self._norms = np.linalg.norm(self._matrix, axis=1)
            return self._matrix, self._norms

    def knn(self, query: np.ndarray, k: int) -> list[Neighbor]:
        """Exact top-k by cosine similarity; ties break by insertion order."""
        if k < 0:
            raise ValueError("k must be >= 0")
        if k == 0:
            return []
        if not self._ids:
            raise ValueError("knn on an empty index")
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError(f"query has shape {q.shape}, index dim is {self.dim}")
        qnorm = np.linalg.norm(q)
        if not qnorm > 0.0:
            raise ValueError("zero query vector")
        matrix, norms = self._ensure_matrix()
        sims = (matrix @ q) / (norms * qnorm)
        order = np.argsort(-sims, kind="stable")[:k]
        return [Neighbor(example_id=self._ids[i], similarity=float(sims[i]), rank=r + 1)
                for r, i in enumerate(order)]

    def save(self, path: str | Path) -> None:
        header = {"format": INDEX_FORMAT, "version": INDEX_VERSION,
                  "dim": self.dim, "embedder": self.embedder_name}
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write(json.dumps(header) + "\n")
            for ex_id, vec in zip(self._ids, self._vectors):
                ex = self._examples[ex_id]
                rec = {
                    "id": ex_id,
                    "vector": vec.tolist(),
                    "sentence": ex.sentence,
                    "spans": [{"start": s.start, "end": s.end, "label": s.label} for s in ex.spans],
                }
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        path = Path(path)
        try:
            fh = path.open("r", encoding="utf-8")
        except OSError as exc:
            raise IndexLoadError(f"cannot open index {path}: {exc}") from exc
        with fh:
            header_line = fh.readline()
            header = _parse_index_line(header_line, path, 1)
            for field in ("format", "version", "dim", "embedder"):
                if field not in header:
                    raise IndexLoadError(f"index header missing field {field!r}")
            if header["format"] != INDEX_FORMAT:
                raise IndexLoadError(f"bad index field 'format': {header['format']!r}")
            if header["version"] != INDEX_VERSION:
                raise IndexLoadError(f"unsupported index field 'version': {header['version']!r}")
            index = cls(dim=int(header["dim"]), embedder_name=str(header["embedder"]))
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                rec = _parse_index_line(line, path, lineno)
                try:
                    spans = [EntitySpan(s["start"], s["end"], s["label"]) for s in rec["spans"]]
                    example = make_example(id=rec["id"], words=rec["sentence"].split(" "),
                                           spans=sorted(spans), split="train")
                    index.add(example, np.asarray(rec["vector"], dtype=np.float64))
                except (KeyError, TypeError, ValueError) as exc:
                    raise IndexLoadError(f"{path}:{lineno}: bad index record: {exc}") from exc
        return index


def _parse_index_line(line: str, path: Path, lineno: int) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise IndexLoadError(f"{path}:{lineno}: truncated or corrupt index line: {exc}") from exc
    if not isinstance(obj, dict):
        raise IndexLoadError(f"{path}:{lineno}: expected a JSON object")
    return obj


def build_index(examples: Sequence[LabeledExample], embedder: Embedder,
                concurrency: int = 1) -> VectorIndex:
    """Embed every example sentence and assemble the index."""
    texts = [ex.sentence for ex in examples]
    if concurrency > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            vectors = list(pool.map(embedder.embed, texts))
    else:
        vectors = [embedder.embed(t) for t in texts]
    dim = vectors[0].shape[0] if vectors else (embedder.dim if embedder.dim > 0 else 0)
    index = VectorIndex(dim=dim, embedder_name=embedder.name)
    for ex, vec in zip(examples, vectors):
        index.add(ex, vec)
    return index


def make_embedder(kind: str, *, model: str = "", base_url: str = "",
                  api_key: str | None = None) -> Embedder:
    if kind == "hashed":
        return HashedBagEmbedder()
    if kind == "remote":
        if not model or not base_url:
            raise ValueError("remote embedder needs a model name and base_url")
        return RemoteEmbedder(model=model, base_url=base_url, api_key=api_key)
    raise ValueError(f"unknown embedder kind {kind!r}")
