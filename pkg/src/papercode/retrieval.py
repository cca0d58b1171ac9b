"""Task-aware embeddings and an exact cosine-similarity index over paper chunks."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

from .ingest import Chunk, Document, chunk_paragraphs

logger = logging.getLogger(__name__)

DOCUMENT_INSTRUCTION = "Represent the passage for retrieval of implementation details"
QUERY_INSTRUCTION = "Represent this question for searching relevant passages"

Vector = tuple[float, ...]


class RetrievalError(Exception):
    pass


class DimensionMismatch(RetrievalError):
    pass


class ZeroVector(RetrievalError):
    pass


class EmbeddingProvider(Protocol):
    dimension: int

    def embed(self, texts: Sequence[str], task_instruction: str) -> list[Sequence[float]]: ...


class HashEmbeddingProvider:
    """Deterministic offline embedder based on signed feature hashing.

    Words of the text are hashed into ``dimension`` buckets. The task
    instruction contributes its own words at ``instruction_weight`` so that
    query-side and document-side vectors differ, as with instruction-tuned
    encoders, while staying in one shared space.
    """

    def __init__(self, dimension: int = 256, seed: int = 0, instruction_weight: float = 0.1):
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.seed = seed
        self.instruction_weight = instruction_weight

    def _bucket(self, token: str) -> tuple[int, float]:
        digest = hashlib.blake2b(f"{self.seed}:{token}".encode("utf-8"), digest_size=8).digest()
        value = int.from_bytes(digest, "little")
        return value % self.dimension, (1.0 if (value >> 63) & 1 else -1.0)

    def _accumulate(self, vec: list[float], text: str, weight: float) -> None:
        tokens = re.findall(r"\w+", text.lower())
        if not tokens and text.strip():
            tokens = [text.strip()]
        for token in tokens:
            index, sign = self._bucket(token)
            vec[index] += sign * weight

    def embed(self, texts: Sequence[str], task_instruction: str) -> list[list[float]]:
        out = []
        for text in texts:
            vec = [0.0] * self.dimension
            self._accumulate(vec, text, 1.0)
            self._accumulate(vec, task_instruction, self.instruction_weight)
            out.append(vec)
        return out


class SentenceTransformerProvider:
    """Instruction-tuned bi-encoder through ``sentence-transformers``.

    The instruction is prepended to each text as ``"<instruction>: <text>"``,
    the convention used by instruction-tuned retrieval models.
    """

    def __init__(self, model_name: str, dimension: Optional[int] = None, device: Optional[str] = None):
        from sentence_transformers import SentenceTransformer

        self.model_name = model_name
        self._model = SentenceTransformer(model_name, device=device)
        native = self._model.get_sentence_embedding_dimension()
        self.dimension = dimension or native
        self._truncate = dimension if dimension and native and dimension < native else None

    def embed(self, texts: Sequence[str], task_instruction: str) -> list[list[float]]:
        prefixed = [f"{task_instruction}: {t}" if task_instruction else t for t in texts]
        vectors = self._model.encode(prefixed, convert_to_numpy=True, show_progress_bar=False)
        if self._truncate:
            vectors = vectors[:, : self._truncate]
        return [list(map(float, v)) for v in vectors]


def embed_texts(texts: Sequence[str], task_instruction: str, provider: EmbeddingProvider) -> list[Vector]:
    if not texts:
        raise ValueError("embed_texts needs at least one text")
    vectors = provider.embed(list(texts), task_instruction)
    if len(vectors) != len(texts):
        raise DimensionMismatch(f"provider returned {len(vectors)} vectors for {len(texts)} texts")
    out = []
    for vec in vectors:
        if len(vec) != provider.dimension:
            raise DimensionMismatch(
                f"provider declared dimension {provider.dimension} but returned {len(vec)}"
            )
        out.append(tuple(float(x) for x in vec))
    return out


@dataclass(frozen=True)
class IndexEntry:
    entry_id: int
    doc_id: str
    chunk_ref: int
    text: str
    vector: Vector


def _norm(vec: Sequence[float]) -> float:
    return math.sqrt(math.fsum(x * x for x in vec))


class RetrievalIndex:
    """Append-only store of embedded chunks with exact top-k cosine search.

    Exhaustive scoring, so results are exact; per-paper databases hold at
    most a few thousand chunks. Call :meth:`freeze` before sharing across
    threads.
    """

    def __init__(self, dimension: int):
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.entries: list[IndexEntry] = []
        self._units: list[Vector] = []
        self._frozen = False
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> "RetrievalIndex":
        self._frozen = True
        return self

    def add(self, doc_id: str, chunk_ref: int, text: str, vector: Sequence[float]) -> IndexEntry:
        vector = tuple(float(x) for x in vector)
        if len(vector) != self.dimension:
            raise DimensionMismatch(f"index dimension is {self.dimension}, vector has {len(vector)}")
        norm = _norm(vector)
        if norm == 0.0 or not math.isfinite(norm):
            raise ZeroVector(f"vector for {doc_id}#{chunk_ref} has zero or non-finite norm")
        with self._lock:
            if self._frozen:
                raise RetrievalError("index is frozen")
            entry = IndexEntry(len(self.entries), doc_id, chunk_ref, text, vector)
            self.entries.append(entry)
            self._units.append(tuple(x / norm for x in vector))
        return entry

    def doc_ids(self) -> list[str]:
        return list(dict.fromkeys(e.doc_id for e in self.entries))

    def search(self, query_vector: Sequence[float], k: int) -> list[tuple[int, float]]:
        return search_top_k(self, query_vector, k)

    def to_text(self) -> str:
        """One tab-separated line per entry: id, doc, chunk, vector, JSON text."""
        lines = []
        for e in self.entries:
            vec = ",".join(repr(x) for x in e.vector)
            lines.append(f"{e.entry_id}\t{e.doc_id}\t{e.chunk_ref}\t{vec}\t{json.dumps(e.text, ensure_ascii=False)}")
        return "".join(line + "\n" for line in lines)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str, dimension: Optional[int] = None) -> "RetrievalIndex":
        rows = [line for line in text.split("\n") if line]
        if dimension is None:
            if not rows:
                raise RetrievalError("cannot infer dimension of an empty index file")
            dimension = len(rows[0].split("\t")[3].split(","))
        index = cls(dimension)
        for lineno, line in enumerate(rows, 1):
            parts = line.split("\t")
            if len(parts) != 5:
                raise RetrievalError(f"index line {lineno}: expected 5 fields, got {len(parts)}")
            entry_id, doc_id, chunk_ref, vec, body = parts
            entry = index.add(doc_id, int(chunk_ref), json.loads(body), [float(x) for x in vec.split(",")])
            if entry.entry_id != int(entry_id):
                raise RetrievalError(f"index line {lineno}: entry ids must be dense from 0")
        return index.freeze()

    @classmethod
    def load(cls, path: str | Path, dimension: Optional[int] = None) -> "RetrievalIndex":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), dimension)


def search_top_k(index: RetrievalIndex, query_vector: Sequence[float], k: int) -> list[tuple[int, float]]:
    """Exact cosine top-k: similarity descending, ties by ascending entry id."""
    if k <= 0:
        raise ValueError("k must be positive")
    if len(query_vector) != index.dimension:
        raise DimensionMismatch(f"index dimension is {index.dimension}, query has {len(query_vector)}")
    if not index.entries:
        return []
    qnorm = _norm(query_vector)
    if qnorm == 0.0:
        raise ZeroVector("query vector has zero norm")
    q = [x / qnorm for x in query_vector]
    # fsum is correctly rounded, so equal vectors always tie exactly
    scored = [(math.fsum(a * b for a, b in zip(u, q)), i) for i, u in enumerate(index._units)]
    scored.sort(key=lambda s: (-s[0], s[1]))
    return [(i, sim) for sim, i in scored[:k]]


Chunker = Callable[[Document], list[Chunk]]


def build_dynamic_database(
    paper: Optional[Document],
    references: Sequence[Document],
    provider: EmbeddingProvider,
    *,
    chunker: Chunker = chunk_paragraphs,
    instruction: str = DOCUMENT_INSTRUCTION,
) -> RetrievalIndex:
    """Index the paper's chunks, then each reference's, references sorted by id.

    Pass ``paper=None`` to build a references-only database.
    """
    index = RetrievalIndex(provider.dimension)
    docs = ([paper] if paper is not None else []) + sorted(references, key=lambda d: d.id)
    for doc in docs:
        chunks = chunker(doc)
        if not chunks:
            logger.warning("document %s has no text to index", doc.id)
            continue
        vectors = embed_texts([c.text for c in chunks], instruction, provider)
        for chunk, vec in zip(chunks, vectors):
            index.add(doc.id, chunk.chunk_id, chunk.text, vec)
    if not index.entries:
        logger.warning("dynamic database is empty")
    return index.freeze()
