"""Corpus ingestion, 100-word chunking, an in-memory inverted index, BM25
first-stage retrieval, and pluggable reranking.

The index is immutable after build; concurrent retrieve/rerank calls need no
synchronization.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from .core import Question, Statement

__all__ = [
    "tokenize",
    "DocumentChunk",
    "chunk_document",
    "load_corpus_jsonl",
    "InvertedIndex",
    "build_index",
    "bm25_score",
    "retrieve",
    "RerankError",
    "rerank",
    "LexicalOverlapReranker",
    "hypothesis_query",
    "save_index",
    "load_index",
    "IndexFormatError",
]

_TOKEN = re.compile(r"[a-z0-9]+")

INDEX_MAGIC = "treewise-index"
INDEX_FORMAT_VERSION = 1

DEFAULT_K1 = 0.9
DEFAULT_B = 0.4


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs.  No stemming, no
    stopword removal."""
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class DocumentChunk:
    chunk_id: str
    doc_id: str
    title: str
    text: str
    length_terms: int = field(default=-1)

    def __post_init__(self) -> None:
        if self.length_terms < 0:
            object.__setattr__(self, "length_terms", len(tokenize(self.text)))


def chunk_document(doc_id: str, title: str, text: str, max_words: int = 100) -> list[DocumentChunk]:
    """Split a document into consecutive chunks of at most ``max_words``
    whitespace-separated words, preserving word order.  Chunk ids are
    ``doc_id#index``."""
    if max_words <= 0:
        raise ValueError("max_words must be positive")
    words = text.split()
    if not words:
        raise ValueError(f"document {doc_id!r} has no words")
    chunks = []
    for index, start in enumerate(range(0, len(words), max_words)):
        chunk_text = " ".join(words[start : start + max_words])
        chunks.append(DocumentChunk(f"{doc_id}#{index}", doc_id, title, chunk_text))
    return chunks


def load_corpus_jsonl(path: str | Path, max_words: int = 100) -> list[DocumentChunk]:
    """Read a corpus of ``{"id", "title", "contents"}`` documents, one per
    line, and chunk each."""
    chunks: list[DocumentChunk] = []
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                doc = json.loads(raw)
                chunks.extend(chunk_document(doc["id"], doc.get("title", ""), doc["contents"], max_words))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"corpus line {line_no}: {exc}") from exc
    return chunks


@dataclass(frozen=True)
class InvertedIndex:
    postings: Mapping[str, tuple[tuple[str, int], ...]]
    doc_lengths: Mapping[str, int]
    avgdl: float
    n_chunks: int
    doc_freq: Mapping[str, int]
    chunks: Mapping[str, DocumentChunk]

    def chunk(self, chunk_id: str) -> DocumentChunk:
        try:
            return self.chunks[chunk_id]
        except KeyError:
            raise ValueError(f"unknown chunk {chunk_id!r}") from None


def build_index(chunks: Sequence[DocumentChunk]) -> InvertedIndex:
    """Deterministic for a given chunk order.  Duplicate chunk ids and empty
    inputs are rejected."""
    if not chunks:
        raise ValueError("cannot build an index from an empty chunk list")
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    store: dict[str, DocumentChunk] = {}
    for chunk in chunks:
        if chunk.chunk_id in store:
            raise ValueError(f"duplicate chunk id {chunk.chunk_id!r}")
        store[chunk.chunk_id] = chunk
        terms = tokenize(chunk.text)
        doc_lengths[chunk.chunk_id] = len(terms)
        counts: dict[str, int] = {}
        for term in terms:
            counts[term] = counts.get(term, 0) + 1
        for term, tf in counts.items():
            postings.setdefault(term, []).append((chunk.chunk_id, tf))
    return InvertedIndex(
        postings={t: tuple(p) for t, p in postings.items()},
        doc_lengths=doc_lengths,
        avgdl=sum(doc_lengths.values()) / len(doc_lengths),
        n_chunks=len(store),
        doc_freq={t: len(p) for t, p in postings.items()},
        chunks=store,
    )


def _idf(index: InvertedIndex, term: str) -> float:
    # ln(1 + x) form keeps idf non-negative for any df in [0, N].
    df = index.doc_freq.get(term, 0)
    return math.log(1.0 + (index.n_chunks - df + 0.5) / (df + 0.5))


def _tf_component(tf: int, length: int, avgdl: float, k1: float, b: float) -> float:
    return tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * length / avgdl))


def bm25_score(
    index: InvertedIndex,
    query_terms: Sequence[str],
    chunk_id: str,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> float:
    """Okapi BM25 score of one chunk for the given query terms (with
    multiplicity).  Terms absent from the chunk contribute zero."""
    if chunk_id not in index.doc_lengths:
        raise ValueError(f"unknown chunk {chunk_id!r}")
    length = index.doc_lengths[chunk_id]
    score = 0.0
    for term in query_terms:
        tf = 0
        for posting_chunk, posting_tf in index.postings.get(term, ()):
            if posting_chunk == chunk_id:
                tf = posting_tf
                break
        if tf == 0:
            continue
        score += _idf(index, term) * _tf_component(tf, length, index.avgdl, k1, b)
    return score


def retrieve(
    index: InvertedIndex,
    query_text: str,
    k: int = 1000,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> list[tuple[str, float]]:
    """Top-k chunks by BM25 score, descending; ties broken by chunk id
    ascending.  Only chunks with positive score are returned."""
    terms = tokenize(query_text)
    scores: dict[str, float] = {}
    for term in terms:
        idf = _idf(index, term)
        for chunk_id, tf in index.postings.get(term, ()):
            scores[chunk_id] = scores.get(chunk_id, 0.0) + idf * _tf_component(
                tf, index.doc_lengths[chunk_id], index.avgdl, k1, b
            )
    ranked = sorted(
        ((cid, s) for cid, s in scores.items() if s > 0.0),
        key=lambda pair: (-pair[1], pair[0]),
    )
    return ranked[: max(k, 0)]


class RerankError(Exception):
    """Reranker failure, wrapped with the candidate being scored."""


Reranker = Callable[[str, str], float]


def rerank(
    query_text: str,
    candidates: Sequence[DocumentChunk],
    reranker: Reranker,
    keep: int = 30,
) -> list[tuple[DocumentChunk, float]]:
    """Reorder candidates by reranker score descending (ties by chunk id
    ascending) and truncate to ``keep``."""
    scored: list[tuple[DocumentChunk, float]] = []
    for chunk in candidates:
        try:
            score = float(reranker(query_text, chunk.text))
        except Exception as exc:
            raise RerankError(f"reranker failed on chunk {chunk.chunk_id!r}: {exc}") from exc
        scored.append((chunk, score))
    scored.sort(key=lambda pair: (-pair[1], pair[0].chunk_id))
    return scored[: max(keep, 0)]


class LexicalOverlapReranker:
    """Deterministic offline reranker: |Q∩D| / sqrt(|Q|·|D|) over term sets."""

    def __call__(self, query: str, text: str) -> float:
        q = set(tokenize(query))
        d = set(tokenize(text))
        if not q or not d:
            return 0.0
        return len(q & d) / math.sqrt(len(q) * len(d))


def hypothesis_query(question: Question | str, hypothesis: Statement | str) -> str:
    """The retrieval query: question text followed by the hypothesis text."""
    q_text = question.text if isinstance(question, Question) else question
    h_text = hypothesis.text if isinstance(hypothesis, Statement) else hypothesis
    return f"{q_text} {h_text}".strip()


# --- persistence -------------------------------------------------------------


class IndexFormatError(Exception):
    pass


def save_index(index: InvertedIndex, path: str | Path) -> None:
    payload = {
        "magic": INDEX_MAGIC,
        "format_version": INDEX_FORMAT_VERSION,
        "chunks": [
            {
                "chunk_id": c.chunk_id,
                "doc_id": c.doc_id,
                "title": c.title,
                "text": c.text,
            }
            for c in index.chunks.values()
        ],
    }
    Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")


def load_index(path: str | Path) -> InvertedIndex:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IndexFormatError(f"not an index file: {exc.msg}") from exc
    if not isinstance(payload, dict) or payload.get("magic") != INDEX_MAGIC:
        raise IndexFormatError("missing index magic header")
    version = payload.get("format_version")
    if version != INDEX_FORMAT_VERSION:
        raise IndexFormatError(f"unsupported index format version {version!r}")
    chunks = [
        DocumentChunk(c["chunk_id"], c["doc_id"], c.get("title", ""), c["text"])
        for c in payload["chunks"]
    ]
    return build_index(chunks)
