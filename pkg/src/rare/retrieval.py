"""Lexical passage retrieval over an in-memory corpus.

Scoring is Okapi BM25 over an inverted index. Tokenization is lowercased
alphanumeric word splitting with no stemming or stopword removal, which keeps
the scorer easy to cross-check against a brute-force implementation.

For a document D with term frequency tf, length dl, and a corpus of N
documents with average length avgdl:

    idf(t)      = ln(1 + (N - df(t) + 0.5) / (df(t) + 0.5))
    score(D, Q) = sum over query tokens t of
                  idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))

Repeated query tokens contribute once per repetition. Only documents sharing
at least one token with the query are candidates; results order by
(score desc, doc_id asc).
"""

from __future__ import annotations

import hashlib
import json
import math
import pickle
import re
from dataclasses import dataclass, field
from typing import Iterable

from .errors import CorpusError, ValidationError
from .types import DocumentRef

# Search hits are document references; the names differ by role only.
ScoredHit = DocumentRef

SOURCES = ("wikipedia", "pubmed", "textbook", "statpearls", "other")

SNIPPET_CHARS = 600

_TOKEN_RE = re.compile(r"[a-z0-9]+")

_PICKLE_FORMAT = 1


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def make_snippet(body: str, limit: int = SNIPPET_CHARS) -> str:
    """First ``limit`` characters of the body, cut back to a word boundary."""
    if len(body) <= limit:
        return body
    cut = body[:limit]
    if body[limit].isspace():
        return cut.rstrip()
    if " " in cut:
        cut = cut[: cut.rfind(" ")]
    return cut.rstrip()


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    body: str
    source: str = "other"

    def __post_init__(self) -> None:
        if not self.body:
            raise ValidationError(f"document {self.doc_id!r}: empty body")
        if self.source not in SOURCES:
            raise ValidationError(f"document {self.doc_id!r}: bad source {self.source!r}")


@dataclass
class RetrievalIndex:
    """Inverted index over a fixed corpus. Immutable once built."""

    documents: tuple[Document, ...]
    postings: dict[str, list[tuple[int, int]]]  # term -> [(doc position, tf)]
    doc_lengths: list[int]
    doc_count: int
    avg_doc_length: float
    k1: float
    b: float
    corpus_hash: str
    _by_id: dict[str, Document] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self._by_id:
            self._by_id = {doc.doc_id: doc for doc in self.documents}

    def document(self, doc_id: str) -> Document:
        return self._by_id[doc_id]

    def vocabulary_size(self) -> int:
        return len(self.postings)


def corpus_hash(corpus: Iterable[Document]) -> str:
    h = hashlib.sha256()
    for doc in corpus:
        for part in (doc.doc_id, doc.title, doc.body, doc.source):
            h.update(part.encode("utf-8"))
            h.update(b"\x00")
    return h.hexdigest()


def build_index(corpus: Iterable[Document], k1: float = 1.2, b: float = 0.75) -> RetrievalIndex:
    """Index a corpus. Raises on duplicate doc ids, an empty corpus, or
    out-of-range BM25 parameters."""
    if k1 <= 0:
        raise ValidationError("k1 must be > 0")
    if not 0 <= b <= 1:
        raise ValidationError("b must be in [0, 1]")
    documents = tuple(corpus)
    if not documents:
        raise CorpusError("empty corpus")
    seen: set[str] = set()
    for doc in documents:
        if doc.doc_id in seen:
            raise CorpusError(f"duplicate doc_id: {doc.doc_id!r}")
        seen.add(doc.doc_id)

    postings: dict[str, list[tuple[int, int]]] = {}
    doc_lengths: list[int] = []
    for position, doc in enumerate(documents):
        tokens = tokenize(doc.body)
        doc_lengths.append(len(tokens))
        counts: dict[str, int] = {}
        for token in tokens:
            counts[token] = counts.get(token, 0) + 1
        for term, tf in counts.items():
            postings.setdefault(term, []).append((position, tf))

    return RetrievalIndex(
        documents=documents,
        postings=postings,
        doc_lengths=doc_lengths,
        doc_count=len(documents),
        avg_doc_length=sum(doc_lengths) / len(documents),
        k1=k1,
        b=b,
        corpus_hash=corpus_hash(documents),
    )


def search(index: RetrievalIndex, query: str, top_k: int) -> list[ScoredHit]:
    """Rank documents by BM25 against ``query``; empty query gives []."""
    if top_k < 1:
        raise ValidationError("top_k must be >= 1")
    tokens = tokenize(query)
    if not tokens:
        return []
    scores: dict[int, float] = {}
    n = index.doc_count
    for token in tokens:
        plist = index.postings.get(token)
        if plist is None:
            continue
        df = len(plist)
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        for position, tf in plist:
            dl = index.doc_lengths[position]
            denom = tf + index.k1 * (1.0 - index.b + index.b * dl / index.avg_doc_length)
            scores[position] = scores.get(position, 0.0) + idf * tf * (index.k1 + 1.0) / denom

    ranked = sorted(
        scores.items(), key=lambda item: (-item[1], index.documents[item[0]].doc_id)
    )
    hits = []
    for position, score in ranked[:top_k]:
        doc = index.documents[position]
        hits.append(ScoredHit(doc_id=doc.doc_id, score=score, snippet=make_snippet(doc.body)))
    return hits


def document_from_record(record: dict, line_no: int = 0) -> Document:
    if "id" not in record or "text" not in record:
        raise ValidationError(f"corpus line {line_no}: missing 'id' or 'text'")
    source = str(record.get("source", "other") or "other")
    if source not in SOURCES:
        source = "other"
    return Document(
        doc_id=str(record["id"]),
        title=str(record.get("title", "") or ""),
        body=str(record["text"]),
        source=source,
    )


def load_corpus(path: str) -> list[Document]:
    """Read a JSONL corpus: {"id", "title", "text", "source"} per line."""
    docs: list[Document] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"corpus line {line_no}: {exc}") from None
            docs.append(document_from_record(record, line_no))
    return docs


def save_index(index: RetrievalIndex, path: str) -> None:
    payload = {"format": _PICKLE_FORMAT, "corpus_hash": index.corpus_hash, "index": index}
    with open(path, "wb") as fh:
        pickle.dump(payload, fh, protocol=pickle.HIGHEST_PROTOCOL)


def load_index(path: str) -> RetrievalIndex:
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    if not isinstance(payload, dict) or payload.get("format") != _PICKLE_FORMAT:
        raise CorpusError(f"unrecognized index file: {path}")
    return payload["index"]
