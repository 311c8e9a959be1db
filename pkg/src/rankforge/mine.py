"""BM25 indexing, retrieval, and hard-negative mining for training pairs.

Negatives for a query come from the tail of its top-x BM25 candidate list
after removing the positive document: the last ``num_negatives`` entries,
so the negatives are lexically related yet ranked well below the head of
the list. When fewer candidates exist the pair is flagged as a shortfall
rather than dropped.

Index files use magic ``DQGIDX01``; terms are written in sorted order so
the same collection always serializes to identical bytes.
"""

from __future__ import annotations

import json
import math
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Collection, render_document, tokenize
from .errors import DataError, DuplicateIdError, FormatError, InvalidConfigError
from .querygen import SyntheticQuery

MAGIC = b"DQGIDX01"
DEFAULT_K1 = 0.9
DEFAULT_B = 0.4

_HEADER = struct.Struct("<8sQQdd")   # magic, n_docs, n_terms, k1, b
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_POSTING = struct.Struct("<II")      # doc ordinal, term frequency


@dataclass
class MiningConfig:
    first_stage_hits: int = 100
    num_negatives: int = 4

    def validate(self) -> None:
        if self.first_stage_hits < 2:
            raise InvalidConfigError(
                f"first_stage_hits must be >= 2, got {self.first_stage_hits}"
            )
        if not 1 <= self.num_negatives < self.first_stage_hits:
            raise InvalidConfigError(
                f"num_negatives must be in [1, first_stage_hits), got {self.num_negatives}"
            )


@dataclass(frozen=True)
class TrainingPair:
    query_text: str
    positive_doc_id: str
    negative_doc_ids: tuple[str, ...]
    shortfall: bool


class Bm25Index:
    """Inverted index scoring with BM25 (Lucene-style idf, k1=0.9, b=0.4)."""

    def __init__(
        self,
        doc_ids: Sequence[str],
        doc_lengths: np.ndarray,
        postings: dict[str, tuple[np.ndarray, np.ndarray]],
        k1: float = DEFAULT_K1,
        b: float = DEFAULT_B,
    ):
        self.doc_ids = list(doc_ids)
        self.doc_lengths = np.asarray(doc_lengths, dtype=np.int64)
        self.postings = postings
        self.k1 = float(k1)
        self.b = float(b)
        self.avgdl = float(self.doc_lengths.mean()) if len(self.doc_ids) else 0.0
        # length normalizer is constant per document, so precompute it
        if self.avgdl > 0:
            self._norm = self.k1 * (1.0 - self.b + self.b * self.doc_lengths / self.avgdl)
        else:
            self._norm = np.full(len(self.doc_ids), self.k1 * (1.0 - self.b))

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)

    def idf(self, term: str) -> float:
        df = len(self.postings[term][0]) if term in self.postings else 0
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))

    def score_all(self, query_tokens: Sequence[str]) -> np.ndarray:
        """Score every document; repeated query tokens contribute once per occurrence."""
        scores = np.zeros(self.n_docs, dtype=np.float64)
        for term in query_tokens:
            if term not in self.postings:
                continue
            ords, tfs = self.postings[term]
            idf = self.idf(term)
            tf = tfs.astype(np.float64)
            scores[ords] += idf * tf * (self.k1 + 1.0) / (tf + self._norm[ords])
        return scores

    def search(self, query_text: str, k: int) -> list[tuple[int, float]]:
        """Top-k ordinals with positive score, ordered by score desc then ordinal asc."""
        scores = self.score_all(tokenize(query_text))
        hits = np.flatnonzero(scores > 0.0)
        if hits.size == 0:
            return []
        order = hits[np.lexsort((hits, -scores[hits]))]
        top = order[:k]
        return [(int(o), float(scores[o])) for o in top]


def build_index(collection: Collection, k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> Bm25Index:
    """Index the rendered text (title plus body) of every document."""
    if len(collection) == 0:
        raise DataError("cannot build an index over an empty collection")
    doc_ids = []
    doc_lengths = np.zeros(len(collection), dtype=np.int64)
    raw: dict[str, tuple[list[int], list[int]]] = {}
    for ordinal, doc in enumerate(collection):
        doc_ids.append(doc.id)
        tokens = tokenize(render_document(doc))
        doc_lengths[ordinal] = len(tokens)
        for term, tf in Counter(tokens).items():
            ords, tfs = raw.setdefault(term, ([], []))
            ords.append(ordinal)
            tfs.append(tf)
    postings = {
        term: (np.asarray(ords, dtype=np.int64), np.asarray(tfs, dtype=np.int64))
        for term, (ords, tfs) in raw.items()
    }
    return Bm25Index(doc_ids, doc_lengths, postings, k1=k1, b=b)


def mine_negatives(
    index: Bm25Index, query_text: str, positive_ordinal: int, cfg: MiningConfig
) -> tuple[list[int], bool]:
    """Tail of the top-x candidates minus the positive; flags when under quota."""
    hits = index.search(query_text, cfg.first_stage_hits)
    candidates = [ordinal for ordinal, _ in hits if ordinal != positive_ordinal]
    negatives = candidates[-cfg.num_negatives:] if candidates else []
    shortfall = len(negatives) < cfg.num_negatives
    return negatives, shortfall


def assemble_pairs(
    index: Bm25Index,
    collection: Collection,
    queries: Sequence[SyntheticQuery],
    cfg: MiningConfig,
) -> list[TrainingPair]:
    """One training pair per query, in query order."""
    cfg.validate()
    pairs = []
    for q in queries:
        try:
            positive = collection.ordinal(q.doc_id)
        except KeyError:
            raise DataError(f"query references unknown document id {q.doc_id!r}") from None
        negatives, shortfall = mine_negatives(index, q.query_text, positive, cfg)
        pairs.append(
            TrainingPair(
                query_text=q.query_text,
                positive_doc_id=q.doc_id,
                negative_doc_ids=tuple(index.doc_ids[o] for o in negatives),
                shortfall=shortfall,
            )
        )
    return pairs


def save_pairs(pairs: Sequence[TrainingPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(
                json.dumps(
                    {
                        "query": p.query_text,
                        "positive_doc_id": p.positive_doc_id,
                        "negative_doc_ids": list(p.negative_doc_ids),
                        "shortfall": p.shortfall,
                    }
                )
                + "\n"
            )


def load_pairs(path: str | Path) -> list[TrainingPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON ({exc.msg})", line_number) from exc
            for key in ("query", "positive_doc_id", "negative_doc_ids", "shortfall"):
                if key not in obj:
                    raise FormatError(f"pair record missing `{key}`", line_number)
            pairs.append(
                TrainingPair(
                    query_text=obj["query"],
                    positive_doc_id=obj["positive_doc_id"],
                    negative_doc_ids=tuple(obj["negative_doc_ids"]),
                    shortfall=bool(obj["shortfall"]),
                )
            )
    return pairs


def save_index(index: Bm25Index, path: str | Path) -> None:
    """Serialize the index; byte-stable because terms are written sorted."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, index.n_docs, len(index.postings), index.k1, index.b))
        for doc_id, dl in zip(index.doc_ids, index.doc_lengths):
            encoded = doc_id.encode("utf-8")
            fh.write(_U16.pack(len(encoded)))
            fh.write(encoded)
            fh.write(_U32.pack(int(dl)))
        for term in sorted(index.postings):
            ords, tfs = index.postings[term]
            encoded = term.encode("utf-8")
            fh.write(_U16.pack(len(encoded)))
            fh.write(encoded)
            fh.write(_U64.pack(len(ords)))
            for o, tf in zip(ords, tfs):
                fh.write(_POSTING.pack(int(o), int(tf)))


def load_index(path: str | Path) -> Bm25Index:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated index header")
    magic, n_docs, n_terms, k1, b = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    offset = _HEADER.size

    def take(fmt: struct.Struct):
        nonlocal offset
        if offset + fmt.size > len(blob):
            raise FormatError(f"{path}: truncated at byte {offset}")
        values = fmt.unpack_from(blob, offset)
        offset += fmt.size
        return values

    def take_bytes(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise FormatError(f"{path}: truncated at byte {offset}")
        chunk = blob[offset:offset + n]
        offset += n
        return chunk

    doc_ids = []
    doc_lengths = np.zeros(n_docs, dtype=np.int64)
    for i in range(n_docs):
        (id_len,) = take(_U16)
        doc_ids.append(take_bytes(id_len).decode("utf-8"))
        (doc_lengths[i],) = take(_U32)
    if len(set(doc_ids)) != len(doc_ids):
        raise DuplicateIdError(f"{path}: duplicate document ids in index")

    postings: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    previous_term = None
    for _ in range(n_terms):
        (term_len,) = take(_U16)
        term = take_bytes(term_len).decode("utf-8")
        if previous_term is not None and term <= previous_term:
            raise FormatError(f"{path}: terms out of order at {term!r}")
        previous_term = term
        (df,) = take(_U64)
        if df < 1:
            raise FormatError(f"{path}: term {term!r} has empty postings")
        ords = np.zeros(df, dtype=np.int64)
        tfs = np.zeros(df, dtype=np.int64)
        for j in range(df):
            o, tf = take(_POSTING)
            if o >= n_docs:
                raise FormatError(f"{path}: posting ordinal {o} out of range")
            if tf < 1:
                raise FormatError(f"{path}: non-positive term frequency for {term!r}")
            ords[j] = o
            tfs[j] = tf
        postings[term] = (ords, tfs)
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return Bm25Index(doc_ids, doc_lengths, postings, k1=k1, b=b)
