"""Document embedding storage, vector math, and a deterministic test embedder.

The on-disk format is binary: 8-byte magic ``DQGEMB01``, row count n as
unsigned 64-bit little-endian, dimension d as unsigned 32-bit little-endian,
then n*d little-endian 32-bit floats in row-major order. An optional
``<path>.ids`` sidecar (one document id per line, UTF-8) allows integrity
checks against the collection the rows were encoded from.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Collection, tokenize
from .errors import (
    AlignmentError,
    DegenerateVectorError,
    FormatError,
    InvalidConfigError,
    SizeMismatchError,
    ValidationError,
)

MAGIC = b"DQGEMB01"
_HEADER = struct.Struct("<8sQI")


@dataclass
class EmbeddingMatrix:
    """Dense float32 matrix; row i is aligned with collection ordinal i."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValidationError(f"embedding matrix must be 2-D, got {self.data.ndim}-D")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self.data[i]


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Read an embedding file, validating magic, shape, and finiteness."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file too short for header")
    magic, n, d = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if d < 1:
        raise FormatError(f"{path}: dimension must be >= 1, got {d}")
    expected = n * d * 4
    payload = raw[_HEADER.size:]
    if len(payload) != expected:
        raise SizeMismatchError(
            f"{path}: declared {n}x{d} needs {expected} payload bytes, found {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(n, d)
    finite = np.isfinite(data).all(axis=1) if n else np.ones(0, dtype=bool)
    if n and not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise ValidationError(f"{path}: non-finite value in row {bad}")
    return EmbeddingMatrix(data=data.copy())


def save_embeddings(matrix: EmbeddingMatrix, path: str | Path, ids: list[str] | None = None) -> None:
    """Write the binary format; optionally emit the `.ids` sidecar."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, matrix.n, matrix.d))
        fh.write(np.ascontiguousarray(matrix.data, dtype="<f4").tobytes())
    if ids is not None:
        if len(ids) != matrix.n:
            raise SizeMismatchError(f"{len(ids)} ids for {matrix.n} rows")
        Path(str(path) + ".ids").write_text("".join(i + "\n" for i in ids), encoding="utf-8")


def load_ids(path: str | Path) -> list[str]:
    """Read an `.ids` sidecar: one id per line."""
    text = Path(path).read_text(encoding="utf-8")
    return [line for line in text.splitlines() if line]


def check_alignment(collection: Collection, matrix: EmbeddingMatrix,
                    ids: list[str] | None = None) -> None:
    """Verify row count (and, when ids are given, row identity) against a collection."""
    if matrix.n != len(collection):
        raise AlignmentError(
            f"embedding rows ({matrix.n}) != collection size ({len(collection)})"
        )
    if ids is not None:
        if len(ids) != len(collection):
            raise AlignmentError(f"sidecar ids ({len(ids)}) != collection size ({len(collection)})")
        for i, (doc, row_id) in enumerate(zip(collection, ids)):
            if doc.id != row_id:
                raise AlignmentError(f"row {i}: sidecar id {row_id!r} != document id {doc.id!r}")


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between u and v, clamped to [-1, 1]."""
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"vector shapes differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DegenerateVectorError("cosine similarity of a zero-norm vector")
    return float(np.clip(float(a @ b) / (na * nb), -1.0, 1.0))


def _token_hash(token: str, seed: int, purpose: bytes) -> int:
    key = struct.pack("<Q", seed % (1 << 64))
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=key, person=purpose)
    return int.from_bytes(digest.digest(), "little")


def hash_embed(text: str, d: int, seed: int,
               _cache: dict[str, tuple[int, float]] | None = None) -> np.ndarray:
    """Deterministic bag-of-hashed-tokens unit vector; a stand-in encoder for tests.

    Tokens are hashed to a bucket in [0, d) with a +/-1 sign from a second
    hash, accumulated, and L2-normalized. Identical (text, d, seed) always
    produce an identical vector. The optional cache only memoizes per-token
    hashes; it never changes the result.
    """
    if d < 8:
        raise InvalidConfigError(f"hash_embed dimension must be >= 8, got {d}")
    tokens = tokenize(text)
    if not tokens:
        raise DegenerateVectorError("hash_embed on text with no tokens")
    vec = np.zeros(d, dtype=np.float64)
    for token in tokens:
        hit = _cache.get(token) if _cache is not None else None
        if hit is None:
            bucket = _token_hash(token, seed, b"bucket") % d
            sign = 1.0 if _token_hash(token, seed, b"sign") & 1 else -1.0
            if _cache is not None:
                _cache[token] = (bucket, sign)
        else:
            bucket, sign = hit
        vec[bucket] += sign
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise DegenerateVectorError("hash_embed accumulated to the zero vector")
    return (vec / norm).astype(np.float32)


def embed_collection(collection: Collection, d: int, seed: int) -> EmbeddingMatrix:
    """hash_embed every rendered document; rows follow collection order."""
    from .corpus import render_document

    rows = np.zeros((len(collection), d), dtype=np.float32)
    cache: dict[str, tuple[int, float]] = {}
    for i, doc in enumerate(collection):
        rows[i] = hash_embed(render_document(doc), d, seed, _cache=cache)
    return EmbeddingMatrix(data=rows)
