"""Embedding file format, alignment checks, cosine, and the hash embedder."""

import struct
import subprocess
import sys

import mpmath
import numpy as np
import pytest

from rankforge.corpus import Collection, Document
from rankforge.embeddings import (
    MAGIC,
    EmbeddingMatrix,
    check_alignment,
    cosine_similarity,
    embed_collection,
    hash_embed,
    load_embeddings,
    load_ids,
    save_embeddings,
)
from rankforge.errors import (
    AlignmentError,
    DegenerateVectorError,
    FormatError,
    InvalidConfigError,
    SizeMismatchError,
    ValidationError,
)
from tests.conftest import make_collection


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.normal(size=(7, 5)).astype(np.float32)
    path = tmp_path / "e.bin"
    save_embeddings(EmbeddingMatrix(data=data), path, ids=[f"d{i}" for i in range(7)])
    loaded = load_embeddings(path)
    assert loaded.n == 7 and loaded.d == 5
    np.testing.assert_array_equal(loaded.data, data)
    assert load_ids(str(path) + ".ids") == [f"d{i}" for i in range(7)]


def test_save_is_byte_deterministic(tmp_path):
    rng = np.random.default_rng(1)
    data = rng.normal(size=(4, 3)).astype(np.float32)
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    save_embeddings(EmbeddingMatrix(data=data), a)
    save_embeddings(EmbeddingMatrix(data=data), b)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes()[:8] == MAGIC


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 12)
    with pytest.raises(FormatError):
        load_embeddings(path)


def test_load_rejects_truncated_payload(tmp_path):
    path = tmp_path / "trunc.bin"
    header = struct.pack("<8sQI", MAGIC, 3, 4)           # declares 3x4 floats
    path.write_bytes(header + b"\x00" * (3 * 4 * 4 - 4))  # one float short
    with pytest.raises(SizeMismatchError):
        load_embeddings(path)


def test_load_rejects_nonfinite_rows(tmp_path):
    data = np.ones((3, 2), dtype=np.float32)
    data[1, 0] = np.nan
    path = tmp_path / "nan.bin"
    save_embeddings(EmbeddingMatrix(data=np.ones((3, 2), dtype=np.float32)), path)
    blob = bytearray(path.read_bytes())
    offset = struct.calcsize("<8sQI") + 2 * 4            # row 1, column 0
    blob[offset:offset + 4] = struct.pack("<f", float("nan"))
    path.write_bytes(bytes(blob))
    with pytest.raises(ValidationError) as err:
        load_embeddings(path)
    assert "row 1" in str(err.value)


def test_check_alignment(tmp_path):
    coll = make_collection(5)
    matrix = EmbeddingMatrix(data=np.ones((5, 3), dtype=np.float32))
    check_alignment(coll, matrix)                          # row count alone
    check_alignment(coll, matrix, ids=[d.id for d in coll])
    with pytest.raises(AlignmentError):
        check_alignment(coll, EmbeddingMatrix(data=np.ones((4, 3), dtype=np.float32)))
    shuffled = [d.id for d in coll]
    shuffled[0], shuffled[1] = shuffled[1], shuffled[0]
    with pytest.raises(AlignmentError):
        check_alignment(coll, matrix, ids=shuffled)


def test_cosine_against_mpmath_oracle():
    rng = np.random.default_rng(7)
    mpmath.mp.dps = 50
    for _ in range(100):
        d = int(rng.integers(2, 20))
        u = rng.normal(size=d)
        v = rng.normal(size=d)
        got = cosine_similarity(u, v)
        mu = [mpmath.mpf(float(x)) for x in u]
        mv = [mpmath.mpf(float(x)) for x in v]
        dot = mpmath.fsum(a * b for a, b in zip(mu, mv))
        nu = mpmath.sqrt(mpmath.fsum(a * a for a in mu))
        nv = mpmath.sqrt(mpmath.fsum(b * b for b in mv))
        want = float(dot / (nu * nv))
        assert abs(got - want) < 1e-12


def test_cosine_clamps_and_rejects_zero():
    v = np.ones(4)
    assert cosine_similarity(v, v) == 1.0
    assert cosine_similarity(v, -v) == -1.0
    with pytest.raises(DegenerateVectorError):
        cosine_similarity(v, np.zeros(4))
    with pytest.raises(ValidationError):
        cosine_similarity(np.ones(3), np.ones(4))


def test_hash_embed_is_unit_norm_and_seeded():
    a = hash_embed("the quick brown fox", 32, seed=1)
    b = hash_embed("the quick brown fox", 32, seed=1)
    c = hash_embed("the quick brown fox", 32, seed=2)
    assert a.dtype == np.float32
    assert abs(float(np.linalg.norm(a)) - 1.0) < 1e-6
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_hash_embed_cache_does_not_change_result():
    cache: dict = {}
    a = hash_embed("garlic butter sauce garlic", 16, seed=9)
    b = hash_embed("garlic butter sauce garlic", 16, seed=9, _cache=cache)
    np.testing.assert_array_equal(a, b)
    assert cache                                           # cache was actually used


def test_hash_embed_rejects_tiny_dim_and_empty_text():
    with pytest.raises(InvalidConfigError):
        hash_embed("words", 4, seed=0)
    with pytest.raises(DegenerateVectorError):
        hash_embed("!!! ...", 16, seed=0)


def test_hash_embed_stable_across_processes():
    # guards against accidental reliance on Python's per-process hash salt
    code = (
        "from rankforge.embeddings import hash_embed;"
        "print(hash_embed('alpha beta gamma delta', 32, seed=5).tobytes().hex())"
    )
    outs = set()
    for hash_seed in ("0", "12345"):
        out = subprocess.run(
            [sys.executable, "-c", code],
            capture_output=True, text=True, check=True,
            env={"PYTHONHASHSEED": hash_seed, "PATH": "/usr/bin:/bin:/usr/local/bin"},
        )
        outs.add(out.stdout.strip())
    assert len(outs) == 1
    assert outs.pop() == hash_embed("alpha beta gamma delta", 32, seed=5).tobytes().hex()


def test_embed_collection_rows_follow_order():
    coll = make_collection(6, seed=1)
    matrix = embed_collection(coll, 32, seed=3)
    assert matrix.n == 6 and matrix.d == 32
    from rankforge.corpus import render_document

    for i, doc in enumerate(coll):
        np.testing.assert_array_equal(matrix.row(i), hash_embed(render_document(doc), 32, seed=3))


def test_embedding_matrix_validates_shape():
    with pytest.raises(ValidationError):
        EmbeddingMatrix(data=np.ones(5, dtype=np.float32))          # not 2-D
