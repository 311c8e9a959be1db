"""BM25 scoring against an independent oracle, negative mining, index format."""

import math
import random
from collections import Counter

import numpy as np
import pytest

from rankforge.corpus import Collection, Document, render_document, tokenize
from rankforge.errors import (
    DataError,
    DuplicateIdError,
    FormatError,
    InvalidConfigError,
)
from rankforge.mine import (
    Bm25Index,
    MiningConfig,
    TrainingPair,
    assemble_pairs,
    build_index,
    load_index,
    load_pairs,
    mine_negatives,
    save_index,
    save_pairs,
)
from rankforge.querygen import SyntheticQuery
from tests.conftest import TOPIC_VOCAB, make_collection


# ---------------------------------------------------------------- the oracle

def bm25_oracle(doc_token_lists, query_tokens, k1=0.9, b=0.4):
    """From-scratch BM25 with plain dicts; one score per document."""
    n = len(doc_token_lists)
    lengths = [len(toks) for toks in doc_token_lists]
    avgdl = sum(lengths) / n
    df = Counter()
    for toks in doc_token_lists:
        for term in set(toks):
            df[term] += 1
    scores = []
    for toks, dl in zip(doc_token_lists, lengths):
        tf = Counter(toks)
        s = 0.0
        for term in query_tokens:
            if tf[term] == 0:
                continue
            idf = math.log(1.0 + (n - df[term] + 0.5) / (df[term] + 0.5))
            t = tf[term]
            s += idf * (t * (k1 + 1.0)) / (t + k1 * (1.0 - b + b * dl / avgdl))
        scores.append(s)
    return scores


def _collection_from_texts(texts):
    docs = [Document(id=f"d{i}", title="", text=t) for i, t in enumerate(texts)]
    return Collection(docs=docs, index={d.id: i for i, d in enumerate(docs)})


def test_single_doc_closed_form():
    index = build_index(_collection_from_texts(["a"]))
    score = float(index.score_all(["a"])[0])
    assert abs(score - math.log(4.0 / 3.0)) < 1e-9


def test_scores_match_oracle_on_random_corpora():
    rng = random.Random(0)
    vocab = [f"w{i}" for i in range(40)]
    for trial in range(50):
        n_docs = rng.randint(1, 25)
        texts = [" ".join(rng.choices(vocab, k=rng.randint(1, 60))) for _ in range(n_docs)]
        coll = _collection_from_texts(texts)
        index = build_index(coll)
        query = rng.choices(vocab, k=rng.randint(1, 6))
        got = index.score_all(query)
        want = bm25_oracle([tokenize(t) for t in texts], query)
        np.testing.assert_allclose(got, want, atol=1e-6, err_msg=f"trial {trial}")


def test_repeated_query_terms_add_per_occurrence():
    index = build_index(_collection_from_texts(["apple banana", "apple apple"]))
    single = index.score_all(["apple"])
    double = index.score_all(["apple", "apple"])
    np.testing.assert_allclose(double, 2.0 * single, atol=1e-12)


def test_index_uses_rendered_title_and_text():
    docs = [Document(id="a", title="zebra title", text="body words here"),
            Document(id="b", title="", text="plain body")]
    coll = Collection(docs=docs, index={"a": 0, "b": 1})
    index = build_index(coll)
    assert index.doc_lengths[0] == len(tokenize(render_document(docs[0])))
    assert float(index.score_all(["zebra"])[0]) > 0.0
    assert float(index.score_all(["zebra"])[1]) == 0.0


def test_search_orders_and_truncates():
    texts = ["cat cat cat", "cat cat", "cat", "dog"]
    index = build_index(_collection_from_texts(texts))
    hits = index.search("cat", 10)
    assert [h[0] for h in hits] == [0, 1, 2]          # score descending
    assert all(s > 0 for _, s in hits)
    assert [h[0] for h in index.search("cat", 2)] == [0, 1]
    assert index.search("unseen", 5) == []


def test_search_tie_break_by_ordinal():
    texts = ["same text here", "same text here", "same text here"]
    index = build_index(_collection_from_texts(texts))
    hits = index.search("same", 3)
    assert [h[0] for h in hits] == [0, 1, 2]
    assert len({round(s, 12) for _, s in hits}) == 1


def test_build_index_rejects_empty_collection():
    with pytest.raises(DataError):
        build_index(Collection(docs=[], index={}))


# ------------------------------------------------------------------- mining

def _ranked_fixture():
    # doc0 is the clear best match; the rest matched progressively less
    texts = [
        "quantum computer quantum computer quantum computer",
        "quantum computer quantum computer filler filler",
        "quantum computer filler filler filler filler",
        "quantum filler filler filler filler filler",
        "computer filler filler filler filler filler",
        "totally unrelated words about gardening roses",
    ]
    return _collection_from_texts(texts)


def test_mine_negatives_takes_tail_of_candidates():
    coll = _ranked_fixture()
    index = build_index(coll)
    cfg = MiningConfig(first_stage_hits=10, num_negatives=2)
    hits = [o for o, _ in index.search("quantum computer", 10)]
    assert hits[0] == 0
    negatives, shortfall = mine_negatives(index, "quantum computer", 0, cfg)
    assert negatives == [o for o in hits if o != 0][-2:]
    assert not shortfall
    assert 0 not in negatives


def test_mine_negatives_flags_shortfall():
    coll = _collection_from_texts(["alpha beta", "alpha gamma"])
    index = build_index(coll)
    cfg = MiningConfig(first_stage_hits=10, num_negatives=4)
    negatives, shortfall = mine_negatives(index, "alpha", 0, cfg)
    assert negatives == [1]
    assert shortfall
    negatives, shortfall = mine_negatives(index, "zzz", 0, cfg)
    assert negatives == [] and shortfall


def test_mine_negatives_invariants_bulk():
    rng = random.Random(1)
    vocab = [f"t{i}" for i in range(30)]
    texts = [" ".join(rng.choices(vocab, k=rng.randint(3, 30))) for _ in range(60)]
    coll = _collection_from_texts(texts)
    index = build_index(coll)
    trials = 10_000
    for trial in range(trials):
        x = rng.randint(2, 12)
        num_neg = rng.randint(1, x - 1)
        cfg = MiningConfig(first_stage_hits=x, num_negatives=num_neg)
        query = " ".join(rng.choices(vocab, k=rng.randint(1, 4)))
        positive = rng.randrange(len(coll))
        negatives, shortfall = mine_negatives(index, query, positive, cfg)
        hit_ordinals = [o for o, _ in index.search(query, x)]
        filtered = [o for o in hit_ordinals if o != positive]
        assert negatives == (filtered[-num_neg:] if filtered else [])
        assert positive not in negatives
        assert len(negatives) <= num_neg
        assert shortfall == (len(negatives) < num_neg)
        assert len(set(negatives)) == len(negatives)


def test_mining_config_validation():
    with pytest.raises(InvalidConfigError):
        MiningConfig(first_stage_hits=1, num_negatives=1).validate()
    with pytest.raises(InvalidConfigError):
        MiningConfig(first_stage_hits=10, num_negatives=0).validate()
    with pytest.raises(InvalidConfigError):
        MiningConfig(first_stage_hits=10, num_negatives=10).validate()
    MiningConfig().validate()                      # defaults are valid


def test_assemble_pairs_order_and_unknown_id():
    coll = _ranked_fixture()
    index = build_index(coll)
    queries = [
        SyntheticQuery(doc_id="d1", query_text="quantum computer", raw_completion="", model_name="m"),
        SyntheticQuery(doc_id="d0", query_text="quantum", raw_completion="", model_name="m"),
    ]
    pairs = assemble_pairs(index, coll, queries, MiningConfig(first_stage_hits=5, num_negatives=2))
    assert [p.positive_doc_id for p in pairs] == ["d1", "d0"]
    assert all(p.positive_doc_id not in p.negative_doc_ids for p in pairs)
    bad = [SyntheticQuery(doc_id="nope", query_text="q", raw_completion="", model_name="m")]
    with pytest.raises(DataError):
        assemble_pairs(index, coll, bad, MiningConfig())


# --------------------------------------------------------------- file format

def test_index_roundtrip_and_byte_stability(tmp_path):
    coll = make_collection(20, seed=4)
    index = build_index(coll, k1=1.1, b=0.3)
    path_a = tmp_path / "a.idx"
    save_index(index, path_a)
    loaded = load_index(path_a)
    assert loaded.doc_ids == index.doc_ids
    assert loaded.k1 == index.k1 and loaded.b == index.b
    np.testing.assert_array_equal(loaded.doc_lengths, index.doc_lengths)
    assert set(loaded.postings) == set(index.postings)
    for term in index.postings:
        np.testing.assert_array_equal(loaded.postings[term][0], index.postings[term][0])
        np.testing.assert_array_equal(loaded.postings[term][1], index.postings[term][1])

    path_b = tmp_path / "b.idx"
    save_index(loaded, path_b)
    assert path_a.read_bytes() == path_b.read_bytes()

    # scoring equivalence after the roundtrip
    query = ["game", "recipe", "orbit"]
    np.testing.assert_allclose(loaded.score_all(query), index.score_all(query), atol=0)


def test_index_load_rejects_corruption(tmp_path):
    coll = make_collection(5, seed=2)
    index = build_index(coll)
    path = tmp_path / "i.idx"
    save_index(index, path)
    blob = bytearray(path.read_bytes())

    bad = tmp_path / "bad.idx"
    bad.write_bytes(b"WRONGMAG" + bytes(blob[8:]))
    with pytest.raises(FormatError):
        load_index(bad)

    short = tmp_path / "short.idx"
    short.write_bytes(bytes(blob[:-3]))
    with pytest.raises(FormatError):
        load_index(short)

    trailing = tmp_path / "trail.idx"
    trailing.write_bytes(bytes(blob) + b"\x00\x00")
    with pytest.raises(FormatError):
        load_index(trailing)


def test_pairs_roundtrip(tmp_path):
    pairs = [
        TrainingPair(query_text="q one", positive_doc_id="a",
                     negative_doc_ids=("b", "c"), shortfall=False),
        TrainingPair(query_text="q two", positive_doc_id="d",
                     negative_doc_ids=(), shortfall=True),
    ]
    path = tmp_path / "p.jsonl"
    save_pairs(pairs, path)
    assert load_pairs(path) == pairs

    path.write_text('{"query": "x"}\n', encoding="utf-8")
    with pytest.raises(FormatError):
        load_pairs(path)
