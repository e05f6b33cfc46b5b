import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lexindex.corpus import Document
from lexindex.index import SparseScoreVector, build_index
from lexindex.scoring import (Bm25Index, Bm25Stats, MissingVectorError, ScoredDoc, bm25_score,
                              bm25_term_score, estimate_flops, forward_vectors, rerank,
                              retrieve_bm25, retrieve_exhaustive, score_pair)


class TestScorePair:
    def test_examples(self):
        assert score_pair({1: 1, 3: 1}, [0, 2.5, 9, 0.5]) == 3.0
        assert score_pair({}, [1.0, 2.0]) == 0.0
        assert score_pair({2: 2}, [0, 0, 1.5, 0]) == 3.0

    def test_sparse_matches_dense(self):
        sv = np.array([0, 2.5, 9, 0.5])
        assert score_pair({1: 1, 3: 2, 0: 4}, SparseScoreVector.from_dense(sv)) == score_pair({1: 1, 3: 2, 0: 4}, sv)

    @settings(max_examples=100, deadline=None)
    @given(st.dictionaries(st.integers(0, 9), st.integers(1, 3), max_size=5), st.integers(1, 5))
    def test_scaling(self, qf, alpha):
        sv = np.linspace(-1, 1, 10)
        scaled = {t: alpha * w for t, w in qf.items()}
        assert score_pair(scaled, sv) == pytest.approx(alpha * score_pair(qf, sv), abs=1e-12)


def bm25_reference(query_tokens, docs, k1=0.9, b=0.4):
    """Textbook BM25 written directly from the formula over raw token lists."""
    N = len(docs)
    avgdl = sum(len(d) for d in docs) / N
    out = []
    for d in docs:
        s = 0.0
        for t in sorted(set(query_tokens)):
            tf = d.count(t)
            if tf == 0:
                continue
            df = sum(1 for x in docs if t in x)
            idf = math.log(1 + (N - df + 0.5) / (df + 0.5))
            s += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(d) / avgdl))
        out.append(s)
    return out


class TestBm25:
    def test_single_doc_value(self):
        idx = Bm25Index.build(["d"], [[1]])
        expected = math.log(4 / 3)
        assert bm25_score({1: 1}, [1], idx.stats) == pytest.approx(expected, abs=1e-15)
        assert bm25_reference([1], [[1]])[0] == pytest.approx(0.2877, abs=5e-5)
        hits = retrieve_bm25({1: 1}, idx, 10)
        assert hits == [ScoredDoc("d", bm25_score({1: 1}, [1], idx.stats))]

    def test_absent_token_and_zero_tf(self):
        idx = Bm25Index.build(["d"], [[1, 2]])
        assert bm25_score({5: 1}, [1, 2], idx.stats) == 0.0
        assert bm25_term_score(0, 2, idx.stats, 1.0) == 0.0

    def test_only_matching_doc_returned(self):
        docs = [[1, 2], [3, 3, 4], [2, 1]]
        idx = Bm25Index.build(["d1", "d2", "d3"], docs)
        assert [h.doc_id for h in retrieve_bm25({4: 1}, idx, 10)] == ["d2"]

    def test_top_n_larger_than_matches(self):
        idx = Bm25Index.build(["a", "b", "c"], [[1], [1, 2], [3]])
        assert len(retrieve_bm25({1: 1}, idx, 50)) == 2

    def test_unk_only_query(self):
        idx = Bm25Index.build(["a"], [[0, 1]], skip_id=0)
        assert retrieve_bm25({0: 1}, idx, 10) == []

    def test_ties_by_ordinal(self):
        idx = Bm25Index.build(["a", "b", "c"], [[2], [1], [1]])
        assert [h.doc_id for h in retrieve_bm25({1: 1}, idx, 10)] == ["b", "c"]

    def test_stats_validation(self):
        with pytest.raises(ValueError):
            Bm25Stats(0, {}, np.zeros(0), 0.0, k1=-1)

    def test_matches_reference_random(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            docs = [list(rng.integers(0, 15, size=rng.integers(1, 12))) for _ in range(20)]
            idx = Bm25Index.build([str(i) for i in range(20)], docs)
            q = list(rng.integers(0, 15, size=4))
            ref = bm25_reference(q, docs)
            for i, d in enumerate(docs):
                assert bm25_score({t: 1 for t in q}, d, idx.stats) == pytest.approx(ref[i], rel=1e-12)


class TestRerank:
    def test_swap(self):
        vecs = {"x": np.array([0, 1.0]), "y": np.array([0, 2.0])}
        out = rerank([ScoredDoc("x", 9), ScoredDoc("y", 8)], {1: 1}, vecs)
        assert [d.doc_id for d in out] == ["y", "x"]
        assert [d.score for d in out] == [2.0, 1.0]

    def test_stable(self):
        vecs = {k: np.array([1.0]) for k in "abcd"}
        cands = [ScoredDoc(k, 0) for k in "cadb"]
        assert [d.doc_id for d in rerank(cands, {0: 1}, vecs)] == list("cadb")

    def test_empty(self):
        assert rerank([], {0: 1}, {}) == []

    def test_missing_vector(self):
        with pytest.raises(MissingVectorError, match="'zz'"):
            rerank([ScoredDoc("zz", 1)], {0: 1}, {})

    def test_permutation_and_positive_scaling(self):
        rng = np.random.default_rng(4)
        vecs = {str(i): rng.random(8) for i in range(30)}
        cands = [ScoredDoc(str(i), 0) for i in rng.permutation(30)]
        qf = {1: 1, 4: 2}
        out = rerank(cands, qf, vecs)
        assert sorted(d.doc_id for d in out) == sorted(c.doc_id for c in cands)
        scaled = {k: 3.5 * v for k, v in vecs.items()}
        assert rerank(cands, qf, scaled)[0].doc_id == out[0].doc_id


def dense_ranking(qf, vectors, top_n):
    scored = []
    for o, sv in enumerate(vectors):
        if any(sv[t] != 0 for t in qf):
            scored.append((o, score_pair(qf, sv)))
    scored.sort(key=lambda x: (-x[1], x[0]))
    return scored[:top_n]


class TestExhaustive:
    def test_matches_dense(self):
        rng = np.random.default_rng(5)
        V, n = 50, 100
        vecs = (rng.random((n, V)) * (rng.random((n, V)) < 0.2)).astype(np.float32).astype(np.float64)
        idx = build_index([Document(str(i), "") for i in range(n)], lambda d: vecs[int(d.doc_id)], V)
        for _ in range(20):
            qf = {int(t): int(c) for t, c in zip(*np.unique(rng.integers(0, V, 6), return_counts=True))}
            got = retrieve_exhaustive(qf, idx, n)
            ref = dense_ranking(qf, vecs, n)
            assert [int(d.doc_id) for d in got] == [o for o, _ in ref]
            np.testing.assert_allclose([d.score for d in got], [s for _, s in ref], atol=1e-6)
            top1 = retrieve_exhaustive(qf, idx, 1)
            assert int(top1[0].doc_id) == ref[0][0]

    def test_no_postings(self):
        idx = build_index([Document("a", "")], lambda d: np.array([0, 1.0]), 2)
        assert retrieve_exhaustive({0: 1}, idx, 5) == []

    def test_forward_vectors(self):
        vecs = {"a": np.array([0, 1.5, 0]), "b": np.array([2.0, 0, -1.0])}
        idx = build_index([Document(k, "") for k in "ab"], lambda d: vecs[d.doc_id], 3)
        fw = forward_vectors(idx)
        for k in "ab":
            np.testing.assert_array_equal(fw[k].to_dense(3), vecs[k])


def test_estimate_flops():
    assert estimate_flops(16, 1) == 16
    assert estimate_flops(16, 100) == 1600
    assert estimate_flops(0, 100) == 0
    with pytest.raises(ValueError):
        estimate_flops(-1, 1)
