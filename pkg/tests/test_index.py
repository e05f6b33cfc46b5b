import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lexindex.corpus import Document
from lexindex.errors import FormatError, IncompatibleIndexError
from lexindex.index import (MAGIC, DocumentScoringError, SparseScoreVector, build_index,
                            load_index, postings_for, read_vectors, save_index, sparsify,
                            write_vectors)


def topk_oracle(scores, k):
    """Sort (score desc, id asc) with plain Python and take k."""
    ranked = sorted(range(len(scores)), key=lambda i: (-scores[i], i))[:k]
    return sorted((i, scores[i]) for i in ranked)


class TestSparsify:
    def test_examples(self):
        sv = [5.0, 1.0, 9.0, 9.0]
        assert topk_oracle(sv, 2) == [(2, 9.0), (3, 9.0)]
        assert sparsify(sv, 2).entries() == [(2, 9.0), (3, 9.0)]
        assert topk_oracle(sv, 3) == [(0, 5.0), (2, 9.0), (3, 9.0)]
        assert sparsify(sv, 3).entries() == [(0, 5.0), (2, 9.0), (3, 9.0)]

    def test_k_equal_v_is_identity(self):
        sv = np.array([0.0, -1.0, 2.0])
        assert sparsify(sv, 3).entries() == [(0, 0.0), (1, -1.0), (2, 2.0)]

    def test_tie_prefers_smaller_id(self):
        assert sparsify([1.0, 3.0, 3.0, 3.0], 2).entries() == [(1, 3.0), (2, 3.0)]

    def test_negative_scores_can_be_kept(self):
        assert sparsify([-3.0, -1.0, -2.0], 1).entries() == [(1, -1.0)]

    def test_k_zero(self):
        with pytest.raises(ValueError):
            sparsify([1.0], 0)

    @settings(max_examples=200, deadline=None)
    @given(hnp.arrays(np.float64, st.integers(1, 30), elements=st.integers(-5, 5).map(float)),
           st.integers(1, 35), st.integers(1, 35))
    def test_matches_oracle_and_nested(self, sv, k1, k2):
        k1, k2 = sorted((k1, k2))
        a, b = sparsify(sv, k1), sparsify(sv, k2)
        assert a.entries() == topk_oracle(list(sv), k1)
        assert set(a.entries()) <= set(b.entries())
        assert len(a) == min(k1, len(sv))
        assert np.all(a.scores == sv[a.ids])


def random_vectors(rng, n, V, density=0.1):
    out = np.zeros((n, V))
    mask = rng.random((n, V)) < density
    out[mask] = rng.random(mask.sum()).astype(np.float32)
    return out


class TestBuildIndex:
    def test_disjoint_tokens(self):
        docs = [Document("a", ""), Document("b", "")]
        vecs = {"a": np.array([0, 1.0, 0]), "b": np.array([0, 0, 2.0])}
        idx = build_index(docs, lambda d: vecs[d.doc_id], 3)
        assert {t: len(o) for t, (o, _) in idx.postings.items()} == {1: 1, 2: 1}

    def test_sparsify_one_posting_per_doc(self):
        rng = np.random.default_rng(0)
        V = 20
        vecs = rng.random((10, V)) + 0.1
        docs = [Document(f"d{i}", "") for i in range(10)]
        idx = build_index(docs, lambda d: vecs[int(d.doc_id[1:])], V, sparsify_k=1)
        assert idx.nnz() == 10
        for t, (ords, scores) in idx.postings.items():
            for o, s in zip(ords, scores):
                assert int(np.argmax(vecs[o])) == t
                assert s == np.float32(vecs[o].max())

    def test_empty_corpus(self):
        idx = build_index([], lambda d: None, 5)
        assert idx.num_docs == 0 and idx.postings == {}

    def test_scorer_failure_names_doc(self):
        def bad(d):
            raise RuntimeError("boom")
        with pytest.raises(DocumentScoringError, match="'x'"):
            build_index([Document("x", "")], bad, 3)

    def test_threaded_build_is_identical(self):
        rng = np.random.default_rng(1)
        vecs = random_vectors(rng, 60, 40)
        docs = [Document(f"d{i}", "") for i in range(60)]
        f = lambda d: vecs[int(d.doc_id[1:])]  # noqa: E731
        assert build_index(docs, f, 40, threads=1) == build_index(docs, f, 40, threads=4)

    def test_postings_sorted_and_unique(self):
        rng = np.random.default_rng(2)
        vecs = random_vectors(rng, 50, 30, 0.3)
        idx = build_index([Document(str(i), "") for i in range(50)], lambda d: vecs[int(d.doc_id)], 30)
        for ords, scores in idx.postings.values():
            assert np.all(np.diff(ords.astype(np.int64)) > 0)
            assert np.all(scores != 0)
        assert idx.nnz() == np.count_nonzero(vecs)


class TestPostingsFor:
    def setup_method(self):
        self.idx = build_index([Document("a", "")], lambda d: np.array([0, 2.0, 0]), 3)

    def test_absent(self):
        o, s = postings_for(self.idx, 0)
        assert len(o) == 0 and len(s) == 0

    def test_present(self):
        o, s = postings_for(self.idx, 1)
        assert o.tolist() == [0] and s.tolist() == [2.0]

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            postings_for(self.idx, 3)


class TestPersistence:
    def make(self, seed=0, n=40, V=64):
        rng = np.random.default_rng(seed)
        vecs = random_vectors(rng, n, V, 0.2) * rng.choice([-1, 1], size=(n, V))
        docs = [Document(f"doc-{i}-é", "") for i in range(n)]
        return build_index(docs, lambda d: vecs[int(d.doc_id.split("-")[1])], V,
                           vocab_checksum=bytes(range(32)), scorer_tag="test")

    def test_round_trip_bit_exact(self, tmp_path):
        idx = self.make()
        p = tmp_path / "i.idx"
        save_index(idx, p)
        back = load_index(p, expected_checksum=bytes(range(32)))
        assert back == idx
        save_index(back, tmp_path / "j.idx")
        assert p.read_bytes() == (tmp_path / "j.idx").read_bytes()
        assert p.read_bytes()[:8] == MAGIC

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "i.idx"
        save_index(self.make(), p)
        raw = bytearray(p.read_bytes())
        raw[0] ^= 0xFF
        p.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic"):
            load_index(p)

    def test_checksum_mismatch(self, tmp_path):
        p = tmp_path / "i.idx"
        save_index(self.make(), p)
        with pytest.raises(IncompatibleIndexError):
            load_index(p, expected_checksum=b"\x01" * 32)

    def test_version_mismatch(self, tmp_path):
        p = tmp_path / "i.idx"
        save_index(self.make(), p)
        raw = bytearray(p.read_bytes())
        raw[8] = 99
        p.write_bytes(bytes(raw))
        with pytest.raises(IncompatibleIndexError):
            load_index(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "i.idx"
        save_index(self.make(), p)
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(FormatError):
            load_index(p)

    def test_empty_index(self, tmp_path):
        idx = build_index([], lambda d: None, 7)
        save_index(idx, tmp_path / "e.idx")
        assert load_index(tmp_path / "e.idx") == idx


def test_vector_ndjson_round_trip(tmp_path):
    items = [("d1", SparseScoreVector(np.array([0, 5]), np.array([0.5, -1.25]))),
             ("d2", SparseScoreVector(np.array([], dtype=np.int64), np.array([])))]
    write_vectors(tmp_path / "v.jsonl", items)
    back = list(read_vectors(tmp_path / "v.jsonl", 6))
    assert [(d, v.entries()) for d, v in back] == [(d, v.entries()) for d, v in items]
    with pytest.raises(FormatError):
        list(read_vectors(tmp_path / "v.jsonl", 5))
