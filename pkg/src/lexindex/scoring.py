"""Query-time scoring: inner products, BM25 candidates, reranking, exhaustive retrieval."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from .index import ImpactIndex, SparseScoreVector, postings_for

DEFAULT_K1 = 0.9
DEFAULT_B = 0.4


@dataclass(frozen=True)
class ScoredDoc:
    doc_id: str
    score: float


def score_pair(qf: Mapping[int, float], sv) -> float:
    """Inner product of a query feature with a dense or sparse score vector.

    Terms are summed in ascending token order so results are reproducible
    bit-for-bit against posting traversal.
    """
    total = 0.0
    if isinstance(sv, SparseScoreVector):
        for t in sorted(qf):
            i = np.searchsorted(sv.ids, t)
            if i < len(sv.ids) and sv.ids[i] == t:
                total += qf[t] * float(sv.scores[i])
        return total
    for t in sorted(qf):
        total += qf[t] * float(sv[t])
    return total


@dataclass
class Bm25Stats:
    num_docs: int
    df: Dict[int, int]
    doc_len: np.ndarray
    avgdl: float
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B

    def __post_init__(self):
        if self.k1 < 0 or not (0 <= self.b <= 1):
            raise ValueError("BM25 requires k1 >= 0 and 0 <= b <= 1")

    def idf(self, t: int) -> float:
        df = self.df.get(t, 0)
        return math.log(1.0 + (self.num_docs - df + 0.5) / (df + 0.5))


def bm25_term_score(tf: int, dl: int, stats: Bm25Stats, idf: float) -> float:
    if tf <= 0:
        return 0.0
    norm = stats.k1 * (1.0 - stats.b + stats.b * dl / stats.avgdl)
    return idf * tf * (stats.k1 + 1.0) / (tf + norm)


def bm25_score(qf: Mapping[int, float], doc_tokens: Sequence[int], stats: Bm25Stats) -> float:
    """Brute-force BM25 of one document; repeated query tokens count once."""
    dl = len(doc_tokens)
    counts: Dict[int, int] = {}
    for t in doc_tokens:
        counts[t] = counts.get(t, 0) + 1
    total = 0.0
    for t in sorted(qf):
        tf = counts.get(t, 0)
        if tf:
            total += bm25_term_score(tf, dl, stats, stats.idf(t))
    return total


@dataclass
class Bm25Index:
    """Term-frequency postings plus collection statistics."""

    doc_ids: List[str]
    stats: Bm25Stats
    postings: Dict[int, tuple] = field(default_factory=dict)

    @classmethod
    def build(cls, doc_ids: Sequence[str], token_seqs: Iterable[Sequence[int]],
              k1: float = DEFAULT_K1, b: float = DEFAULT_B, skip_id: Optional[int] = None) -> "Bm25Index":
        """``skip_id`` (normally UNK) is counted in document length but never indexed."""
        acc: Dict[int, tuple] = {}
        lens = []
        for ordinal, toks in enumerate(token_seqs):
            lens.append(len(toks))
            counts: Dict[int, int] = {}
            for t in toks:
                counts[t] = counts.get(t, 0) + 1
            for t, c in counts.items():
                if t == skip_id:
                    continue
                acc.setdefault(t, ([], []))
                acc[t][0].append(ordinal)
                acc[t][1].append(c)
        doc_len = np.asarray(lens, dtype=np.int64)
        n = len(lens)
        avgdl = float(doc_len.mean()) if n else 0.0
        df = {t: len(o) for t, (o, _) in acc.items()}
        stats = Bm25Stats(n, df, doc_len, avgdl, k1, b)
        postings = {t: (np.asarray(o, dtype=np.int64), np.asarray(c, dtype=np.int64)) for t, (o, c) in acc.items()}
        return cls(list(doc_ids), stats, postings)


def _rank(acc: np.ndarray, touched: np.ndarray, doc_ids: Sequence[str], top_n: int) -> List[ScoredDoc]:
    ords = np.flatnonzero(touched)
    # score descending, ordinal ascending
    order = np.lexsort((ords, -acc[ords]))[:top_n]
    return [ScoredDoc(doc_ids[o], float(acc[o])) for o in ords[order]]


def retrieve_bm25(qf: Mapping[int, float], index: Bm25Index, top_n: int = 100) -> List[ScoredDoc]:
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    st = index.stats
    acc = np.zeros(st.num_docs, dtype=np.float64)
    touched = np.zeros(st.num_docs, dtype=bool)
    for t in sorted(qf):
        hit = index.postings.get(t)
        if hit is None:
            continue
        ords, tfs = hit
        idf = st.idf(t)
        dl = st.doc_len[ords]
        norm = st.k1 * (1.0 - st.b + st.b * dl / st.avgdl)
        acc[ords] += idf * tfs * (st.k1 + 1.0) / (tfs + norm)
        touched[ords] = True
    return _rank(acc, touched & (acc != 0), index.doc_ids, top_n)


def retrieve_exhaustive(qf: Mapping[int, float], index: ImpactIndex, top_n: int = 100) -> List[ScoredDoc]:
    """Score every document reachable from the query's posting lists."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    acc = np.zeros(index.num_docs, dtype=np.float64)
    touched = np.zeros(index.num_docs, dtype=bool)
    for t in sorted(qf):
        ords, scores = postings_for(index, t)
        if not len(ords):
            continue
        acc[ords] += qf[t] * scores.astype(np.float64)
        touched[ords] = True
    return _rank(acc, touched, index.doc_ids, top_n)


class MissingVectorError(KeyError):
    def __init__(self, doc_id):
        self.doc_id = doc_id
        super().__init__(f"no score vector for candidate document {doc_id!r}")

    def __str__(self):
        return self.args[0]


def rerank(candidates: Sequence[ScoredDoc], qf: Mapping[int, float], score_vectors: Mapping) -> List[ScoredDoc]:
    """Reorder candidates by ``score_pair``; equal scores keep incoming order."""
    rescored = []
    for c in candidates:
        try:
            sv = score_vectors[c.doc_id]
        except KeyError:
            raise MissingVectorError(c.doc_id) from None
        rescored.append(ScoredDoc(c.doc_id, score_pair(qf, sv)))
    # sorted() is stable
    return sorted(rescored, key=lambda d: -d.score)


def forward_vectors(index: ImpactIndex) -> Dict[str, SparseScoreVector]:
    """Invert an impact index back into per-document sparse vectors."""
    per_doc: List[List[tuple]] = [[] for _ in range(index.num_docs)]
    for t in sorted(index.postings):
        ords, scores = index.postings[t]
        for o, s in zip(ords.tolist(), scores.astype(np.float64).tolist()):
            per_doc[o].append((t, s))
    out = {}
    for o, pairs in enumerate(per_doc):
        ids = np.array([t for t, _ in pairs], dtype=np.int64)
        sc = np.array([s for _, s in pairs], dtype=np.float64)
        out[index.doc_ids[o]] = SparseScoreVector(ids, sc)
    return out


def estimate_flops(query_len: int, num_docs: int) -> int:
    """One multiply-accumulate per (query token, candidate document)."""
    if query_len < 0 or num_docs < 0:
        raise ValueError("query_len and num_docs must be non-negative")
    return query_len * num_docs


def flops_order(flops: int) -> int:
    """Exponent of the smallest power of ten that is >= ``flops`` (0 for 0 or 1).

    Rounds up, so 16 -> 10^2 and 1600 -> 10^4.
    """
    if flops < 0:
        raise ValueError("flops must be non-negative")
    p = 0
    while 10 ** p < flops:
        p += 1
    return p
