"""Synthetic token-overlap retrieval task for end-to-end training checks.

Every query is a 3-5 token subset of its gold document, so a model that
learns to score a document's own tokens highly can retrieve it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .corpus import Document, Qrels, QueryRecord
from .data import CandidateExample, Passage
from .scoring import Bm25Index, retrieve_bm25
from .vocab import Vocabulary, feature_from_ids, tokenize


@dataclass
class OverlapTask:
    vocab: Vocabulary
    docs: List[Document]
    doc_tokens: Dict[str, tuple]
    train_queries: List[QueryRecord]
    test_queries: List[QueryRecord]
    qrels: Qrels
    bm25: Bm25Index

    def passage(self, doc_id: str) -> Passage:
        return Passage(doc_id, self.doc_tokens[doc_id])

    def candidate_examples(self, queries, depth: int = 100) -> List[CandidateExample]:
        """Gold passage plus BM25 top-``depth`` candidates (gold removed) per query."""
        gold = {qid: did for (qid, did), g in self.qrels.items() if g > 0}
        out = []
        for q in queries:
            ids = tokenize(q.text, self.vocab).ids
            hits = retrieve_bm25(feature_from_ids(ids, self.vocab), self.bm25, depth + 1)
            cands = tuple((self.passage(h.doc_id), h.score) for h in hits if h.doc_id != gold[q.query_id])
            out.append(CandidateExample(ids, self.passage(gold[q.query_id]), cands[:depth]))
        return out


def synthetic_vocabulary(size: int) -> Vocabulary:
    width = len(str(size - 1))
    return Vocabulary.from_tokens(["<unk>"] + [f"w{i:0{width}d}" for i in range(1, size)])


def make_overlap_task(vocab_size: int = 200, num_docs: int = 500, doc_len: Tuple[int, int] = (5, 5),
                      query_len: Tuple[int, int] = (3, 5), train_per_doc: int = 8, test_per_doc: int = 1,
                      seed: int = 0) -> OverlapTask:
    rng = np.random.default_rng(seed)
    vocab = synthetic_vocabulary(vocab_size)
    docs, doc_tokens = [], {}
    for i in range(num_docs):
        n = int(rng.integers(doc_len[0], doc_len[1] + 1))
        ids = tuple(sorted(rng.choice(np.arange(1, vocab_size), size=n, replace=False).tolist()))
        did = f"d{i}"
        docs.append(Document(did, " ".join(vocab.tokens[t] for t in ids)))
        doc_tokens[did] = ids
    qrels = Qrels()
    train_q, test_q = [], []
    for d in docs:
        toks = doc_tokens[d.doc_id]
        for j in range(train_per_doc + test_per_doc):
            k = int(rng.integers(query_len[0], query_len[1] + 1))
            picked = rng.choice(toks, size=min(k, len(toks)), replace=False)
            qid = f"{d.doc_id}q{j}"
            rec = QueryRecord(qid, " ".join(vocab.tokens[t] for t in picked))
            (train_q if j < train_per_doc else test_q).append(rec)
            qrels[(qid, d.doc_id)] = 1
    bm25 = Bm25Index.build([d.doc_id for d in docs], [doc_tokens[d.doc_id] for d in docs], skip_id=vocab.unk_id)
    return OverlapTask(vocab, docs, doc_tokens, train_q, test_q, qrels, bm25)
