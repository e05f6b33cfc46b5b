"""Definitional metric oracles kept independent of lexindex.metrics."""

import itertools
import math


def dcg(grades, k):
    return sum((2 ** g - 1) / math.log2(rank + 1) for rank, g in zip(range(1, k + 1), grades))


def ndcg_oracle(ranked, judgments, k):
    got = dcg([judgments.get(d, 0) for d in ranked], k)
    relevant = [g for g in judgments.values() if g > 0]
    # ideal = best DCG over every ordering of the judged-relevant documents
    best = 0.0
    for perm in itertools.permutations(relevant):
        best = max(best, dcg(list(perm), k))
    return got / best if best > 0 else 0.0


def recall_oracle(ranked, judgments, k):
    relevant = [d for d, g in judgments.items() if g > 0]
    if not relevant:
        return 0.0
    found = 0
    for d in relevant:
        for pos, r in enumerate(ranked, 1):
            if r == d and pos <= k:
                found += 1
    return found / len(relevant)


def mrr_oracle(ranked, judgments, k):
    pos = 1
    for d in ranked:
        if pos > k:
            break
        if judgments.get(d, 0) > 0:
            return 1 / pos
        pos += 1
    return 0.0


def random_instance(rng, max_docs=20, max_queries=5, max_relevant=6):
    """(run dict qid -> ranked doc ids, qrels dict (qid, did) -> grade)."""
    n_docs = int(rng.integers(1, max_docs + 1))
    docs = [f"d{i}" for i in range(n_docs)]
    run, qrels = {}, {}
    for q in range(int(rng.integers(1, max_queries + 1))):
        qid = f"q{q}"
        ranked = [docs[i] for i in rng.permutation(n_docs)[:int(rng.integers(0, n_docs + 1))]]
        run[qid] = ranked
        judged = rng.permutation(n_docs)[:int(rng.integers(0, n_docs + 1))]
        n_rel = 0
        for i in judged:
            g = int(rng.integers(0, 4))
            if g > 0:
                if n_rel >= max_relevant:
                    g = 0
                n_rel += g > 0
            qrels[(qid, docs[i])] = g
    return run, qrels
