"""Ranking metrics, run evaluation and sparsification sweeps."""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from .corpus import Qrels, RunEntry, group_run
from .index import index_from_sparse, sparsify
from .scoring import retrieve_exhaustive

log = logging.getLogger(__name__)


def ndcg_at_k(ranked: Sequence[str], judgments: Mapping[str, int], k: int) -> float:
    """nDCG@k with exponential gain; the ideal ranking uses every judged doc."""
    if k < 1:
        raise ValueError("k must be >= 1")
    dcg = 0.0
    for i, did in enumerate(ranked[:k]):
        rel = judgments.get(did, 0)
        if rel > 0:
            dcg += (2.0 ** rel - 1.0) / math.log2(i + 2)
    ideal = sorted((g for g in judgments.values() if g > 0), reverse=True)[:k]
    idcg = sum((2.0 ** g - 1.0) / math.log2(i + 2) for i, g in enumerate(ideal))
    return dcg / idcg if idcg > 0 else 0.0


def recall_at_k(ranked: Sequence[str], judgments: Mapping[str, int], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = {d for d, g in judgments.items() if g > 0}
    if not relevant:
        return 0.0
    return len(relevant.intersection(ranked[:k])) / len(relevant)


def mrr_at_k(ranked: Sequence[str], judgments: Mapping[str, int], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    for i, did in enumerate(ranked[:k]):
        if judgments.get(did, 0) > 0:
            return 1.0 / (i + 1)
    return 0.0


METRICS = {"ndcg": ndcg_at_k, "recall": recall_at_k, "mrr": mrr_at_k}
DEFAULT_METRICS = ("ndcg@10", "recall@100", "recall@1000", "mrr@10")


def parse_metric(spec: str) -> Tuple[str, int]:
    m = re.fullmatch(r"(ndcg|recall|mrr)@(\d+)", spec.strip().lower())
    if not m or int(m.group(2)) < 1:
        raise ValueError(f"unknown metric {spec!r} (expected ndcg@k, recall@k or mrr@k)")
    return m.group(1), int(m.group(2))


@dataclass
class MetricReport:
    per_query: Dict[str, Dict[str, float]] = field(default_factory=dict)
    aggregate: Dict[str, float] = field(default_factory=dict)
    metrics: Tuple[str, ...] = ()

    @property
    def num_queries(self) -> int:
        return len(self.per_query)

    def write_csv(self, path) -> None:
        """Rows ``query_id,metric,value``; aggregate rows use query_id ``all``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["query_id", "metric", "value"])
            for qid in sorted(self.per_query):
                for m in self.metrics:
                    w.writerow([qid, m, f"{self.per_query[qid][m]:.6f}"])
            for m in self.metrics:
                w.writerow(["all", m, f"{self.aggregate[m]:.6f}"])


def evaluate_run(run: Iterable[RunEntry], qrels: Qrels, metrics: Sequence[str] = DEFAULT_METRICS) -> MetricReport:
    """Score every judged query; unjudged queries in the run are skipped with a warning."""
    parsed = [(m, *parse_metric(m)) for m in metrics]
    grouped = group_run(run)
    judged = qrels.by_query()
    for qid in grouped:
        if qid not in judged:
            log.warning("query %s appears in the run but has no judgments; ignored", qid)
    report = MetricReport(metrics=tuple(metrics))
    for qid in sorted(judged):
        ranked = [e.doc_id for e in grouped.get(qid, [])]
        report.per_query[qid] = {name: METRICS[kind](ranked, judged[qid], k) for name, kind, k in parsed}
    n = report.num_queries
    for name, _, _ in parsed:
        report.aggregate[name] = (sum(v[name] for v in report.per_query.values()) / n) if n else 0.0
    return report


def sparsification_sweep(doc_ids: Sequence[str], vectors, queries: Mapping[str, Mapping[int, float]],
                         qrels: Qrels, k_values: Sequence[int], depth: int = 100) -> List[Tuple[int, float]]:
    """Mean recall@depth of exhaustive retrieval after top-k sparsification, per k.

    ``vectors`` is an (n_docs, V) array of dense score vectors. The full
    vocabulary size is always evaluated as the dense reference.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    V = vectors.shape[1]
    ks = sorted(set(int(k) for k in k_values) | {V})
    if ks[0] < 1:
        raise ValueError("k values must be positive")
    judged = qrels.by_query()
    out = []
    for k in ks:
        kk = min(k, V)
        index = index_from_sparse(doc_ids, [sparsify(v, kk) for v in vectors], V)
        recalls = []
        for qid in sorted(judged):
            qf = queries.get(qid, {})
            ranked = [d.doc_id for d in retrieve_exhaustive(qf, index, depth)] if qf else []
            recalls.append(recall_at_k(ranked, judged[qid], depth))
        out.append((k, float(np.mean(recalls)) if recalls else 0.0))
    return out


def write_sweep(rows: Sequence[Tuple[int, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "recall_at_100"])
        for k, r in rows:
            w.writerow([k, f"{r:.6f}"])
