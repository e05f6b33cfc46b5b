"""Corpus, query, qrels and run-file I/O."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Tuple

from .errors import FormatError


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    text: str


@dataclass(frozen=True)
class RunEntry:
    query_id: str
    doc_id: str
    rank: int
    score: float
    tag: str = ""


class Qrels(dict):
    """(query_id, doc_id) -> grade. Missing pairs have grade 0."""

    def grade(self, query_id: str, doc_id: str) -> int:
        return self.get((query_id, doc_id), 0)

    def for_query(self, query_id: str) -> Dict[str, int]:
        return self.by_query().get(query_id, {})

    def by_query(self) -> Dict[str, Dict[str, int]]:
        out: Dict[str, Dict[str, int]] = defaultdict(dict)
        for (qid, did), g in self.items():
            out[qid][did] = g
        return dict(out)


def load_corpus(path) -> Iterator[Document]:
    """Stream documents from an NDJSON file with ``id`` and ``text`` fields."""
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                doc_id, text = rec["id"], rec["text"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"bad corpus record ({exc})", path=path, line=lineno) from None
            doc_id = str(doc_id)
            if not isinstance(text, str):
                raise FormatError("field 'text' must be a string", path=path, line=lineno)
            if doc_id in seen:
                raise FormatError(f"duplicate document id {doc_id!r}", path=path, line=lineno)
            seen.add(doc_id)
            yield Document(doc_id, text)


def write_corpus(docs: Iterable[Document], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in docs:
            fh.write(json.dumps({"id": d.doc_id, "text": d.text}, ensure_ascii=False) + "\n")


def load_queries(path) -> List[QueryRecord]:
    out: List[QueryRecord] = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            if "\t" not in line:
                raise FormatError("expected 'query_id<TAB>text'", path=path, line=lineno)
            qid, text = line.split("\t", 1)
            if qid in seen:
                raise FormatError(f"duplicate query id {qid!r}", path=path, line=lineno)
            seen.add(qid)
            out.append(QueryRecord(qid, text))
    return out


def write_queries(queries: Iterable[QueryRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for q in queries:
            fh.write(f"{q.query_id}\t{q.text}\n")


def load_qrels(path) -> Qrels:
    qrels = Qrels()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise FormatError("expected 4 columns: qid 0 docid grade", path=path, line=lineno)
            qid, _, did, grade = parts
            try:
                g = int(grade)
            except ValueError:
                raise FormatError(f"non-integer grade {grade!r}", path=path, line=lineno) from None
            if g < 0:
                raise FormatError(f"negative grade {g}", path=path, line=lineno)
            qrels[(qid, did)] = g
    return qrels


def write_qrels(qrels: Qrels, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (qid, did), g in qrels.items():
            fh.write(f"{qid} 0 {did} {g}\n")


def validate_run(entries: List[RunEntry]) -> None:
    by_q: Dict[str, List[RunEntry]] = defaultdict(list)
    for e in entries:
        if not math.isfinite(e.score):
            raise ValueError(f"non-finite score for {e.query_id}/{e.doc_id}")
        by_q[e.query_id].append(e)
    for qid, rows in by_q.items():
        rows = sorted(rows, key=lambda e: e.rank)
        for expected, e in enumerate(rows, 1):
            if e.rank != expected:
                raise ValueError(f"query {qid}: ranks must be 1..n without gaps (found {e.rank}, expected {expected})")
        for prev, cur in zip(rows, rows[1:]):
            if cur.score > prev.score:
                raise ValueError(f"query {qid}: score increases from rank {prev.rank} to {cur.rank}")


def write_run(entries: Iterable[RunEntry], path, tag: str | None = None) -> None:
    """Write a 6-column TREC run. Validates every entry before touching ``path``."""
    entries = list(entries)
    validate_run(entries)
    lines = []
    for e in entries:
        t = tag if tag is not None else e.tag
        lines.append(f"{e.query_id} Q0 {e.doc_id} {e.rank} {e.score:.6f} {t}\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)


def load_run(path) -> List[RunEntry]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise FormatError("expected 6 columns: qid Q0 docid rank score tag", path=path, line=lineno)
            qid, _, did, rank, score, tag = parts
            try:
                out.append(RunEntry(qid, did, int(rank), float(score), tag))
            except ValueError as exc:
                raise FormatError(str(exc), path=path, line=lineno) from None
    return out


def group_run(entries: Iterable[RunEntry]) -> Dict[str, List[RunEntry]]:
    """Group by query (first-appearance order), each list sorted by rank."""
    out: Dict[str, List[RunEntry]] = {}
    for e in entries:
        out.setdefault(e.query_id, []).append(e)
    for rows in out.values():
        rows.sort(key=lambda e: e.rank)
    return out


def ranking_to_entries(query_id: str, ranked: Iterable[Tuple[str, float]], tag: str) -> List[RunEntry]:
    return [RunEntry(query_id, did, i, float(s), tag) for i, (did, s) in enumerate(ranked, 1)]
