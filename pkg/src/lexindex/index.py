"""Impact-ordered inverted index over precomputed document score vectors.

Binary layout (all integers little-endian)::

    b"NAILIDX1"
    u32 format_version, u32 V, u32 num_docs, 32-byte vocabulary checksum,
    u16 tag_len, tag bytes (utf-8)
    num_docs x (u32 len, doc_id bytes)
    u32 num_blocks
    num_blocks x (u32 token_id, u32 count, u32[count] ordinals, f32[count] scores)

Blocks are written in ascending token id; tokens with no postings are omitted.
"""

from __future__ import annotations

import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import FormatError, IncompatibleIndexError

MAGIC = b"NAILIDX1"
FORMAT_VERSION = 1
SCORE_DTYPE = np.dtype("<f4")
ORD_DTYPE = np.dtype("<u4")


@dataclass(frozen=True)
class SparseScoreVector:
    """Sorted token ids with their retained scores."""

    ids: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        if len(self.ids) != len(self.scores):
            raise ValueError("ids and scores differ in length")

    def __len__(self):
        return len(self.ids)

    def entries(self) -> List[Tuple[int, float]]:
        return [(int(t), float(s)) for t, s in zip(self.ids, self.scores)]

    def to_dense(self, vocab_size: int) -> np.ndarray:
        out = np.zeros(vocab_size, dtype=np.float64)
        out[self.ids] = self.scores
        return out

    @classmethod
    def from_dense(cls, sv) -> "SparseScoreVector":
        sv = np.asarray(sv)
        ids = np.flatnonzero(sv)
        return cls(ids.astype(np.int64), sv[ids].copy())


def sparsify(sv, k: int) -> SparseScoreVector:
    """Keep the ``k`` largest scores; ties go to the smaller token id.

    Sign is irrelevant: a negative score is kept if it ranks in the top k.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    sv = np.asarray(sv)
    if sv.ndim != 1:
        raise ValueError("score vector must be one-dimensional")
    if not np.all(np.isfinite(sv)):
        raise ValueError("score vector contains non-finite values")
    if k >= sv.shape[0]:
        keep = np.arange(sv.shape[0])
    else:
        # lexsort: last key is primary -> descending score, then ascending id
        order = np.lexsort((np.arange(sv.shape[0]), -sv))
        keep = np.sort(order[:k])
    return SparseScoreVector(keep.astype(np.int64), sv[keep].copy())


@dataclass
class IndexMetadata:
    vocab_size: int
    num_docs: int
    vocab_checksum: bytes = b"\x00" * 32
    scorer_tag: str = ""
    format_version: int = FORMAT_VERSION


@dataclass
class ImpactIndex:
    """Token id -> (ordinals, scores) posting arrays, ordinals strictly increasing."""

    meta: IndexMetadata
    doc_ids: List[str]
    postings: Dict[int, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    @property
    def vocab_size(self) -> int:
        return self.meta.vocab_size

    @property
    def num_docs(self) -> int:
        return self.meta.num_docs

    def nnz(self) -> int:
        return sum(len(o) for o, _ in self.postings.values())

    def ordinal_of(self) -> Dict[str, int]:
        return {d: i for i, d in enumerate(self.doc_ids)}

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImpactIndex):
            return NotImplemented
        if self.meta != other.meta or self.doc_ids != other.doc_ids:
            return False
        if sorted(self.postings) != sorted(other.postings):
            return False
        for t, (o, s) in self.postings.items():
            o2, s2 = other.postings[t]
            if o.tobytes() != o2.tobytes() or s.tobytes() != s2.tobytes():
                return False
        return True

    def check_vocabulary(self, checksum: bytes) -> None:
        if checksum != self.meta.vocab_checksum:
            raise IncompatibleIndexError(
                "vocabulary checksum mismatch: index was built with a different vocabulary"
            )


def postings_for(index: ImpactIndex, t: int) -> Tuple[np.ndarray, np.ndarray]:
    if t < 0 or t >= index.vocab_size:
        raise ValueError(f"token id {t} out of range [0, {index.vocab_size})")
    hit = index.postings.get(int(t))
    if hit is None:
        return np.empty(0, dtype=ORD_DTYPE), np.empty(0, dtype=SCORE_DTYPE)
    return hit


class DocumentScoringError(RuntimeError):
    def __init__(self, doc_id, cause):
        self.doc_id = doc_id
        super().__init__(f"scorer failed on document {doc_id!r}: {cause}")


def _as_sparse(vec, vocab_size: int, k: Optional[int]) -> SparseScoreVector:
    if isinstance(vec, SparseScoreVector):
        if len(vec) and (vec.ids[-1] >= vocab_size or vec.ids[0] < 0):
            raise ValueError("token id out of range")
        if k is not None and len(vec) > k:
            dense = vec.to_dense(vocab_size)
            vec = sparsify(dense, k)
        keep = vec.scores != 0
        return SparseScoreVector(vec.ids[keep], vec.scores[keep])
    dense = np.asarray(vec, dtype=np.float64)
    if dense.shape != (vocab_size,):
        raise ValueError(f"score vector has shape {dense.shape}, expected ({vocab_size},)")
    if not np.all(np.isfinite(dense)):
        raise ValueError("score vector contains non-finite values")
    if k is not None:
        sp = sparsify(dense, k)
        keep = sp.scores != 0
        return SparseScoreVector(sp.ids[keep], sp.scores[keep])
    return SparseScoreVector.from_dense(dense)


def build_index(
    docs: Iterable,
    scorer: Callable,
    vocab_size: int,
    sparsify_k: Optional[int] = None,
    vocab_checksum: bytes = b"\x00" * 32,
    scorer_tag: str = "",
    threads: int = 1,
) -> ImpactIndex:
    """Score every document and invert the result into posting lists.

    ``scorer(doc)`` returns a dense length-V vector or a ``SparseScoreVector``.
    Zero scores are never stored. Scores are held as float32, the on-disk
    precision, so a saved index reloads bit-identically.
    """
    if sparsify_k is not None and sparsify_k < 1:
        raise ValueError("sparsify_k must be >= 1")
    docs = list(docs)

    def work(doc):
        try:
            return _as_sparse(scorer(doc), vocab_size, sparsify_k)
        except Exception as exc:
            raise DocumentScoringError(doc.doc_id, exc) from exc

    if threads > 1 and len(docs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vectors = list(pool.map(work, docs))  # map preserves ingestion order
    else:
        vectors = [work(d) for d in docs]
    return index_from_sparse([d.doc_id for d in docs], vectors, vocab_size, vocab_checksum, scorer_tag)


def index_from_sparse(doc_ids, vectors: Sequence[SparseScoreVector], vocab_size: int,
                      vocab_checksum: bytes = b"\x00" * 32, scorer_tag: str = "") -> ImpactIndex:
    doc_ids = list(doc_ids)
    if len(set(doc_ids)) != len(doc_ids):
        raise ValueError("duplicate doc ids")
    meta = IndexMetadata(vocab_size, len(doc_ids), bytes(vocab_checksum), scorer_tag)
    index = ImpactIndex(meta, doc_ids)
    if not vectors:
        return index
    lens = [len(v) for v in vectors]
    all_tok = np.concatenate([v.ids for v in vectors]).astype(np.int64)
    all_score = np.concatenate([np.asarray(v.scores, dtype=np.float64) for v in vectors]).astype(SCORE_DTYPE)
    all_ord = np.repeat(np.arange(len(vectors), dtype=np.int64), lens)
    keep = all_score != 0  # values that underflow float32 contribute nothing
    all_tok, all_score, all_ord = all_tok[keep], all_score[keep], all_ord[keep]
    # stable sort by token keeps ordinals ascending within each token
    order = np.argsort(all_tok, kind="stable")
    all_tok, all_score, all_ord = all_tok[order], all_score[order], all_ord[order]
    bounds = np.flatnonzero(np.diff(all_tok)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [len(all_tok)]])
    for s, e in zip(starts, ends):
        if s == e:
            continue
        index.postings[int(all_tok[s])] = (all_ord[s:e].astype(ORD_DTYPE), all_score[s:e].copy())
    return index


def save_index(index: ImpactIndex, path) -> None:
    m = index.meta
    tag = m.scorer_tag.encode("utf-8")
    if len(m.vocab_checksum) != 32:
        raise ValueError("vocabulary checksum must be 32 bytes")
    parts = [MAGIC, struct.pack("<III", m.format_version, m.vocab_size, m.num_docs), m.vocab_checksum,
             struct.pack("<H", len(tag)), tag]
    for d in index.doc_ids:
        b = d.encode("utf-8")
        parts.append(struct.pack("<I", len(b)))
        parts.append(b)
    tokens = sorted(index.postings)
    parts.append(struct.pack("<I", len(tokens)))
    for t in tokens:
        o, s = index.postings[t]
        parts.append(struct.pack("<II", t, len(o)))
        parts.append(np.asarray(o, dtype=ORD_DTYPE).tobytes())
        parts.append(np.asarray(s, dtype=SCORE_DTYPE).tobytes())
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.writelines(parts)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("truncated index file", path=self.path)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_index(path, expected_checksum: Optional[bytes] = None) -> ImpactIndex:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError("not an index file (bad magic bytes)", path=path)
    version, V, n = r.unpack("<III")
    if version != FORMAT_VERSION:
        raise IncompatibleIndexError(f"unsupported index format version {version}", path=path)
    checksum = r.take(32)
    if expected_checksum is not None and checksum != expected_checksum:
        raise IncompatibleIndexError("vocabulary checksum mismatch", path=path)
    (tag_len,) = r.unpack("<H")
    tag = r.take(tag_len).decode("utf-8")
    doc_ids = []
    for _ in range(n):
        (ln,) = r.unpack("<I")
        doc_ids.append(r.take(ln).decode("utf-8"))
    index = ImpactIndex(IndexMetadata(V, n, checksum, tag, version), doc_ids)
    (nblocks,) = r.unpack("<I")
    prev = -1
    for _ in range(nblocks):
        t, cnt = r.unpack("<II")
        if t <= prev or t >= V:
            raise FormatError(f"posting block for token {t} out of order or range", path=path)
        prev = t
        o = np.frombuffer(r.take(4 * cnt), dtype=ORD_DTYPE).copy()
        s = np.frombuffer(r.take(4 * cnt), dtype=SCORE_DTYPE).copy()
        if cnt and (o[-1] >= n or np.any(np.diff(o.astype(np.int64)) <= 0)):
            raise FormatError(f"posting list for token {t} is not strictly ordered", path=path)
        index.postings[t] = (o, s)
    if r.pos != len(r.buf):
        raise FormatError("trailing bytes after index data", path=path)
    return index


def write_vectors(path, items: Iterable[Tuple[str, SparseScoreVector]]) -> None:
    """NDJSON interchange: ``{"id": ..., "entries": [[token_id, score], ...]}``."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc_id, sv in items:
            fh.write(json.dumps({"id": doc_id, "entries": [[t, s] for t, s in sv.entries()]}) + "\n")


def read_vectors(path, vocab_size: Optional[int] = None) -> Iterator[Tuple[str, SparseScoreVector]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pairs = sorted((int(t), float(s)) for t, s in rec["entries"])
                doc_id = str(rec["id"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"bad vector record ({exc})", path=path, line=lineno) from None
            ids = np.array([t for t, _ in pairs], dtype=np.int64)
            scores = np.array([s for _, s in pairs], dtype=np.float64)
            if len(ids) and (np.any(np.diff(ids) <= 0) or ids[0] < 0
                             or (vocab_size is not None and ids[-1] >= vocab_size)):
                raise FormatError("token ids must be unique and within the vocabulary", path=path, line=lineno)
            if not np.all(np.isfinite(scores)):
                raise FormatError("non-finite score", path=path, line=lineno)
            yield doc_id, SparseScoreVector(ids, scores)
