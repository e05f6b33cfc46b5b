"""Training pair generation and contrastive batch assembly."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .model import PreparedBatch

MAX_RESAMPLE_TRIES = 100


@dataclass(frozen=True)
class Passage:
    """A tokenized passage. ``key`` identifies it for in-batch de-duplication."""

    key: str
    tokens: tuple


@dataclass(frozen=True)
class TrainingExample:
    query: tuple
    positive: Passage
    negatives: tuple = ()

    def __post_init__(self):
        if any(n.key == self.positive.key for n in self.negatives):
            raise ValueError("hard negative duplicates the positive passage")


@dataclass(frozen=True)
class CandidateExample:
    """A query, its gold passage, and scored retrieval candidates to draw negatives from."""

    query: tuple
    positive: Passage
    candidates: tuple = ()  # ((Passage, score), ...)


@dataclass
class TrainingBatch:
    examples: List[TrainingExample] = field(default_factory=list)

    @property
    def total_passages(self) -> int:
        return sum(1 + len(e.negatives) for e in self.examples)

    def passages(self) -> List[Passage]:
        out = []
        for e in self.examples:
            out.append(e.positive)
            out.extend(e.negatives)
        return out

    def prepare(self, vocab_size: int, unk_id: Optional[int] = 0, binary: bool = False) -> PreparedBatch:
        """Query weight matrix (UNK dropped), passage token lists and positive columns."""
        m = len(self.examples)
        Q = np.zeros((m, vocab_size))
        positive = np.zeros(m, dtype=np.int64)
        passages = []
        col = 0
        for i, e in enumerate(self.examples):
            for t in e.query:
                if t == unk_id:
                    continue
                Q[i, t] = 1.0 if binary else Q[i, t] + 1.0
            positive[i] = col
            passages.append(list(e.positive.tokens))
            passages.extend(list(n.tokens) for n in e.negatives)
            col += 1 + len(e.negatives)
        return PreparedBatch(Q, passages, positive)


def make_inverse_cloze(tokens: Sequence, rng: np.random.Generator) -> Optional[Tuple[list, list]]:
    """Cut a contiguous span out as the pseudo-query; the remainder is the pseudo-passage.

    Span length is uniform in [1, len // 2], start uniform over valid offsets.
    Returns None for passages shorter than two tokens.
    """
    n = len(tokens)
    if n < 2:
        return None
    length = int(rng.integers(1, n // 2 + 1))
    start = int(rng.integers(0, n - length + 1))
    return cloze_split(tokens, start, length)


def cloze_split(tokens: Sequence, start: int, length: int) -> Tuple[list, list]:
    toks = list(tokens)
    return toks[start:start + length], toks[:start] + toks[start + length:]


def sample_span(n: int, rng: np.random.Generator) -> Tuple[int, int]:
    """Uniform length in [1, n], then uniform start among positions where it fits."""
    length = int(rng.integers(1, n + 1))
    start = int(rng.integers(0, n - length + 1))
    return start, length


def make_independent_crop(tokens: Sequence, rng: np.random.Generator) -> Tuple[list, list]:
    """Two independently drawn contiguous spans; they may overlap."""
    n = len(tokens)
    if n < 1:
        raise ValueError("cannot crop an empty passage")
    toks = list(tokens)
    s1, l1 = sample_span(n, rng)
    s2, l2 = sample_span(n, rng)
    return toks[s1:s1 + l1], toks[s2:s2 + l2]


def sample_hard_negatives(candidates: Sequence[Tuple[object, float]], count: int,
                          rng: np.random.Generator, temperature: float = 1.0) -> list:
    """Draw ``count`` candidates without replacement, P(pick) proportional to softmax(score / T).

    Uses Gumbel-top-k, which is distributed exactly like sequential draws
    renormalized after each pick.
    """
    if count > len(candidates):
        raise ValueError(f"asked for {count} negatives from {len(candidates)} candidates")
    if count <= 0:
        return []
    scores = np.array([float(s) for _, s in candidates]) / temperature
    keys = scores + rng.gumbel(size=len(candidates))
    order = np.argsort(-keys, kind="stable")[:count]
    return [candidates[i][0] for i in order]


def assemble_batches(examples: Sequence[CandidateExample], negatives_per_example: int,
                     total_passages: int, rng: np.random.Generator) -> Iterator[TrainingBatch]:
    """One pass over ``examples`` in shuffled order, packed into contrastive batches.

    Each batch holds ``total_passages // (negatives_per_example + 1)`` queries.
    Passages are unique per batch: colliding negatives are resampled (up to
    100 tries, then the example is dropped); an example whose positive is
    already present waits for a later batch. The last batch may be short.
    """
    if negatives_per_example < 0:
        raise ValueError("negatives_per_example must be >= 0")
    if total_passages < negatives_per_example + 1:
        raise ValueError("total_passages must be at least negatives_per_example + 1")
    per_batch = total_passages // (negatives_per_example + 1)
    queue = deque(examples[i] for i in rng.permutation(len(examples)))
    while queue:
        batch = TrainingBatch()
        used = set()
        waiting = deque()
        while queue and len(batch.examples) < per_batch:
            ex = queue.popleft()
            if ex.positive.key in used:
                waiting.append(ex)
                continue
            pool = [(p, s) for p, s in ex.candidates if p.key != ex.positive.key]
            if len(pool) < negatives_per_example:
                continue
            negs = None
            for _ in range(MAX_RESAMPLE_TRIES):
                draw = sample_hard_negatives(pool, negatives_per_example, rng)
                if not any(p.key in used for p in draw):
                    negs = draw
                    break
            if negs is None:
                continue
            batch.examples.append(TrainingExample(ex.query, ex.positive, tuple(negs)))
            used.add(ex.positive.key)
            used.update(p.key for p in negs)
        queue = waiting + queue
        if batch.examples:
            yield batch
        elif not queue:
            break


def pretraining_examples(passages: Sequence[Passage], rng: np.random.Generator) -> List[TrainingExample]:
    """Self-supervised pairs: alternate inverse-cloze and independent-crop examples.

    Passages too short for inverse cloze fall back to cropping.
    """
    out = []
    for i, p in enumerate(passages):
        if not p.tokens:
            continue
        pair = make_inverse_cloze(p.tokens, rng) if i % 2 == 0 else None
        kind = "ict"
        if pair is None:
            pair = make_independent_crop(p.tokens, rng)
            kind = "crop"
        query, target = pair
        out.append(TrainingExample(tuple(query), Passage(f"{p.key}#{kind}", tuple(target))))
    return out


def pretraining_batches(passages: Sequence[Passage], total_passages: int,
                        rng: np.random.Generator) -> Iterator[TrainingBatch]:
    """Batches of ``total_passages`` self-supervised pairs, half from each task."""
    order = rng.permutation(len(passages))
    shuffled = [passages[i] for i in order]
    examples = pretraining_examples(shuffled, rng)
    for s in range(0, len(examples), total_passages):
        yield TrainingBatch(examples[s:s + total_passages])
