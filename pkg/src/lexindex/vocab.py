"""Fixed retrieval vocabulary and a deterministic greedy tokenizer."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

from .errors import FormatError


@dataclass(frozen=True)
class Vocabulary:
    """Immutable token <-> id mapping. Line order defines ids; id 0 is UNK."""

    tokens: tuple
    id_of: Dict[str, int] = field(repr=False, compare=False)
    unk_id: int = 0
    max_token_len: int = field(default=0, repr=False, compare=False)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Vocabulary":
        if not tokens:
            raise FormatError("vocabulary is empty")
        id_of: Dict[str, int] = {}
        for i, tok in enumerate(tokens):
            if tok in id_of:
                raise FormatError(f"duplicate token {tok!r}", line=i + 1)
            id_of[tok] = i
        longest = max((len(t) for t in tokens[1:]), default=0)
        return cls(tuple(tokens), id_of, 0, longest)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def unk_token(self) -> str:
        return self.tokens[self.unk_id]

    def checksum(self) -> bytes:
        """SHA-256 over the newline-joined token list (32 bytes)."""
        h = hashlib.sha256()
        h.update("\n".join(self.tokens).encode("utf-8"))
        return h.digest()


def load_vocabulary(path) -> Vocabulary:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError("vocabulary file is empty", path=path)
    try:
        return Vocabulary.from_tokens(lines)
    except FormatError as exc:
        msg = str(exc).split(": ", 1)[-1]
        raise FormatError(msg, path=path, line=exc.line) from None


def save_vocabulary(vocab: Vocabulary, path) -> None:
    Path(path).write_text("".join(t + "\n" for t in vocab.tokens), encoding="utf-8")


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple
    source_len: int

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


def _segment_word(word: str, vocab: Vocabulary, out: List[int]) -> None:
    # Greedy longest-prefix match; unmatched single characters become UNK.
    # The UNK string itself is never matched.
    id_of = vocab.id_of
    unk = vocab.unk_id
    unk_tok = vocab.unk_token
    n = len(word)
    pos = 0
    max_len = vocab.max_token_len
    while pos < n:
        end = min(n, pos + max_len)
        while end > pos:
            piece = word[pos:end]
            tid = id_of.get(piece)
            if tid is not None and piece != unk_tok:
                out.append(tid)
                pos = end
                break
            end -= 1
        else:
            out.append(unk)
            pos += 1


def tokenize(text: str, vocab: Vocabulary) -> TokenSequence:
    """Lowercase, split on whitespace, then greedy longest-prefix match per word."""
    ids: List[int] = []
    for word in text.lower().split():
        _segment_word(word, vocab, ids)
    return TokenSequence(tuple(ids), len(text))


class QueryFeature(dict):
    """Sparse query weights: token id -> positive weight."""

    def total(self) -> float:
        return float(sum(self.values()))


def feature_from_ids(ids, vocab: Vocabulary, binary: bool = False) -> QueryFeature:
    qf = QueryFeature()
    unk = vocab.unk_id
    for t in ids:
        if t == unk:
            continue
        qf[t] = 1 if binary else qf.get(t, 0) + 1
    return qf


def featurize_query(q: str, vocab: Vocabulary, binary: bool = False) -> QueryFeature:
    """Count of each non-UNK token in ``tokenize(q)``.

    With ``binary=True`` every present token gets weight 1 instead.
    """
    return feature_from_ids(tokenize(q, vocab).ids, vocab, binary=binary)
