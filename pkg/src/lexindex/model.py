"""Desk-scale non-autoregressive document indexer.

A document is mean-pooled into one embedding, decoded at ``P`` positions in
parallel (each position sees only the document encoding and its own position
embedding), and the per-position vocabulary logits are max-pooled into one
score per token.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Sequence

import numpy as np

from .errors import FormatError, IncompatibleIndexError, TrainingHalted

CKPT_MAGIC = b"NAILMDL1"
CKPT_VERSION = 1
ARRAY_NAMES = ("E", "P_emb", "W", "c", "U", "u0")


@dataclass
class ModelParams:
    E: np.ndarray      # (V, h) token embeddings
    P_emb: np.ndarray  # (P, h) decode position embeddings
    W: np.ndarray      # (h, 2h) fusion of [doc encoding; position]
    c: np.ndarray      # (h,)
    U: np.ndarray      # (V, h) output projection
    u0: np.ndarray     # (V,)

    @property
    def vocab_size(self) -> int:
        return self.E.shape[0]

    @property
    def hidden(self) -> int:
        return self.E.shape[1]

    @property
    def positions(self) -> int:
        return self.P_emb.shape[0]

    def arrays(self) -> Dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def validate(self) -> None:
        V, h, P = self.vocab_size, self.hidden, self.positions
        want = {"E": (V, h), "P_emb": (P, h), "W": (h, 2 * h), "c": (h,), "U": (V, h), "u0": (V,)}
        for name, arr in self.arrays().items():
            if arr.shape != want[name]:
                raise ValueError(f"{name} has shape {arr.shape}, expected {want[name]}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.arrays().items()})

    def as_float32(self) -> "ModelParams":
        """Round every array to float32 precision (still stored as float64)."""
        return ModelParams(**{k: v.astype(np.float32).astype(np.float64) for k, v in self.arrays().items()})

    def bit_equal(self, other: "ModelParams") -> bool:
        return all(a.shape == b.shape and a.tobytes() == b.tobytes()
                   for a, b in zip(self.arrays().values(), other.arrays().values()))


def init_params(vocab_size: int, hidden: int, positions: int, rng: np.random.Generator,
                scale: float = 0.05) -> ModelParams:
    """Uniform(-scale, scale) weights and zero biases."""
    def u(*shape):
        return rng.uniform(-scale, scale, size=shape)

    p = ModelParams(
        E=u(vocab_size, hidden),
        P_emb=u(positions, hidden),
        W=u(hidden, 2 * hidden),
        c=np.zeros(hidden),
        U=u(vocab_size, hidden),
        u0=np.zeros(vocab_size),
    )
    return p.as_float32()


def zeros_like(params: ModelParams) -> ModelParams:
    return ModelParams(**{k: np.zeros_like(v) for k, v in params.arrays().items()})


def _mean_embed(docs: Sequence[Sequence[int]], E: np.ndarray) -> np.ndarray:
    enc = np.zeros((len(docs), E.shape[1]))
    for i, toks in enumerate(docs):
        if len(toks):
            enc[i] = E[np.asarray(toks, dtype=np.int64)].mean(axis=0)
    return enc


def _forward(docs: Sequence[Sequence[int]], params: ModelParams):
    enc = _mean_embed(docs, params.E)                                    # (n, h)
    n, P = len(docs), params.positions
    X = np.concatenate([np.repeat(enc[:, None, :], P, axis=1),
                        np.broadcast_to(params.P_emb, (n, P, params.hidden))], axis=2)  # (n, P, 2h)
    H = np.tanh(X @ params.W.T + params.c)                              # (n, P, h)
    logits = H @ params.U.T + params.u0                                  # (n, P, V)
    arg = logits.argmax(axis=1)                                          # first max on ties
    scores = np.take_along_axis(logits, arg[:, None, :], axis=1)[:, 0, :]
    return scores, (X, H, logits, arg)


def encode_document(doc_tokens: Sequence[int], params: ModelParams) -> np.ndarray:
    """Length-V score vector for one tokenized document."""
    return _forward([list(doc_tokens)], params)[0][0]


def encode_documents(docs: Sequence[Sequence[int]], params: ModelParams) -> np.ndarray:
    if not len(docs):
        return np.zeros((0, params.vocab_size))
    return _forward(docs, params)[0]


def position_logits(doc_tokens: Sequence[int], params: ModelParams) -> np.ndarray:
    """(P, V) per-position logits before max pooling."""
    return _forward([list(doc_tokens)], params)[1][2][0]


@dataclass
class PreparedBatch:
    """Array view of a training batch.

    ``queries`` is an (m, V) weight matrix, ``passages`` holds the token ids of
    the n distinct batch passages, ``positive[i]`` is the column of query i's
    positive passage.
    """

    queries: np.ndarray
    passages: list
    positive: np.ndarray


def batch_scores(batch: PreparedBatch, params: ModelParams) -> np.ndarray:
    """(m, n) matrix of query-passage inner products; each passage encoded once."""
    D = encode_documents(batch.passages, params)
    return batch.queries @ D.T


def _logsumexp_rows(S: np.ndarray) -> np.ndarray:
    mx = S.max(axis=1, keepdims=True)
    return (mx + np.log(np.exp(S - mx).sum(axis=1, keepdims=True)))[:, 0]


def per_example_loss(S: np.ndarray, positive: np.ndarray) -> np.ndarray:
    """Negative log-likelihood of each query's positive under an in-batch softmax."""
    if S.shape[0] == 0:
        return np.zeros(0)
    return _logsumexp_rows(S) - S[np.arange(S.shape[0]), positive]


def contrastive_loss(batch: PreparedBatch, params: ModelParams) -> float:
    return float(per_example_loss(batch_scores(batch, params), batch.positive).sum())


def loss_and_gradient(batch: PreparedBatch, params: ModelParams):
    """Summed batch loss and its gradient with respect to every parameter."""
    Q = batch.queries
    m = Q.shape[0]
    grads = zeros_like(params)
    if m == 0 or not batch.passages:
        return 0.0, grads
    D, (X, H, logits, arg) = _forward(batch.passages, params)
    S = Q @ D.T
    loss = float(per_example_loss(S, batch.positive).sum())

    mx = S.max(axis=1, keepdims=True)
    G = np.exp(S - mx)
    G /= G.sum(axis=1, keepdims=True)
    G[np.arange(m), batch.positive] -= 1.0                     # dL/dS
    dD = G.T @ Q                                                # (n, V)

    n, P, V = logits.shape
    h = params.hidden
    dlogits = np.zeros_like(logits)
    # max-pool routes each token's gradient to its argmax position only
    np.put_along_axis(dlogits, arg[:, None, :], dD[:, None, :], axis=1)

    grads.u0 = dD.sum(axis=0)
    grads.U = np.einsum("npv,nph->vh", dlogits, H)
    dZ = (dlogits @ params.U) * (1.0 - H * H)                   # (n, P, h)
    grads.W = np.einsum("nph,npk->hk", dZ, X)
    grads.c = dZ.sum(axis=(0, 1))
    dX = dZ @ params.W                                          # (n, P, 2h)
    denc = dX[:, :, :h].sum(axis=1)
    grads.P_emb = dX[:, :, h:].sum(axis=0)
    dE = np.zeros_like(params.E)
    for j, toks in enumerate(batch.passages):
        if len(toks):
            toks = np.asarray(toks, dtype=np.int64)
            np.add.at(dE, toks, denc[j] / len(toks))
    grads.E = dE
    return loss, grads


def loss_gradient(batch: PreparedBatch, params: ModelParams) -> ModelParams:
    return loss_and_gradient(batch, params)[1]


def sgd_step(params: ModelParams, grads: ModelParams, lr: float) -> ModelParams:
    """Return ``params - lr * grads``. Refuses non-finite gradients."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    for name, g in grads.arrays().items():
        if not np.all(np.isfinite(g)):
            raise TrainingHalted(f"non-finite gradient in {name}")
    return ModelParams(**{k: v - lr * getattr(grads, k) for k, v in params.arrays().items()})


def save_checkpoint(params: ModelParams, path, seed: int = 0, stage: str = "") -> None:
    """Versioned binary checkpoint; arrays stored as little-endian float32."""
    params.validate()
    tag = stage.encode("utf-8")
    parts = [CKPT_MAGIC,
             struct.pack("<IIIIQ", CKPT_VERSION, params.vocab_size, params.hidden, params.positions, seed),
             struct.pack("<H", len(tag)), tag]
    for name in ARRAY_NAMES:
        parts.append(np.ascontiguousarray(getattr(params, name), dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path):
    """Return ``(params, meta)`` where meta holds V, h, P, seed and stage."""
    buf = Path(path).read_bytes()
    if buf[:8] != CKPT_MAGIC:
        raise FormatError("not a model checkpoint (bad magic bytes)", path=path)
    head = struct.calcsize("<IIIIQ")
    if len(buf) < 8 + head + 2:
        raise FormatError("truncated checkpoint", path=path)
    version, V, h, P, seed = struct.unpack_from("<IIIIQ", buf, 8)
    if version != CKPT_VERSION:
        raise IncompatibleIndexError(f"unsupported checkpoint version {version}", path=path)
    pos = 8 + head
    (tl,) = struct.unpack_from("<H", buf, pos)
    pos += 2
    stage = buf[pos:pos + tl].decode("utf-8")
    pos += tl
    shapes = {"E": (V, h), "P_emb": (P, h), "W": (h, 2 * h), "c": (h,), "U": (V, h), "u0": (V,)}
    arrays = {}
    for name in ARRAY_NAMES:
        count = int(np.prod(shapes[name]))
        if pos + 4 * count > len(buf):
            raise FormatError("truncated checkpoint", path=path)
        arrays[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).astype(np.float64).reshape(shapes[name])
        pos += 4 * count
    if pos != len(buf):
        raise FormatError("trailing bytes in checkpoint", path=path)
    meta = {"vocab_size": V, "hidden": h, "positions": P, "seed": seed, "stage": stage}
    return ModelParams(**arrays), meta
