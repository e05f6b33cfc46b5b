"""Two-stage contrastive training loop with held-out early stopping."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .data import (CandidateExample, Passage, TrainingBatch, assemble_batches,
                   pretraining_batches)
from .model import ModelParams, contrastive_loss, init_params, loss_and_gradient, sgd_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    stage: str = "finetune"          # "pretrain" or "finetune"
    steps: int = 1000
    lr: float = 0.1
    total_passages: int = 64
    negatives: int = 3
    hidden: int = 16
    positions: int = 16
    seed: int = 0
    eval_every: int = 100
    heldout_fraction: float = 0.1
    init_scale: float = 0.05

    def __post_init__(self):
        if self.stage not in ("pretrain", "finetune"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.steps < 0 or self.lr < 0 or self.eval_every < 1:
            raise ValueError("steps and lr must be >= 0, eval_every >= 1")


@dataclass
class TraceRow:
    step: int
    loss: float
    held_out_loss: float = math.nan


@dataclass
class TrainResult:
    params: ModelParams
    trace: List[TraceRow]
    best_step: int
    best_held_out: float


def _batch_stream(cfg: TrainConfig, data, rng) -> Iterator[TrainingBatch]:
    while True:
        if cfg.stage == "pretrain":
            it = pretraining_batches(data, cfg.total_passages, rng)
        else:
            it = assemble_batches(data, cfg.negatives, cfg.total_passages, rng)
        produced = False
        for b in it:
            produced = True
            yield b
        if not produced:
            return


def split_heldout(data: Sequence, fraction: float, rng) -> Tuple[list, list]:
    n = len(data)
    n_held = int(round(n * fraction)) if n > 1 else 0
    order = rng.permutation(n)
    held = [data[i] for i in sorted(order[:n_held])]
    train = [data[i] for i in sorted(order[n_held:])]
    return train, held


def train(cfg: TrainConfig, data: Sequence, vocab_size: int,
          params: Optional[ModelParams] = None, unk_id: Optional[int] = 0) -> TrainResult:
    """Train from ``params`` (or a seeded initialization).

    ``data`` is a list of ``Passage`` for pretraining or ``CandidateExample``
    for fine-tuning. Returns the parameters with the lowest held-out loss,
    rounded to float32 so they checkpoint bit-exactly.
    """
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(vocab_size, cfg.hidden, cfg.positions, rng, cfg.init_scale)
    train_data, held_data = split_heldout(list(data), cfg.heldout_fraction, rng)
    held_rng = np.random.default_rng([cfg.seed, 1])
    if cfg.stage == "pretrain":
        held_batches = list(pretraining_batches(held_data, cfg.total_passages, held_rng))
    else:
        held_batches = list(assemble_batches(held_data, cfg.negatives, cfg.total_passages, held_rng))
    held_prepared = [b.prepare(vocab_size, unk_id) for b in held_batches]

    def held_out_loss(p: ModelParams) -> float:
        if not held_prepared:
            return math.nan
        total = sum(contrastive_loss(b, p) for b in held_prepared)
        queries = sum(b.queries.shape[0] for b in held_prepared)
        return total / queries

    trace: List[TraceRow] = []
    best = params.as_float32()
    best_loss = held_out_loss(best)
    best_step = 0
    if cfg.steps == 0 or not train_data:
        return TrainResult(best if cfg.steps else params, trace, 0, best_loss)

    stream = _batch_stream(cfg, train_data, rng)
    for step in range(1, cfg.steps + 1):
        batch = next(stream, None)
        if batch is None:
            break
        loss, grads = loss_and_gradient(batch.prepare(vocab_size, unk_id), params)
        params = sgd_step(params, grads, cfg.lr)
        row = TraceRow(step, loss / max(1, len(batch.examples)))
        if step % cfg.eval_every == 0 or step == cfg.steps:
            row.held_out_loss = held_out_loss(params)
            if not held_prepared or row.held_out_loss < best_loss or math.isnan(best_loss):
                best, best_loss, best_step = params.as_float32(), row.held_out_loss, step
            log.info("step %d loss %.4f held-out %.4f", step, row.loss, row.held_out_loss)
        trace.append(row)
    return TrainResult(best, trace, best_step, best_loss)


def write_trace(trace: Sequence[TraceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss", "held_out_loss"])
        for r in trace:
            w.writerow([r.step, repr(float(r.loss)), "" if math.isnan(r.held_out_loss) else repr(float(r.held_out_loss))])
