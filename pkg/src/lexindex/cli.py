"""Command-line pipeline: build-index, retrieve, rerank, train, evaluate, sweep, flops, top-terms."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import corpus as cs
from .data import CandidateExample, Passage
from .errors import FormatError, TrainingHalted
from .index import (DocumentScoringError, build_index, load_index,
                    read_vectors, save_index, write_vectors)
from .metrics import DEFAULT_METRICS, evaluate_run, sparsification_sweep, write_sweep
from .model import encode_document, load_checkpoint, save_checkpoint
from .scoring import (DEFAULT_B, DEFAULT_K1, Bm25Index, MissingVectorError, ScoredDoc,
                      bm25_term_score, estimate_flops, flops_order, forward_vectors, rerank,
                      retrieve_bm25, retrieve_exhaustive)
from .train import TrainConfig, train, write_trace
from .vocab import featurize_query, load_vocabulary, save_vocabulary, tokenize

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("lexindex")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _require(args, *names):
    for n in names:
        if getattr(args, n, None) is None:
            raise UsageError(f"--{n.replace('_', '-')} is required for this command")


def _tokenized_corpus(args, vocab):
    docs = list(cs.load_corpus(args.corpus))
    return docs, [tokenize(d.text, vocab).ids for d in docs]


def _bm25(docs, toks, vocab, args):
    return Bm25Index.build([d.doc_id for d in docs], toks, k1=args.k1, b=args.b, skip_id=vocab.unk_id)


def _queries(args, vocab):
    return [(q.query_id, featurize_query(q.text, vocab, binary=args.binary_query))
            for q in cs.load_queries(args.queries)]


def cmd_build_index(args):
    _require(args, "corpus", "vocab", "output")
    vocab = load_vocabulary(args.vocab)
    V = vocab.size
    docs, toks = _tokenized_corpus(args, vocab)
    tok_of = {d.doc_id: t for d, t in zip(docs, toks)}

    if args.scorer == "model":
        if args.model is None:
            raise UsageError("--model is required when --scorer model")
        params, meta = load_checkpoint(args.model)
        if params.vocab_size != V:
            raise FormatError(f"model vocabulary size {params.vocab_size} != {V}", path=args.model)
        scorer = lambda d: encode_document(tok_of[d.doc_id], params)  # noqa: E731
        tag = f"model:{Path(args.model).name}"
    elif args.scorer == "vectors":
        if args.vectors is None:
            raise UsageError("--vectors is required when --scorer vectors")
        table = dict(read_vectors(args.vectors, V))
        scorer = lambda d: table[d.doc_id]  # noqa: E731
        tag = f"vectors:{Path(args.vectors).name}"
    else:
        bm = _bm25(docs, toks, vocab, args)
        st = bm.stats

        def scorer(d):
            out = np.zeros(V)
            t = tok_of[d.doc_id]
            ids, counts = np.unique(np.asarray(t, dtype=np.int64), return_counts=True)
            for tid, tf in zip(ids.tolist(), counts.tolist()):
                if tid != vocab.unk_id:
                    out[tid] = bm25_term_score(tf, len(t), st, st.idf(tid))
            return out
        tag = f"bm25:k1={args.k1},b={args.b}"

    start = time.perf_counter()
    index = build_index(docs, scorer, V, sparsify_k=args.sparsify_k, vocab_checksum=vocab.checksum(),
                        scorer_tag=tag, threads=args.threads or os.cpu_count() or 1)
    elapsed = time.perf_counter() - start
    save_index(index, args.output)
    if args.export_vectors:
        fw = forward_vectors(index)
        write_vectors(args.export_vectors, ((d, fw[d]) for d in index.doc_ids))
    print(f"docs={index.num_docs} nnz={index.nnz()} build_seconds={elapsed:.3f}")


def _load_checked_index(args, vocab):
    return load_index(args.index, expected_checksum=vocab.checksum())


def cmd_retrieve(args):
    _require(args, "queries", "vocab", "output")
    vocab = load_vocabulary(args.vocab)
    queries = _queries(args, vocab)
    entries = []
    if args.mode == "bm25":
        _require(args, "corpus")
        docs, toks = _tokenized_corpus(args, vocab)
        bm = _bm25(docs, toks, vocab, args)
        tag = "bm25"
        search = lambda qf: retrieve_bm25(qf, bm, args.top_n)  # noqa: E731
    else:
        _require(args, "index")
        index = _load_checked_index(args, vocab)
        tag = "nail-exh"
        search = lambda qf: retrieve_exhaustive(qf, index, args.top_n)  # noqa: E731
    for qid, qf in queries:
        entries.extend(cs.ranking_to_entries(qid, ((h.doc_id, h.score) for h in search(qf)), tag))
    cs.write_run(entries, args.output, tag)
    print(f"queries={len(queries)} entries={len(entries)}")


def _score_vectors(args, vocab):
    if args.index is not None:
        return forward_vectors(_load_checked_index(args, vocab))
    if args.vectors is not None:
        return dict(read_vectors(args.vectors, vocab.size))
    if args.model is not None and args.corpus is not None:
        params, _ = load_checkpoint(args.model)
        docs, toks = _tokenized_corpus(args, vocab)
        return {d.doc_id: encode_document(t, params) for d, t in zip(docs, toks)}
    raise UsageError("rerank needs --index, --vectors, or --model with --corpus")


def cmd_rerank(args):
    _require(args, "candidates", "queries", "vocab", "output")
    vocab = load_vocabulary(args.vocab)
    vectors = _score_vectors(args, vocab)
    qfs = dict(_queries(args, vocab))
    grouped = cs.group_run(cs.load_run(args.candidates))
    entries = []
    for qid, rows in grouped.items():
        if qid not in qfs:
            log.warning("candidate query %s missing from queries file; skipped", qid)
            continue
        cands = [ScoredDoc(e.doc_id, e.score) for e in rows[:args.top_n]]
        out = rerank(cands, qfs[qid], vectors)
        entries.extend(cs.ranking_to_entries(qid, ((h.doc_id, h.score) for h in out), "nail-rerank"))
    cs.write_run(entries, args.output, "nail-rerank")
    print(f"queries={len(grouped)} entries={len(entries)}")


def cmd_train(args):
    _require(args, "corpus", "vocab", "output")
    vocab = load_vocabulary(args.vocab)
    docs, toks = _tokenized_corpus(args, vocab)
    passages = [Passage(d.doc_id, tuple(t)) for d, t in zip(docs, toks)]
    if args.stage == "pretrain":
        data = passages
    else:
        _require(args, "queries", "qrels")
        by_id = {p.key: p for p in passages}
        bm = _bm25(docs, toks, vocab, args)
        qrels = cs.load_qrels(args.qrels)
        gold = {}
        for (qid, did), g in sorted(qrels.items()):
            if g > 0 and did in by_id:
                gold.setdefault(qid, did)
        data = []
        for q in cs.load_queries(args.queries):
            if q.query_id not in gold:
                continue
            ids = tokenize(q.text, vocab).ids
            qf = featurize_query(q.text, vocab)
            hits = retrieve_bm25(qf, bm, args.candidate_depth + 1) if qf else []
            pos = gold[q.query_id]
            cands = tuple((by_id[h.doc_id], h.score) for h in hits if h.doc_id != pos)[:args.candidate_depth]
            data.append(CandidateExample(ids, by_id[pos], cands))
    init = None
    if args.init_model:
        init, _ = load_checkpoint(args.init_model)
    cfg = TrainConfig(stage=args.stage, steps=args.steps, lr=args.lr, total_passages=args.total_passages,
                      negatives=args.negatives, hidden=args.hidden, positions=args.positions, seed=args.seed,
                      eval_every=args.eval_every, heldout_fraction=args.heldout_fraction,
                      init_scale=args.init_scale)
    res = train(cfg, data, vocab.size, params=init, unk_id=vocab.unk_id)
    save_checkpoint(res.params, args.output, seed=args.seed, stage=args.stage)
    if args.trace:
        write_trace(res.trace, args.trace)
    print(f"steps={len(res.trace)} best_step={res.best_step} best_held_out={res.best_held_out:.6f}")


def cmd_evaluate(args):
    _require(args, "run", "qrels")
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    report = evaluate_run(cs.load_run(args.run), cs.load_qrels(args.qrels), metrics)
    if args.output:
        report.write_csv(args.output)
    for m in report.metrics:
        print(f"{m}\t{report.aggregate[m]:.4f}")


def cmd_sweep(args):
    _require(args, "index", "queries", "qrels", "vocab")
    vocab = load_vocabulary(args.vocab)
    index = _load_checked_index(args, vocab)
    fw = forward_vectors(index)
    dense = np.stack([fw[d].to_dense(vocab.size) for d in index.doc_ids]) if index.doc_ids \
        else np.zeros((0, vocab.size))
    ks = [int(k) for k in args.k_values.split(",") if k.strip()]
    rows = sparsification_sweep(index.doc_ids, dense, dict(_queries(args, vocab)),
                                cs.load_qrels(args.qrels), ks)
    if args.output:
        write_sweep(rows, args.output)
    for k, r in rows:
        print(f"k={k}\trecall@100={r:.4f}")


def cmd_flops(args):
    n = estimate_flops(args.query_len, args.num_docs)
    print(f"flops={n} order_of_magnitude=10^{flops_order(n)}")


def cmd_top_terms(args):
    _require(args, "vocab")
    vocab = load_vocabulary(args.vocab)
    if args.model is not None:
        _require(args, "corpus")
        params, _ = load_checkpoint(args.model)
        docs, toks = _tokenized_corpus(args, vocab)
        vecs = {d.doc_id: encode_document(t, params) for d, t in zip(docs, toks)}
        order = [d.doc_id for d in docs]
    elif args.index is not None:
        index = _load_checked_index(args, vocab)
        fw = forward_vectors(index)
        vecs = {d: fw[d].to_dense(vocab.size) for d in index.doc_ids}
        order = index.doc_ids
    else:
        raise UsageError("top-terms needs --model with --corpus, or --index")
    for did in order:
        sv = np.asarray(vecs[did])
        top = np.lexsort((np.arange(sv.size), -sv))[:args.k]
        print(did + "\t" + " ".join(f"{vocab.tokens[t]}:{sv[t]:.3f}" for t in top))


def cmd_synth(args):
    from .synthetic import make_overlap_task

    _require(args, "output")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    task = make_overlap_task(vocab_size=args.vocab_size, num_docs=args.num_docs, seed=args.seed)
    save_vocabulary(task.vocab, out / "vocab.txt")
    cs.write_corpus(task.docs, out / "corpus.jsonl")
    cs.write_queries(task.train_queries, out / "train_queries.tsv")
    cs.write_queries(task.test_queries, out / "test_queries.tsv")
    for name, qs in (("train", task.train_queries), ("test", task.test_queries)):
        ids = {q.query_id for q in qs}
        cs.write_qrels(cs.Qrels({k: g for k, g in task.qrels.items() if k[0] in ids}), out / f"{name}_qrels.txt")
    print(f"wrote synthetic task to {out}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML file with default option values; flags win")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="store_true")
    for name in ("corpus", "queries", "qrels", "vocab", "index", "model", "vectors", "output", "run",
                 "candidates", "trace", "export_vectors", "init_model"):
        common.add_argument("--" + name.replace("_", "-"), dest=name)
    common.add_argument("--top-n", type=int, default=100)
    common.add_argument("--k1", type=float, default=DEFAULT_K1)
    common.add_argument("--b", type=float, default=DEFAULT_B)
    common.add_argument("--binary-query", action="store_true",
                        help="weight each distinct query token 1 instead of its count")

    p = _Parser(prog="lexindex", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("build-index", parents=[common])
    s.add_argument("--scorer", choices=["bm25", "model", "vectors"], default="model")
    s.add_argument("--sparsify-k", type=int)
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_build_index)

    s = sub.add_parser("retrieve", parents=[common])
    s.add_argument("--mode", choices=["bm25", "exh"], default="exh")
    s.set_defaults(func=cmd_retrieve)

    s = sub.add_parser("rerank", parents=[common])
    s.set_defaults(func=cmd_rerank)

    s = sub.add_parser("train", parents=[common])
    s.add_argument("--stage", choices=["pretrain", "finetune"], default="finetune")
    s.add_argument("--steps", type=int, default=1000)
    s.add_argument("--lr", type=float, default=0.1)
    s.add_argument("--total-passages", type=int, default=64)
    s.add_argument("--negatives", type=int, default=3)
    s.add_argument("--hidden", type=int, default=16)
    s.add_argument("--positions", type=int, default=16)
    s.add_argument("--eval-every", type=int, default=100)
    s.add_argument("--heldout-fraction", type=float, default=0.1)
    s.add_argument("--init-scale", type=float, default=0.05)
    s.add_argument("--candidate-depth", type=int, default=100)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common])
    s.add_argument("--metrics", default=",".join(DEFAULT_METRICS))
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", parents=[common])
    s.add_argument("--k-values", default="1,2,5,10,20,50,100")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("flops", parents=[common])
    s.add_argument("--query-len", type=int, default=16)
    s.add_argument("--num-docs", type=int, default=100)
    s.set_defaults(func=cmd_flops)

    s = sub.add_parser("top-terms", parents=[common])
    s.add_argument("--k", type=int, default=10)
    s.set_defaults(func=cmd_top_terms)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic token-overlap task")
    s.add_argument("--vocab-size", type=int, default=200)
    s.add_argument("--num-docs", type=int, default=500)
    s.set_defaults(func=cmd_synth)
    return p


def _apply_config(parser, argv):
    """Re-parse with TOML values as defaults so explicit flags still win."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    with open(args.config, "rb") as fh:
        conf = tomllib.load(fh)
    section = dict(conf.get(args.command, {}))
    section.update({k: v for k, v in conf.items() if not isinstance(v, dict)})
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = set(k.replace("-", "_") for k in section) - known
    if unknown:
        parser.error(f"unknown config keys: {', '.join(sorted(unknown))}")
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in section.items()})
    return parser.parse_args(argv)


def _validate(args):
    if args.top_n < 1:
        raise UsageError("--top-n must be >= 1")
    if args.k1 < 0 or not 0 <= args.b <= 1:
        raise UsageError("BM25 needs --k1 >= 0 and 0 <= --b <= 1")
    if getattr(args, "sparsify_k", None) is not None and args.sparsify_k < 1:
        raise UsageError("--sparsify-k must be >= 1")
    if getattr(args, "k", 1) < 1:
        raise UsageError("--k must be >= 1")
    if args.command == "flops" and (args.query_len < 0 or args.num_docs < 0):
        raise UsageError("--query-len and --num-docs must be >= 0")
    if args.command == "train":
        if args.steps < 0 or args.lr < 0 or args.negatives < 0 or args.hidden < 1 or args.positions < 1:
            raise UsageError("invalid training hyperparameters")
        if args.total_passages < args.negatives + 1:
            raise UsageError("--total-passages must be at least --negatives + 1")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        print(f"lexindex: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _validate(args)
        args.func(args)
    except UsageError as exc:
        print(f"lexindex {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError, MissingVectorError, DocumentScoringError, UnicodeDecodeError) as exc:
        print(f"lexindex {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, AssertionError, TrainingHalted) as exc:
        print(f"lexindex {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
