"""Sparse lexical retrieval over precomputed document token scores."""

from .corpus import (Document, QueryRecord, Qrels, RunEntry, load_corpus, load_qrels,
                     load_queries, load_run, write_run)
from .errors import FormatError, IncompatibleIndexError, TrainingHalted
from .index import (ImpactIndex, SparseScoreVector, build_index, load_index, postings_for,
                    save_index, sparsify)
from .metrics import MetricReport, evaluate_run, mrr_at_k, ndcg_at_k, recall_at_k, sparsification_sweep
from .model import (ModelParams, batch_scores, contrastive_loss, encode_document, init_params,
                    load_checkpoint, loss_gradient, save_checkpoint, sgd_step)
from .scoring import (Bm25Index, Bm25Stats, ScoredDoc, bm25_score, bm25_term_score, estimate_flops,
                      rerank, retrieve_bm25, retrieve_exhaustive, score_pair)
from .vocab import QueryFeature, TokenSequence, Vocabulary, featurize_query, load_vocabulary, tokenize

__version__ = "0.1.0"
