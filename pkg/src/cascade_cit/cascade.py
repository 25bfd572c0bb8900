"""Multi-stage funnel simulation: matching -> pre-ranking -> ranking -> top-k.

The matching stage is the request's candidate set.  The student keeps
its top-u; the teacher re-scores those u and the teacher's top-k is the
final list.  Two qualities are measured per request: end-to-end NDCG@k
of the final list against true relevance, and consistency recall (how
much of the teacher's *global* top-u survived the student's filter).

True relevance enters NDCG through sigmoid(latent), the same monotone
transform that drives click probabilities, so gains stay nonnegative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Request
from .errors import ConfigError, InputError
from .metrics import ndcg_at_k, rank_order, recall_at_u
from .models import ModelParams, score_candidates
from .tensor import sigmoid


@dataclass(frozen=True)
class CascadeConfig:
    v: int
    u: int
    k: int

    def __post_init__(self):
        if not 1 <= self.k <= self.u <= self.v:
            raise ConfigError(f"cascade needs 1 <= k <= u <= v, got k={self.k} u={self.u} v={self.v}")


@dataclass
class CascadeResult:
    final_list: list  # (item_id, teacher_score), teacher order
    preranked_set: set
    end_ndcg_at_k: float
    consistency_recall: float


def cascade_from_scores(request: Request, student_logits, teacher_logits, config: CascadeConfig) -> CascadeResult:
    """Funnel one request given precomputed stage scores for all candidates."""
    n = request.n_candidates
    if n < config.k:
        raise InputError(f"request {request.request_id} has {n} candidates, fewer than k={config.k}")
    student_logits = np.asarray(student_logits, dtype=np.float64)
    teacher_logits = np.asarray(teacher_logits, dtype=np.float64)
    u = min(config.u, n)
    k = min(config.k, u)

    pre_idx = rank_order(student_logits, request.item_ids)[:u]
    kept = pre_idx[rank_order(teacher_logits[pre_idx], request.item_ids[pre_idx])][:k]

    relevance = sigmoid(request.latent_relevance)
    end_ndcg = ndcg_at_k(relevance[kept], config.k, ideal_relevances=relevance)

    teacher_top_u = set(request.item_ids[rank_order(teacher_logits, request.item_ids)[:u]].tolist())
    preranked = set(request.item_ids[pre_idx].tolist())
    consistency = recall_at_u(preranked, teacher_top_u)

    final = [(int(request.item_ids[i]), float(teacher_logits[i])) for i in kept]
    return CascadeResult(final, preranked, float(end_ndcg), float(consistency))


def run_cascade(request: Request, student: ModelParams, teacher: ModelParams, config: CascadeConfig) -> CascadeResult:
    """Push one request through the funnel: student filters v down to u,
    the teacher re-ranks those u, the teacher's top-k is the final list."""
    _r, student_logits, _s, _c = score_candidates(student, request.query_features, request.features)
    _r, teacher_logits, _s, _c = score_candidates(teacher, request.query_features, request.features)
    return cascade_from_scores(request, student_logits, teacher_logits, config)


def evaluate_cascade(corpus, student: ModelParams, teacher: ModelParams, config: CascadeConfig, workers: int = 1):
    """Mean end NDCG@k and consistency recall over a corpus.

    Returns (aggregate dict, per-request list); aggregation is an ordered
    reduction so the report is identical for any worker count.
    """
    if not corpus:
        raise InputError("empty corpus")
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda r: run_cascade(r, student, teacher, config), corpus))
    else:
        results = [run_cascade(r, student, teacher, config) for r in corpus]
    agg = {
        "end_ndcg_at_k": float(np.mean([r.end_ndcg_at_k for r in results])),
        "consistency_recall": float(np.mean([r.consistency_recall for r in results])),
        "n_requests": len(results),
    }
    return agg, results
