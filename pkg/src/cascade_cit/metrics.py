"""Offline ranking metrics: AUC, G-AUC, NDCG@k, Recall@u.

Conventions, fixed everywhere: tied score pairs count 0.5 in AUC
(midranks); ranked lists break score ties toward the lower item id;
NDCG uses gain 2^rel - 1 and discount 1/log2(position + 1).  Metrics
that cannot be computed (single-class AUC, empty recall reference)
return None rather than raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass
class RankedList:
    """Scored items with aligned relevance labels and a total order."""

    item_ids: np.ndarray
    scores: np.ndarray
    relevances: np.ndarray

    def __post_init__(self):
        self.item_ids = np.asarray(self.item_ids, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.relevances = np.asarray(self.relevances, dtype=np.float64)
        if not (self.item_ids.shape == self.scores.shape == self.relevances.shape):
            raise InputError("ranked list fields must align")
        if not np.all(np.isfinite(self.scores)):
            raise InputError("non-finite score in ranked list")

    def order(self) -> np.ndarray:
        """Indices by descending score, ties broken by lower item id."""
        return np.lexsort((self.item_ids, -self.scores))

    def ordered_relevances(self) -> np.ndarray:
        return self.relevances[self.order()]


def rank_order(scores, item_ids) -> np.ndarray:
    """Shared total order: descending score, then ascending item id."""
    return np.lexsort((np.asarray(item_ids), -np.asarray(scores, dtype=np.float64)))


def auc(scores, labels):
    """P(random positive outranks random negative), ties at 0.5, via rank sums.

    Returns None when labels are single-class (not computable).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise InputError(f"scores {s.shape} and labels {y.shape} must be flat and aligned")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != y.size:
        raise InputError("labels must be 0/1")
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum = float(ranks[y == 1].sum())
    num = rank_sum - n_pos * (n_pos + 1) / 2.0
    return num / (n_pos * n_neg)


def gauc_report(per_request):
    """Weighted mean of per-request AUC, weight = positives x negatives.

    Returns (gauc, n_evaluated, n_skipped); gauc is None when no request
    is computable.
    """
    total = 0.0
    weight = 0.0
    evaluated = 0
    skipped = 0
    for scores, labels in per_request:
        value = auc(scores, labels)
        if value is None:
            skipped += 1
            continue
        y = np.asarray(labels)
        w = float((y == 1).sum() * (y == 0).sum())
        total += w * value
        weight += w
        evaluated += 1
    if evaluated == 0:
        return None, 0, skipped
    return total / weight, evaluated, skipped


def gauc(per_request) -> float:
    value, evaluated, _skipped = gauc_report(per_request)
    if value is None:
        raise InputError("no request has both a positive and a negative label")
    return value


def dcg_at_k(ranked_relevances, k: int) -> float:
    """Gain 2^rel - 1, discount 1/log2(pos + 1), positions 1-based."""
    total = 0.0
    for pos, rel in enumerate(ranked_relevances[:k], start=1):
        total += (2.0 ** float(rel) - 1.0) / math.log2(pos + 1.0)
    return total


def ndcg_at_k(ranked_relevances, k: int, ideal_relevances=None) -> float:
    """DCG of the given ordering over the ideal ordering's DCG; 0 when the
    ideal is 0.

    ``ideal_relevances`` widens the normalization pool (e.g. all candidates
    entering a funnel, not just the survivors); default is the list itself.
    """
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    rels = np.asarray(ranked_relevances, dtype=np.float64)
    if rels.size and rels.min() < 0:
        raise InputError("negative relevance")
    pool = rels if ideal_relevances is None else np.asarray(ideal_relevances, dtype=np.float64)
    if pool.size and pool.min() < 0:
        raise InputError("negative relevance in ideal pool")
    ideal = dcg_at_k(np.sort(pool)[::-1], k)
    if ideal == 0.0:
        return 0.0
    return dcg_at_k(rels, k) / ideal


def recall_at_u(selected, reference):
    """|selected intersect reference| / |reference|; None for an empty reference."""
    ref = set(reference)
    if not ref:
        return None
    return len(set(selected) & ref) / len(ref)


@dataclass
class MetricsReport:
    """Aggregate offline metrics for one evaluation run."""

    gauc: float
    ndcg_at_k: float
    recall_at_u: float
    k: int
    u: int
    n_requests_evaluated: int
    n_requests_skipped: int

    def to_dict(self) -> dict:
        return {
            "gauc": self.gauc,
            "ndcg_at_k": self.ndcg_at_k,
            "recall_at_u": self.recall_at_u,
            "k": self.k,
            "u": self.u,
            "n_requests_evaluated": self.n_requests_evaluated,
            "n_requests_skipped": self.n_requests_skipped,
        }
