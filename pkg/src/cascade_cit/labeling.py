"""Per-request training labels and the selection-bias policy.

Two label schemes exist: ``click`` (positives are displayed-and-clicked
candidates; non-displayed candidates are ineligible for cross-entropy)
and ``teacher_top_u`` (positives are the u candidates the frozen teacher
scores highest, over the whole candidate set, displayed or not).

A request with no positive feedback under the click scheme is still
trainable: cross-entropy is switched off and the contrastive term keeps
running, anchored on teacher-top-u fallback labels when provided.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Request
from .errors import DataError, InputError, NumericError

log = logging.getLogger(__name__)

SCHEMES = ("click", "teacher_top_u")


@dataclass
class LabelSet:
    """0/1 labels aligned to a request's candidates."""

    labels: np.ndarray
    scheme: str
    u: int = 0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scheme not in SCHEMES:
            raise InputError(f"unknown label scheme {self.scheme!r}; expected one of {SCHEMES}")

    @property
    def positive_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 1)

    @property
    def negative_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 0)


@dataclass
class TrainingPolicy:
    """Which loss terms run for one request, and over which candidates.

    ``ce_indices`` are the candidates cross-entropy may score;
    contrastive anchors come from ``eligible_positive_indices`` and
    in-request negatives from ``eligible_negative_indices``.
    """

    use_ce: bool
    use_cit: bool
    eligible_positive_indices: np.ndarray
    eligible_negative_indices: np.ndarray
    ce_indices: np.ndarray = field(default=None)

    def __post_init__(self):
        self.eligible_positive_indices = np.asarray(self.eligible_positive_indices, dtype=np.int64)
        self.eligible_negative_indices = np.asarray(self.eligible_negative_indices, dtype=np.int64)
        if self.ce_indices is None:
            self.ce_indices = np.concatenate(
                [self.eligible_positive_indices, self.eligible_negative_indices]
            )
        self.ce_indices = np.sort(np.asarray(self.ce_indices, dtype=np.int64))
        if not (self.use_ce or self.use_cit):
            raise InputError("policy must enable at least one loss term")
        if np.intersect1d(self.eligible_positive_indices, self.eligible_negative_indices).size:
            raise InputError("positive and negative eligibility sets overlap")


def click_labels(request: Request) -> LabelSet:
    """1 iff displayed and clicked; 0 for displayed-not-clicked; non-displayed
    candidates keep label 0 but are ineligible for cross-entropy."""
    if request.n_candidates < 1:
        raise InputError("request has no candidates")
    bad = np.flatnonzero(request.clicked & ~request.displayed)
    if bad.size:
        raise DataError(
            f"clicked flag on non-displayed candidate(s) {bad.tolist()}",
            request_id=request.request_id,
        )
    labels = (request.displayed & request.clicked).astype(np.int64)
    return LabelSet(labels, "click")


def teacher_top_u_labels(teacher_scores, u: int) -> LabelSet:
    """1 for the u highest-scoring candidates, 0 for the rest.

    Ties break toward the lower candidate index (stable).  u >= v labels
    everything positive, with a warning.
    """
    scores = np.asarray(teacher_scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size < 1:
        raise InputError(f"need a flat nonempty score list, got shape {scores.shape}")
    if u < 1:
        raise InputError(f"u must be >= 1, got {u}")
    if not np.all(np.isfinite(scores)):
        raise NumericError("non-finite teacher score")
    v = scores.size
    labels = np.zeros(v, dtype=np.int64)
    if u >= v:
        log.warning("u=%d >= v=%d: labeling every candidate positive", u, v)
        labels[:] = 1
    else:
        order = np.argsort(-scores, kind="stable")
        labels[order[:u]] = 1
    return LabelSet(labels, "teacher_top_u", u=u)


def make_policy(request: Request, labels: LabelSet, fallback: LabelSet = None) -> TrainingPolicy:
    """Selection-bias rules for one request.

    With at least one positive, both loss terms run.  A zero-positive
    request under the click scheme keeps only the contrastive term; its
    anchors and negatives come from ``fallback`` (teacher-top-u labels)
    when supplied.  Under the teacher_top_u scheme every candidate is
    eligible, displayed or not.
    """
    if request.n_candidates < 1:
        raise InputError("request has no candidates")
    if labels.labels.shape[0] != request.n_candidates:
        raise InputError(
            f"labels length {labels.labels.shape[0]} != candidate count {request.n_candidates}"
        )
    if labels.scheme == "teacher_top_u":
        return TrainingPolicy(
            use_ce=True,
            use_cit=True,
            eligible_positive_indices=labels.positive_indices,
            eligible_negative_indices=labels.negative_indices,
        )
    displayed = np.flatnonzero(request.displayed)
    positives = labels.positive_indices
    if positives.size:
        negatives = np.setdiff1d(displayed, positives)
        return TrainingPolicy(
            use_ce=True,
            use_cit=True,
            eligible_positive_indices=positives,
            eligible_negative_indices=negatives,
            ce_indices=displayed,
        )
    if fallback is not None:
        return TrainingPolicy(
            use_ce=False,
            use_cit=True,
            eligible_positive_indices=fallback.positive_indices,
            eligible_negative_indices=fallback.negative_indices,
            ce_indices=np.array([], dtype=np.int64),
        )
    return TrainingPolicy(
        use_ce=False,
        use_cit=True,
        eligible_positive_indices=np.array([], dtype=np.int64),
        eligible_negative_indices=displayed,
        ce_indices=np.array([], dtype=np.int64),
    )
