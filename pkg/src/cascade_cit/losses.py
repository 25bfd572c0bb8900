"""Training objectives: cross-entropy, contrastive transfer, KD, pairwise.

Representations are 1-D float64 vectors.  Similarity is the raw inner
product (not cosine).  Every loss returns its gradients only with
respect to student-side inputs; teacher-side inputs are constants and
no gradient entry is ever created for them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ShapeError

PROB_CLAMP = 1e-12

CIT_VARIANTS = ("literal", "standard")


@dataclass
class LossBundle:
    """A scalar loss plus named gradients aligned to its student-side inputs."""

    value: float
    grads: dict = field(default_factory=dict)


@dataclass
class CitBatch:
    """One contrastive group: a student anchor, its teacher target, K student negatives.

    ``variant="literal"`` keeps the printed denominator whose j=0 term is
    the student anchor's self-similarity; ``"standard"`` uses the
    conventional InfoNCE denominator (the positive term itself), which
    guarantees a nonnegative loss.  The teacher vector is a constant:
    gradients flow to the anchor and negatives only.
    """

    anchor_rep: np.ndarray
    teacher_rep: np.ndarray
    negative_reps: list
    tau: float
    variant: str = "standard"

    def __post_init__(self):
        self.anchor_rep = np.asarray(self.anchor_rep, dtype=np.float64)
        self.teacher_rep = np.asarray(self.teacher_rep, dtype=np.float64)
        self.negative_reps = [np.asarray(n, dtype=np.float64) for n in self.negative_reps]
        if self.tau <= 0:
            raise InputError(f"temperature must be positive, got {self.tau}")
        if self.variant not in CIT_VARIANTS:
            raise InputError(f"unknown variant {self.variant!r}; expected one of {CIT_VARIANTS}")
        if not self.negative_reps:
            raise InputError("contrastive batch needs at least one negative")
        d = self.anchor_rep.shape
        if self.teacher_rep.shape != d or any(n.shape != d for n in self.negative_reps):
            raise ShapeError(
                f"representation dims disagree: anchor {d}, teacher {self.teacher_rep.shape}, "
                f"negatives {[n.shape for n in self.negative_reps]}"
            )


def cross_entropy(score: float, label) -> tuple:
    """Pointwise binary cross-entropy. Returns (loss, dloss/dscore).

    The score is clamped to [1e-12, 1 - 1e-12] before the logs.
    """
    if label not in (0, 1):
        raise InputError(f"label must be 0 or 1, got {label!r}")
    p = min(max(float(score), PROB_CLAMP), 1.0 - PROB_CLAMP)
    y = float(label)
    loss = -(y * math.log(p) + (1.0 - y) * math.log(1.0 - p))
    grad = (p - y) / (p * (1.0 - p))
    return loss, grad


def cit_loss(batch: CitBatch) -> LossBundle:
    """Contrastive transfer loss for one anchor group.

    numerator   exp(<anchor, teacher> / tau)
    denominator sum_{j=0..K} exp(s_j / tau), where s_0 is the anchor
                self-similarity ("literal") or the numerator similarity
                ("standard"), and s_1..K are anchor-negative similarities.

    The log-sum-exp uses max subtraction.  Gradients cover the anchor and
    each negative; the teacher representation carries none.
    """
    a = batch.anchor_rep
    t = batch.teacher_rep
    negs = batch.negative_reps
    tau = float(batch.tau)
    k = len(negs)

    s_pos = float(a @ t) / tau
    sims = np.empty(k + 1)
    sims[0] = float(a @ a) / tau if batch.variant == "literal" else s_pos
    for j, n in enumerate(negs):
        sims[j + 1] = float(a @ n) / tau

    m = sims.max()
    exps = np.exp(sims - m)
    lse = m + math.log(exps.sum())
    value = -s_pos + lse
    p = exps / exps.sum()

    grad_a = -t / tau
    if batch.variant == "literal":
        grad_a = grad_a + p[0] * 2.0 * a / tau
    else:
        grad_a = grad_a + p[0] * t / tau
    for j, n in enumerate(negs):
        grad_a = grad_a + p[j + 1] * n / tau
    grad_negs = [p[j + 1] * a / tau for j in range(k)]

    return LossBundle(float(value), {"anchor": grad_a, "negatives": grad_negs})


def combined_loss(ce: float, cit: float, lam: float) -> float:
    """Mixed objective lam * ce + (1 - lam) * cit; gradients combine with the same weights."""
    if not 0.0 <= lam <= 1.0:
        raise InputError(f"lambda must lie in [0, 1], got {lam}")
    return lam * float(ce) + (1.0 - lam) * float(cit)


def _log_softmax(scores: np.ndarray, temperature: float) -> np.ndarray:
    z = scores / temperature
    z = z - z.max()
    return z - math.log(np.exp(z).sum())


def kd_loss(teacher_scores, student_scores, kd_temperature: float = 1.0) -> LossBundle:
    """Listwise distillation: KL(teacher softmax || student softmax) over one request.

    Scores are logits; both lists are softmaxed along the candidate axis
    at ``kd_temperature``.  Gradients go to the student scores only.
    """
    t = np.asarray(teacher_scores, dtype=np.float64)
    s = np.asarray(student_scores, dtype=np.float64)
    if t.shape != s.shape:
        raise ShapeError(f"kd_loss: teacher has {t.shape} scores but student has {s.shape}")
    if t.ndim != 1 or t.size < 2:
        raise InputError(f"kd_loss needs >= 2 candidates, got {t.size}")
    if kd_temperature <= 0:
        raise InputError(f"kd temperature must be positive, got {kd_temperature}")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(s))):
        raise InputError("kd_loss: non-finite score")

    log_p = _log_softmax(t, kd_temperature)
    log_q = _log_softmax(s, kd_temperature)
    p = np.exp(log_p)
    q = np.exp(log_q)
    value = float(np.sum(p * (log_p - log_q)))
    grad_s = (q - p) / kd_temperature
    return LossBundle(value, {"student_scores": grad_s})


def pairwise_loss(score_pos: float, score_neg: float) -> tuple:
    """-ln sigmoid(score_pos - score_neg) on logits. Returns (loss, (dpos, dneg))."""
    d = float(score_pos) - float(score_neg)
    if not math.isfinite(d):
        raise InputError(f"pairwise_loss: non-finite logits {score_pos}, {score_neg}")
    # softplus(-d), computed without overflow on either side
    loss = math.log1p(math.exp(-abs(d))) + max(-d, 0.0)
    sig = 1.0 / (1.0 + math.exp(-d)) if d >= 0 else math.exp(d) / (1.0 + math.exp(d))
    return loss, (sig - 1.0, 1.0 - sig)


def mi_lower_bound_estimate(mean_cit_loss: float, n_terms: int) -> float:
    """InfoNCE mutual-information estimate ln(n_terms) - mean loss; n_terms = K + 1."""
    if n_terms < 2:
        raise InputError(f"n_terms must be >= 2, got {n_terms}")
    return math.log(n_terms) - float(mean_cit_loss)
