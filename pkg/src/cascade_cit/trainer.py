"""Two-phase training: teacher on click labels, then student under the
mixed objective with the teacher frozen.

The teacher is scored over the corpus exactly once (it is frozen, so its
logits, top-u sets, and anchor representations are constants); students
then train for several epochs against those cached constants.  Within a
batch every candidate row goes through one forward pass, loss terms
accumulate upstream gradients (logit-space and representation-space),
and one backward pass produces parameter gradients — a deterministic,
fixed-order reduction.

Cross-entropy is applied in logit space: value softplus(z) - y*z and
gradient sigmoid(z) - y, the exact composite of the probability-space
loss with the sigmoid score head.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .cascade import CascadeConfig, cascade_from_scores
from .data import Request, sample_negatives_batch
from .errors import ConfigError, ContractError, InputError
from .labeling import LabelSet, click_labels, make_policy, teacher_top_u_labels
from .metrics import MetricsReport, auc, gauc_report, ndcg_at_k, rank_order, recall_at_u
from .models import (
    ModelConfig,
    ModelParams,
    backward_batch,
    build_model,
    load_checkpoint,
    save_checkpoint,
    score_candidates,
    validate_pair,
)
from .rng import Rng
from .tensor import AdamState, adam_step, sigmoid

log = logging.getLogger(__name__)

OBJECTIVES = ("ce_only", "ce_plus_cit", "ce_plus_kd", "pairwise")
RECALL_REFERENCES = ("teacher_top_u", "clicked")

_STREAM_SHUFFLE = 0x53485546  # "SHUF"
_GOLDEN = 0x9E3779B97F4A7C15


@dataclass(frozen=True)
class TrainConfig:
    scheme: str = "teacher_top_u"
    objective: str = "ce_plus_cit"
    lam: float = 0.5
    tau: float = 0.1
    k_negatives: int = 15
    u: int = 20
    epochs: int = 6
    batch_requests: int = 64
    lr: float = 0.003
    seed: int = 1
    early_stop_patience: int = 3
    kd_temperature: float = 1.0
    cit_variant: str = "standard"
    max_anchors: int = 0  # 0 = anchor every eligible positive

    def __post_init__(self):
        problems = []
        if self.scheme not in ("click", "teacher_top_u"):
            problems.append(f"scheme {self.scheme!r} not in ('click', 'teacher_top_u')")
        if self.objective not in OBJECTIVES:
            problems.append(f"objective {self.objective!r} not in {OBJECTIVES}")
        if not 0.0 <= self.lam <= 1.0:
            problems.append(f"lambda {self.lam} outside [0, 1]")
        if self.tau <= 0:
            problems.append(f"tau {self.tau} must be positive")
        if self.k_negatives < 1:
            problems.append(f"K {self.k_negatives} must be >= 1")
        if self.u < 1:
            problems.append(f"u {self.u} must be >= 1")
        if self.epochs < 1 or self.batch_requests < 1:
            problems.append("epochs and batch_requests must be >= 1")
        if self.lr <= 0:
            problems.append(f"lr {self.lr} must be positive")
        if self.early_stop_patience < 0:
            problems.append("early_stop_patience must be >= 0")
        if self.kd_temperature <= 0:
            problems.append(f"kd_temperature {self.kd_temperature} must be positive")
        if self.cit_variant not in ("literal", "standard"):
            problems.append(f"cit_variant {self.cit_variant!r} unknown")
        if self.max_anchors < 0:
            problems.append("max_anchors must be >= 0")
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass
class Checkpoint:
    """Best-validation model parameters plus enough context to rerun."""

    params: ModelParams
    config_echo: dict
    epoch: int
    valid_gauc_history: list = field(default_factory=list)

    def save(self, path) -> None:
        save_checkpoint(
            path,
            self.params,
            extra={
                "config_echo": self.config_echo,
                "epoch": self.epoch,
                "valid_gauc_history": self.valid_gauc_history,
            },
        )

    @classmethod
    def load(cls, path) -> "Checkpoint":
        params, extra = load_checkpoint(path)
        return cls(
            params,
            extra.get("config_echo", {}),
            extra.get("epoch", 0),
            extra.get("valid_gauc_history", []),
        )


def _as_params(model) -> ModelParams:
    return model.params if isinstance(model, Checkpoint) else model


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _ce_rows(logits: np.ndarray, y: np.ndarray):
    """Per-row CE value and dloss/dlogit for 0/1 labels."""
    value = _softplus(logits) - y * logits
    return value, sigmoid(logits) - y


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    return z - math.log(np.exp(z).sum())


class _Optimizer:
    """Adam over one model's named parameters. Never sees teacher params."""

    def __init__(self, params: ModelParams, lr: float):
        self.states = {
            name: AdamState.fresh(m.rows, m.cols, lr) for name, m in params.params.items()
        }

    def apply(self, params: ModelParams, grads: dict) -> None:
        for name in params.params:
            new_p, new_s = adam_step(params.params[name], grads[name], self.states[name], name=name)
            params.params[name] = new_p
            self.states[name] = new_s


class TeacherCache:
    """Frozen-teacher constants per request: logits, top-u indices, and
    representations for every candidate that can anchor a contrastive group."""

    def __init__(self):
        self.logits = {}
        self.top_u = {}
        self.rep_idx = {}
        self.reps = {}

    @classmethod
    def build(cls, requests, teacher: ModelParams, u: int, with_reps: bool) -> "TeacherCache":
        if not teacher.frozen:
            raise ContractError("teacher cache requires frozen teacher params")
        cache = cls()
        for req in requests:
            rid = req.request_id
            if rid in cache.logits:
                raise InputError(f"duplicate request_id {rid}; cache keys must be unique")
            reps, logits, _scores, _c = score_candidates(teacher, req.query_features, req.features)
            cache.logits[rid] = logits
            top = np.argsort(-logits, kind="stable")[: min(u, logits.size)]
            cache.top_u[rid] = np.sort(top)
            if with_reps:
                anchor_idx = np.union1d(cache.top_u[rid], np.flatnonzero(req.clicked))
                cache.rep_idx[rid] = anchor_idx
                cache.reps[rid] = reps[anchor_idx]
        return cache

    def top_u_labels(self, req: Request, u: int) -> LabelSet:
        labels = np.zeros(req.n_candidates, dtype=np.int64)
        labels[self.top_u[req.request_id]] = 1
        return LabelSet(labels, "teacher_top_u", u=u)

    def reps_for(self, req: Request, indices: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self.rep_idx[req.request_id], indices)
        return self.reps[req.request_id][pos]


def _scheme_labels(req: Request, config: TrainConfig, cache) -> LabelSet:
    if config.scheme == "teacher_top_u":
        return cache.top_u_labels(req, config.u)
    return click_labels(req)


def _epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    rng = Rng(seed).derive(_STREAM_SHUFFLE).derive(epoch + 1)
    u = rng.uniform(n)
    return np.argsort(u, kind="stable")


def _neg_rng(seed: int, epoch: int, request_id: int) -> Rng:
    stream = ((epoch + 1) * _GOLDEN) & 0xFFFFFFFFFFFFFFFF
    return Rng(seed).derive(stream ^ request_id)


def _valid_gauc(params: ModelParams, split, config: TrainConfig, cache) -> float:
    """Validation G-AUC under the active label scheme."""
    rows = []
    for req in split:
        _r, logits, _s, _c = score_candidates(params, req.query_features, req.features)
        if config.scheme == "teacher_top_u":
            labels = cache.top_u_labels(req, config.u).labels
            rows.append((logits, labels))
        else:
            disp = np.flatnonzero(req.displayed)
            if disp.size:
                rows.append((logits[disp], req.clicked[disp].astype(np.int64)))
    value, _n, _skipped = gauc_report(rows)
    return float("nan") if value is None else value


def _append_log(log_path, record: dict) -> None:
    if log_path is None:
        return
    with open(log_path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def train_teacher(train_split, valid_split, config: TrainConfig, model_config: ModelConfig,
                  log_path=None) -> Checkpoint:
    """Cross-entropy on click labels over displayed candidates; returns the
    best-validation-G-AUC checkpoint, frozen."""
    if not any(req.clicked.any() for req in train_split):
        raise InputError("no clicked request in the training split")
    if model_config.frozen:
        model_config = replace(model_config, frozen=False)
    params = build_model(model_config, Rng(config.seed))
    opt = _Optimizer(params, config.lr)

    best = params.copy()
    best_gauc = -np.inf
    best_epoch = 0
    history = []
    stall = 0
    initial_batch_loss = None

    for epoch in range(config.epochs):
        order = _epoch_order(len(train_split), config.seed, epoch)
        epoch_losses = []
        for start in range(0, len(order), config.batch_requests):
            batch = [train_split[i] for i in order[start : start + config.batch_requests]]
            xs, ys, counts = [], [], []
            for req in batch:
                disp = np.flatnonzero(req.displayed)
                if disp.size == 0:
                    continue
                q = np.broadcast_to(req.query_features, (disp.size, req.query_features.size))
                xs.append(np.concatenate([q, req.features[disp]], axis=1))
                ys.append(req.clicked[disp].astype(np.float64))
                counts.append(disp.size)
            if not xs:
                continue
            x = np.concatenate(xs, axis=0)
            y = np.concatenate(ys)
            weights = np.repeat(1.0 / (len(counts) * np.asarray(counts, dtype=np.float64)), counts)
            from .models import forward_batch

            _reps, logits, _scores, fcache = forward_batch(params, x)
            values, dlogit = _ce_rows(logits, y)
            batch_loss = float((values * weights).sum())
            grads = backward_batch(params, fcache, dlogits=dlogit * weights)
            opt.apply(params, grads)
            epoch_losses.append(batch_loss)
            if initial_batch_loss is None:
                initial_batch_loss = batch_loss
        vg = _valid_gauc_clicks(params, valid_split)
        history.append(vg)
        mean_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        _append_log(log_path, {"phase": "teacher", "epoch": epoch, "split": "train",
                               "loss": mean_loss, "valid_gauc": vg})
        if vg > best_gauc:
            best_gauc = vg
            best = params.copy()
            best_epoch = epoch
            stall = 0
        else:
            stall += 1
            if stall > config.early_stop_patience:
                break

    frozen = ModelParams(replace(best.config, frozen=True), best.params)
    echo = {"phase": "teacher", "train_config": _config_echo(config),
            "model_config": asdict(model_config), "initial_batch_loss": initial_batch_loss}
    return Checkpoint(frozen, echo, best_epoch, history)


def _valid_gauc_clicks(params: ModelParams, split) -> float:
    rows = []
    for req in split:
        disp = np.flatnonzero(req.displayed)
        if disp.size == 0:
            continue
        _r, logits, _s, _c = score_candidates(params, req.query_features, req.features)
        rows.append((logits[disp], req.clicked[disp].astype(np.int64)))
    value, _n, _skipped = gauc_report(rows)
    return float("nan") if value is None else value


def train_student(train_split, valid_split, teacher, config: TrainConfig,
                  model_config: ModelConfig, log_path=None) -> Checkpoint:
    """Student under the configured objective with a frozen teacher.

    Per request: labels per scheme, selection-bias policy, anchors over
    eligible positives with K in-request negatives, combined loss per the
    mixed objective.  Teacher parameters are hash-checked every epoch.
    """
    teacher_params = _as_params(teacher) if teacher is not None else None
    needs_teacher = config.objective in ("ce_plus_cit", "ce_plus_kd") or config.scheme == "teacher_top_u"
    if needs_teacher:
        if teacher_params is None:
            raise InputError(f"objective {config.objective!r} with scheme {config.scheme!r} requires a teacher")
        if not teacher_params.frozen:
            raise ContractError("student training requires a frozen teacher")
        validate_pair(model_config, teacher_params.config)

    cache = None
    if teacher_params is not None:
        cache = TeacherCache.build(
            list(train_split) + list(valid_split),
            teacher_params,
            config.u,
            with_reps=config.objective == "ce_plus_cit",
        )
        teacher_digest = hashlib.sha256(teacher_params.payload_bytes()).hexdigest()

    params = build_model(replace(model_config, frozen=False), Rng(config.seed))
    opt = _Optimizer(params, config.lr)
    lam_eff = 1.0 if config.objective == "ce_only" else config.lam

    best = params.copy()
    best_gauc = -np.inf
    best_epoch = 0
    history = []
    stall = 0
    initial_batch_loss = None
    epoch_mean_losses = []

    for epoch in range(config.epochs):
        order = _epoch_order(len(train_split), config.seed, epoch)
        epoch_losses = []
        for start in range(0, len(order), config.batch_requests):
            batch = [train_split[i] for i in order[start : start + config.batch_requests]]
            batch_loss = _student_batch_step(params, opt, batch, config, cache, lam_eff, epoch)
            if batch_loss is not None:
                epoch_losses.append(batch_loss)
                if initial_batch_loss is None:
                    initial_batch_loss = batch_loss
        if teacher_params is not None:
            if hashlib.sha256(teacher_params.payload_bytes()).hexdigest() != teacher_digest:
                raise ContractError("teacher parameters changed during student training")
        vg = _valid_gauc(params, valid_split, config, cache)
        history.append(vg)
        mean_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        epoch_mean_losses.append(mean_loss)
        _append_log(log_path, {"phase": "student", "objective": config.objective, "epoch": epoch,
                               "split": "train", "loss": mean_loss, "valid_gauc": vg})
        if vg > best_gauc:
            best_gauc = vg
            best = params.copy()
            best_epoch = epoch
            stall = 0
        else:
            stall += 1
            if stall > config.early_stop_patience:
                break

    echo = {"phase": "student", "train_config": _config_echo(config),
            "model_config": asdict(model_config), "initial_batch_loss": initial_batch_loss,
            "epoch_mean_losses": epoch_mean_losses,
            "optimizer_param_names": sorted(opt.states.keys())}
    return Checkpoint(best, echo, best_epoch, history)


def _student_batch_step(params, opt, batch, config: TrainConfig, cache, lam_eff: float, epoch: int):
    """One forward/backward/update over a batch of requests. Returns the
    batch loss, or None when nothing in the batch contributes."""
    from .models import forward_batch

    sdim = params.config.item_dim
    xs, offsets = [], []
    total = 0
    for req in batch:
        q = np.broadcast_to(req.query_features, (req.n_candidates, req.query_features.size))
        xs.append(np.concatenate([q, req.features[:, :sdim]], axis=1))
        offsets.append(total)
        total += req.n_candidates
    x = np.concatenate(xs, axis=0)
    reps, logits, _scores, fcache = forward_batch(params, x)

    dlogits = np.zeros(total)
    dreps = np.zeros_like(reps)
    inv_b = 1.0 / len(batch)
    value_sum = 0.0
    contributed = False

    for req, off in zip(batch, offsets):
        labels = _scheme_labels(req, config, cache)
        fallback = None
        if config.scheme == "click" and config.objective == "ce_plus_cit" and cache is not None:
            fallback = cache.top_u_labels(req, config.u)
        policy = make_policy(req, labels, fallback)
        r_logits = logits[off : off + req.n_candidates]
        req_value = 0.0
        req_used = False

        if policy.use_ce and lam_eff > 0.0 and policy.ce_indices.size:
            idx = policy.ce_indices
            y = labels.labels[idx].astype(np.float64)
            values, dl = _ce_rows(r_logits[idx], y)
            req_value += lam_eff * float(values.mean())
            dlogits[off + idx] += lam_eff * inv_b * dl / idx.size
            req_used = True

        if config.objective != "ce_only" and lam_eff < 1.0:
            aux = _aux_term(req, off, r_logits, reps, dreps, dlogits, policy, config, cache,
                            (1.0 - lam_eff) * inv_b, epoch)
            if aux is not None:
                req_value += (1.0 - lam_eff) * aux
                req_used = True

        if req_used:
            value_sum += req_value
            contributed = True

    if not contributed:
        return None
    grads = backward_batch(params, fcache, dlogits=dlogits, dreps=dreps)
    opt.apply(params, grads)
    return value_sum * inv_b


def _aux_term(req, off, r_logits, reps, dreps, dlogits, policy, config: TrainConfig, cache,
              grad_scale: float, epoch: int):
    """Evaluate the transfer term for one request, accumulating upstream
    gradients in place. Returns the term's value or None if inapplicable."""
    anchors = policy.eligible_positive_indices
    if config.max_anchors and anchors.size > config.max_anchors:
        anchors = anchors[: config.max_anchors]
    pool = policy.eligible_negative_indices

    if config.objective == "ce_plus_kd":
        if config.scheme == "teacher_top_u":
            subset = cache.top_u[req.request_id]
        else:
            subset = np.flatnonzero(req.displayed)
        if subset.size < 2:
            return None
        t = cache.logits[req.request_id][subset] / config.kd_temperature
        s = r_logits[subset] / config.kd_temperature
        log_p = _log_softmax(t)
        log_q = _log_softmax(s)
        p = np.exp(log_p)
        q = np.exp(log_q)
        value = float(np.sum(p * (log_p - log_q)))
        dlogits[off + subset] += grad_scale * (q - p) / config.kd_temperature
        return value

    if anchors.size == 0 or pool.size == 0:
        return None
    k = config.k_negatives
    rng = _neg_rng(config.seed, epoch, req.request_id)
    neg_idx = sample_negatives_batch(pool, anchors.size, k, rng)  # (a, K)

    if config.objective == "ce_plus_cit":
        a_reps = reps[off + anchors]  # (a, d)
        t_reps = cache.reps_for(req, anchors)  # (a, d)
        n_reps = reps[off + neg_idx]  # (a, K, d)
        tau = config.tau
        s_pos = np.einsum("ad,ad->a", a_reps, t_reps) / tau
        s_neg = np.einsum("ad,akd->ak", a_reps, n_reps) / tau
        if config.cit_variant == "literal":
            s0 = np.einsum("ad,ad->a", a_reps, a_reps) / tau
        else:
            s0 = s_pos
        terms = np.concatenate([s0[:, None], s_neg], axis=1)  # (a, K+1)
        m = terms.max(axis=1, keepdims=True)
        exps = np.exp(terms - m)
        lse = m[:, 0] + np.log(exps.sum(axis=1))
        values = -s_pos + lse
        p = exps / exps.sum(axis=1, keepdims=True)  # (a, K+1)

        inv_a = 1.0 / anchors.size
        d_anchor = -t_reps / tau + np.einsum("ak,akd->ad", p[:, 1:], n_reps) / tau
        if config.cit_variant == "literal":
            d_anchor += p[:, :1] * 2.0 * a_reps / tau
        else:
            d_anchor += p[:, :1] * t_reps / tau
        np.add.at(dreps, off + anchors, grad_scale * inv_a * d_anchor)
        d_negs = p[:, 1:, None] * a_reps[:, None, :] / tau  # (a, K, d)
        np.add.at(dreps, (off + neg_idx).reshape(-1),
                  grad_scale * inv_a * d_negs.reshape(-1, d_negs.shape[2]))
        return float(values.mean())

    if config.objective == "pairwise":
        d = r_logits[anchors][:, None] - r_logits[neg_idx]  # (a, K)
        values = np.maximum(-d, 0.0) + np.log1p(np.exp(-np.abs(d)))
        sig = sigmoid(d)
        inv_pairs = 1.0 / d.size
        np.add.at(dlogits, off + anchors, grad_scale * inv_pairs * (sig - 1.0).sum(axis=1))
        np.add.at(dlogits, (off + neg_idx).reshape(-1),
                  grad_scale * inv_pairs * (1.0 - sig).reshape(-1))
        return float(values.mean())

    raise ConfigError(f"unhandled objective {config.objective!r}")


def _config_echo(config: TrainConfig) -> dict:
    return asdict(config)


def evaluate_model(split, student, teacher, cascade_config: CascadeConfig,
                   eval_k: int = 5, recall_reference: str = "teacher_top_u",
                   workers: int = 1):
    """Full offline metric suite plus cascade metrics on one split.

    Returns (MetricsReport, report dict).  G-AUC uses click labels over
    displayed candidates; NDCG@k ranks all candidates against graded true
    relevance; Recall@u compares the student's top-u against the teacher's
    top-u (or clicked items).  Deterministic for any worker count.
    """
    if not split:
        raise InputError("empty evaluation split")
    if recall_reference not in RECALL_REFERENCES:
        raise InputError(f"recall_reference {recall_reference!r} not in {RECALL_REFERENCES}")
    student_params = _as_params(student)
    teacher_params = _as_params(teacher)

    def one(req: Request):
        _r, s_logits, _s, _c = score_candidates(student_params, req.query_features, req.features)
        _r, t_logits, _s, _c = score_candidates(teacher_params, req.query_features, req.features)
        casc = cascade_from_scores(req, s_logits, t_logits, cascade_config)

        disp = np.flatnonzero(req.displayed)
        gauc_row = (s_logits[disp], req.clicked[disp].astype(np.int64)) if disp.size else None

        relevance = sigmoid(req.latent_relevance)
        ndcg = ndcg_at_k(relevance[rank_order(s_logits, req.item_ids)], eval_k)

        u = min(cascade_config.u, req.n_candidates)
        selected = set(req.item_ids[rank_order(s_logits, req.item_ids)[:u]].tolist())
        if recall_reference == "teacher_top_u":
            reference = set(req.item_ids[rank_order(t_logits, req.item_ids)[:u]].tolist())
        else:
            reference = set(req.item_ids[req.clicked].tolist())
        rec = recall_at_u(selected, reference)
        return gauc_row, ndcg, rec, casc

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, split))
    else:
        rows = [one(req) for req in split]

    gauc_rows = [r[0] for r in rows if r[0] is not None]
    gauc_value, n_eval, n_skip = gauc_report(gauc_rows)
    n_skip += len(rows) - len(gauc_rows)
    ndcg_mean = float(np.mean([r[1] for r in rows]))
    recalls = [r[2] for r in rows if r[2] is not None]
    recall_mean = float(np.mean(recalls)) if recalls else float("nan")
    end_ndcg = float(np.mean([r[3].end_ndcg_at_k for r in rows]))
    consistency = float(np.mean([r[3].consistency_recall for r in rows]))

    report = MetricsReport(
        gauc=float("nan") if gauc_value is None else float(gauc_value),
        ndcg_at_k=ndcg_mean,
        recall_at_u=recall_mean,
        k=eval_k,
        u=cascade_config.u,
        n_requests_evaluated=n_eval,
        n_requests_skipped=n_skip,
    )
    merged = {
        "metrics": {
            "gauc": report.gauc,
            "ndcg_at_k": report.ndcg_at_k,
            "recall_at_u": report.recall_at_u,
            "end_ndcg_at_k": end_ndcg,
            "consistency_recall": consistency,
        },
        "k": eval_k,
        "u": cascade_config.u,
        "cascade_k": cascade_config.k,
        "recall_reference": recall_reference,
        "n_requests": len(rows),
        "n_requests_evaluated": n_eval,
        "n_requests_skipped": n_skip,
        "n_recall_skipped": len(rows) - len(recalls),
    }
    return report, merged
