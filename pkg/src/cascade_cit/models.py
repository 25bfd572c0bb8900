"""Student, teacher, and two-tower scoring networks.

Each network maps concatenated (query, item) features through an
embedding layer and a relu MLP to a representation vector (the last
hidden layer, identity-activated so inner products are unconstrained),
then to a scalar logit and sigmoid score.  Id-style features are assumed
to arrive one-hot/dense, so the embedding table is the first dense
layer's weight matrix.

Teacher checkpoints carry ``frozen=True``; nothing in this package ever
computes or applies a gradient for a frozen model's parameters.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, ContractError, DataError, InputError, ShapeError
from .rng import Rng
from .tensor import DenseMatrix, dense_backward, dense_forward, sigmoid

CHECKPOINT_FORMAT = "cascade-cit-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    query_dim: int
    item_dim: int
    embedding_dim: int
    hidden_sizes: tuple
    representation_dim: int
    frozen: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.query_dim < 0 or self.item_dim < 0 or self.query_dim + self.item_dim < 1:
            raise ConfigError(f"need at least one input feature, got query={self.query_dim} item={self.item_dim}")
        if not self.hidden_sizes:
            raise ConfigError("hidden_sizes must be non-empty")
        for size in (self.embedding_dim, *self.hidden_sizes, self.representation_dim):
            if size < 1:
                raise ConfigError(f"zero-dimension layer in {self}")

    @property
    def input_dim(self) -> int:
        return self.query_dim + self.item_dim

    def layer_plan(self):
        """(name, in_dim, out_dim, activation) for every dense layer in order."""
        plan = [("embed", self.input_dim, self.embedding_dim, "relu")]
        prev = self.embedding_dim
        for i, h in enumerate(self.hidden_sizes):
            plan.append((f"dense{i}", prev, h, "relu"))
            prev = h
        plan.append(("rep", prev, self.representation_dim, "identity"))
        plan.append(("out", self.representation_dim, 1, "identity"))
        return plan


@dataclass
class ModelParams:
    """Ordered named parameter matrices plus the config that shaped them."""

    config: ModelConfig
    params: dict  # name -> DenseMatrix, insertion-ordered

    @property
    def frozen(self) -> bool:
        return self.config.frozen

    def param_count(self) -> int:
        return sum(m.rows * m.cols for m in self.params.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.params.items()})

    def payload_bytes(self) -> bytes:
        """Concatenated little-endian float64 bytes of all parameters in order."""
        return b"".join(m.a.astype("<f8").tobytes(order="C") for m in self.params.values())


def build_model(config: ModelConfig, rng: Rng) -> ModelParams:
    """Initialize parameters with scaled normals, std = 1/sqrt(fan_in); biases zero."""
    params = {}
    for name, fan_in, fan_out, _act in config.layer_plan():
        std = 1.0 / np.sqrt(max(fan_in, 1))
        params[f"{name}_w"] = DenseMatrix.from_array(rng.normal((fan_in, fan_out), std))
        params[f"{name}_b"] = DenseMatrix.zeros(1, fan_out)
    return ModelParams(config, params)


def validate_pair(student: ModelConfig, teacher: ModelConfig) -> None:
    """Cross-checks required before transfer training."""
    if student.representation_dim != teacher.representation_dim:
        raise ConfigError(
            f"representation dims differ: student {student.representation_dim}, teacher {teacher.representation_dim}"
        )
    s_count = _config_param_count(student)
    t_count = _config_param_count(teacher)
    if t_count <= s_count:
        raise ConfigError(f"teacher must have more parameters than student ({t_count} <= {s_count})")


def _config_param_count(config: ModelConfig) -> int:
    return sum(fi * fo + fo for _n, fi, fo, _a in config.layer_plan())


@dataclass
class ForwardCache:
    """Per-call state for backward(): layer caches plus the representation."""

    layer_caches: list
    rep: np.ndarray
    logits: np.ndarray


def _check_features(config: ModelConfig, query_features, item_features):
    q = np.asarray(query_features, dtype=np.float64).reshape(-1)
    it = np.asarray(item_features, dtype=np.float64).reshape(-1)
    if q.size != config.query_dim or it.size != config.item_dim:
        raise ShapeError(
            f"feature lengths ({q.size}, {it.size}) do not match config ({config.query_dim}, {config.item_dim})"
        )
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(it))):
        raise InputError("non-finite feature value in model input")
    return np.concatenate([q, it])


def forward_batch(params: ModelParams, x: np.ndarray):
    """Forward over a feature matrix (rows = instances).

    Returns (reps (n,d), logits (n,), scores (n,), cache).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.config.input_dim:
        raise ShapeError(f"input has {x.shape[1]} features but config expects {params.config.input_dim}")
    caches = []
    h = DenseMatrix.from_array(x)
    plan = params.config.layer_plan()
    for name, _fi, _fo, act in plan[:-1]:
        h, cache = dense_forward(h, params.params[f"{name}_w"], params.params[f"{name}_b"], act)
        caches.append(cache)
    rep = h.a
    out, out_cache = dense_forward(h, params.params["out_w"], params.params["out_b"], "identity")
    caches.append(out_cache)
    logits = out.a[:, 0]
    scores = sigmoid(logits)
    return rep, logits, scores, ForwardCache(caches, rep, logits)


def backward_batch(params: ModelParams, cache: ForwardCache, dlogits=None, dreps=None) -> dict:
    """Gradients of sum(dlogits * logit) + sum(dreps * rep) w.r.t. every parameter.

    Either upstream term may be None.  Returns name -> DenseMatrix matching
    ``params.params``.
    """
    if params.frozen:
        raise ContractError("backward_batch called on frozen parameters")
    n = cache.rep.shape[0]
    grads = {}
    plan = params.config.layer_plan()
    # scoring layer
    if dlogits is not None:
        up = DenseMatrix.from_array(np.asarray(dlogits, dtype=np.float64).reshape(n, 1))
        gx, gw, gb = dense_backward(cache.layer_caches[-1], up)
        grads["out_w"], grads["out_b"] = gw, gb
        drep_total = gx.a
    else:
        grads["out_w"] = DenseMatrix.zeros(*params.params["out_w"].shape)
        grads["out_b"] = DenseMatrix.zeros(*params.params["out_b"].shape)
        drep_total = np.zeros_like(cache.rep)
    if dreps is not None:
        drep_total = drep_total + np.asarray(dreps, dtype=np.float64).reshape(cache.rep.shape)
    up = DenseMatrix.from_array(drep_total)
    for (name, _fi, _fo, _act), layer_cache in zip(reversed(plan[:-1]), reversed(cache.layer_caches[:-1])):
        gx, gw, gb = dense_backward(layer_cache, up)
        grads[f"{name}_w"], grads[f"{name}_b"] = gw, gb
        up = gx
    return {name: grads[name] for name in params.params}


def forward(params: ModelParams, query_features, item_features):
    """Score one (query, item) pair. Returns (rep, score, cache)."""
    x = _check_features(params.config, query_features, item_features)
    reps, _logits, scores, cache = forward_batch(params, x[None, :])
    return reps[0], float(scores[0]), cache


def forward_frozen(params: ModelParams, query_features, item_features):
    """Forward for a frozen model: same values as forward(), no cache, no gradients."""
    if not params.frozen:
        raise ContractError("forward_frozen requires frozen params")
    rep, score, _cache = forward(params, query_features, item_features)
    return rep, score


def score_candidates(params: ModelParams, query_features, item_features_matrix):
    """Score every row of an item-feature matrix against one query.

    Item features may be wider than the model's config (teacher-only
    suffix); the model consumes the leading ``config.item_dim`` columns.
    Returns (reps, logits, scores, cache); cache is None for frozen models.
    """
    q = np.asarray(query_features, dtype=np.float64).reshape(-1)
    feats = np.atleast_2d(np.asarray(item_features_matrix, dtype=np.float64))
    cfg = params.config
    if q.size != cfg.query_dim:
        raise ShapeError(f"query has {q.size} features but config expects {cfg.query_dim}")
    if feats.shape[1] < cfg.item_dim:
        raise ShapeError(f"items have {feats.shape[1]} features but config expects {cfg.item_dim}")
    n = feats.shape[0]
    x = np.concatenate([np.broadcast_to(q, (n, q.size)), feats[:, : cfg.item_dim]], axis=1)
    reps, logits, scores, cache = forward_batch(params, x)
    if params.frozen:
        return reps, logits, scores, None
    return reps, logits, scores, cache


def frozen_forward_batch(params: ModelParams, x: np.ndarray):
    """Batched scoring for a frozen model; returns (reps, logits, scores) only."""
    if not params.frozen:
        raise ContractError("frozen_forward_batch requires frozen params")
    reps, logits, scores, _cache = forward_batch(params, x)
    return reps, logits, scores


def vector_product_forward(query_tower: ModelParams, item_tower: ModelParams, query_features, item_features) -> float:
    """Two-tower score: sigmoid of the inner product of tower representations."""
    q_rep, _s, _c = forward(query_tower, query_features, [])
    i_rep, _s, _c = forward(item_tower, [], item_features)
    if q_rep.shape != i_rep.shape:
        raise ShapeError(f"tower outputs disagree: {q_rep.shape} vs {i_rep.shape}")
    return float(sigmoid(np.array(q_rep @ i_rep)))


# ---------------------------------------------------------------------------
# Checkpoint container: one JSON header line, then raw little-endian float64
# parameter bytes, integrity-checked by sha256.
# ---------------------------------------------------------------------------


def save_checkpoint(path, params: ModelParams, extra: Optional[dict] = None) -> None:
    payload = params.payload_bytes()
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "params": [
            {"name": name, "rows": m.rows, "cols": m.cols} for name, m in params.params.items()
        ],
        "frozen": params.frozen,
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    if extra:
        header["extra"] = extra
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)


def load_checkpoint(path):
    """Restore (ModelParams, extra dict) bit-identically from save_checkpoint output."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"unreadable checkpoint header in {path}: {exc}") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if header.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"checkpoint version {header.get('version')} unsupported (want {CHECKPOINT_VERSION})")
    if hashlib.sha256(payload).hexdigest() != header["checksum"]:
        raise DataError(f"checksum mismatch in {path}: file is corrupt")
    cfg_dict = dict(header["config"])
    cfg_dict["hidden_sizes"] = tuple(cfg_dict["hidden_sizes"])
    config = ModelConfig(**cfg_dict)
    params = {}
    offset = 0
    for entry in header["params"]:
        n = entry["rows"] * entry["cols"]
        chunk = np.frombuffer(payload, dtype="<f8", count=n, offset=offset * 8)
        params[entry["name"]] = DenseMatrix(entry["rows"], entry["cols"], chunk.copy())
        offset += n
    if offset * 8 != len(payload):
        raise DataError(f"checkpoint payload length mismatch in {path}")
    return ModelParams(config, params), header.get("extra", {})
