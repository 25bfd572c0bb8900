"""Synthetic click-log generation, dataset file I/O, splits, negative sampling.

The generator mimics a production funnel: each request draws a query
vector and v candidate item vectors; a hidden bilinear map scores true
relevance; a noisy behavioral proxy decides which candidates were
displayed; clicks are Bernoulli in the true relevance, on displayed
candidates only.  Item features carry a teacher-only suffix so the
ranking model has a structural informational advantage over the
pre-ranking model.

Requests are stored column-wise (one array per field) for memory
efficiency at 20k x 200 scale; ``Request.candidates`` materializes the
per-candidate record view on demand.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, InputError
from .rng import Rng
from .tensor import sigmoid

log = logging.getLogger(__name__)

DATASET_MAGIC = "cascade-cit-dataset"
DATASET_VERSION = "v1"

# Internal generator constants (documented, fixed): the bilinear mixing
# matrix is Frobenius-normalized so the relevance signal has unit
# variance, and the display proxy adds unit-variance noise on top of it.
MIXING_STREAM = 0x4D495849  # "MIXI"
PROXY_NOISE_STD = 1.0


@dataclass(frozen=True)
class GenConfig:
    n_requests: int
    candidates_per_request: int
    display_cutoff: int
    query_dim: int
    item_dim: int
    teacher_extra_dims: int
    noise_std: float
    seed: int
    n_days: int

    def __post_init__(self):
        if self.n_requests < 1 or self.candidates_per_request < 1 or self.n_days < 1:
            raise ConfigError(f"counts must be positive: {self}")
        if self.query_dim < 1 or self.item_dim < 1:
            raise ConfigError(f"feature dims must be >= 1: {self}")
        if not 0 <= self.display_cutoff <= self.candidates_per_request:
            raise ConfigError(
                f"display_cutoff {self.display_cutoff} outside [0, v={self.candidates_per_request}]"
            )
        if not 0 <= self.teacher_extra_dims < self.item_dim:
            raise ConfigError(
                f"teacher_extra_dims {self.teacher_extra_dims} must leave a student-visible prefix of item_dim {self.item_dim}"
            )
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be nonnegative, got {self.noise_std}")

    @property
    def student_item_dim(self) -> int:
        return self.item_dim - self.teacher_extra_dims


@dataclass
class Candidate:
    """Record view of one candidate (teacher-visible features; the student
    sees only the leading prefix)."""

    item_id: int
    features: np.ndarray
    displayed: bool
    clicked: bool
    latent_relevance: float


@dataclass
class Request:
    request_id: int
    day: int
    query_features: np.ndarray
    item_ids: np.ndarray
    features: np.ndarray  # (v, item_dim)
    displayed: np.ndarray  # (v,) bool
    clicked: np.ndarray  # (v,) bool
    latent_relevance: np.ndarray  # (v,)

    def __post_init__(self):
        self.query_features = np.asarray(self.query_features, dtype=np.float64)
        self.item_ids = np.asarray(self.item_ids, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.displayed = np.asarray(self.displayed, dtype=bool)
        self.clicked = np.asarray(self.clicked, dtype=bool)
        self.latent_relevance = np.asarray(self.latent_relevance, dtype=np.float64)
        v = self.features.shape[0]
        if v < 1:
            raise DataError("request has no candidates", request_id=self.request_id)
        for name, arr in (("item_ids", self.item_ids), ("displayed", self.displayed),
                          ("clicked", self.clicked), ("latent_relevance", self.latent_relevance)):
            if arr.shape[0] != v:
                raise DataError(f"{name} length {arr.shape[0]} != candidate count {v}",
                                request_id=self.request_id)
        if not (np.all(np.isfinite(self.query_features)) and np.all(np.isfinite(self.features))
                and np.all(np.isfinite(self.latent_relevance))):
            raise DataError("non-finite feature or relevance value", request_id=self.request_id)
        if np.any(self.clicked & ~self.displayed):
            raise DataError("clicked flag on non-displayed candidate", request_id=self.request_id)

    @property
    def n_candidates(self) -> int:
        return self.features.shape[0]

    @property
    def candidates(self) -> list:
        return [
            Candidate(int(self.item_ids[j]), self.features[j], bool(self.displayed[j]),
                      bool(self.clicked[j]), float(self.latent_relevance[j]))
            for j in range(self.n_candidates)
        ]

    @classmethod
    def from_candidates(cls, request_id: int, day: int, query_features, cands) -> "Request":
        if not cands:
            raise DataError("request has no candidates", request_id=request_id)
        return cls(
            request_id,
            day,
            np.asarray(query_features, dtype=np.float64),
            np.array([c.item_id for c in cands], dtype=np.int64),
            np.stack([np.asarray(c.features, dtype=np.float64) for c in cands]),
            np.array([c.displayed for c in cands], dtype=bool),
            np.array([c.clicked for c in cands], dtype=bool),
            np.array([c.latent_relevance for c in cands], dtype=np.float64),
        )


def mixing_matrix(config: GenConfig) -> np.ndarray:
    """The fixed seeded bilinear map behind latent relevance, unit Frobenius norm."""
    rng = Rng(config.seed).derive(MIXING_STREAM)
    m = rng.normal((config.item_dim, config.query_dim))
    return m / np.linalg.norm(m)


def _generate_request(config: GenConfig, mixing: np.ndarray, request_id: int) -> Request:
    rng = Rng(config.seed).derive(request_id)
    v = config.candidates_per_request
    q = rng.normal(config.query_dim)
    z = rng.normal((v, config.item_dim))
    noise = rng.normal(v, config.noise_std) if config.noise_std > 0 else np.zeros(v)
    latent = z @ (mixing @ q) + noise
    proxy = latent + rng.normal(v, PROXY_NOISE_STD)
    displayed = np.zeros(v, dtype=bool)
    if config.display_cutoff > 0:
        displayed[np.argsort(-proxy, kind="stable")[: config.display_cutoff]] = True
    clicked = displayed & (rng.uniform(v) < sigmoid(latent))
    return Request(
        request_id=request_id,
        day=request_id % config.n_days,
        query_features=q,
        item_ids=np.arange(v, dtype=np.int64),
        features=z,
        displayed=displayed,
        clicked=clicked,
        latent_relevance=latent,
    )


def generate_requests(config: GenConfig, workers: int = 1) -> list:
    """Generate the corpus in memory. Per-request streams are keyed by
    seed XOR request_id, so output is identical for any worker count."""
    mixing = mixing_matrix(config)
    ids = range(config.n_requests)
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda i: _generate_request(config, mixing, i), ids))
    return [_generate_request(config, mixing, i) for i in ids]


def _fmt(values) -> str:
    return ",".join(f"{x:.17g}" for x in values)


def save_dataset(path, corpus, query_dim: int, item_dim: int) -> None:
    """Write the newline-delimited dataset format (17 significant digits)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{DATASET_MAGIC} {DATASET_VERSION} {query_dim} {item_dim}\n")
        for req in corpus:
            parts = [str(req.request_id), str(req.day), _fmt(req.query_features)]
            for j in range(req.n_candidates):
                parts.append(
                    f"{req.item_ids[j]},{_fmt(req.features[j])},"
                    f"{int(req.displayed[j])},{int(req.clicked[j])},{req.latent_relevance[j]:.17g}"
                )
            fh.write(" ".join(parts) + "\n")


def generate_corpus(config: GenConfig, path, workers: int = 1) -> list:
    """Generate and write a dataset file; returns the in-memory corpus."""
    corpus = generate_requests(config, workers=workers)
    save_dataset(path, corpus, config.query_dim, config.item_dim)
    return corpus


def load_dataset(path) -> list:
    """Parse a dataset file back into Requests; lossless against save_dataset."""
    corpus = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            return corpus  # empty file: empty corpus
        tokens = header.split()
        if len(tokens) != 4 or tokens[0] != DATASET_MAGIC:
            raise DataError(f"bad dataset header {header!r}", line=1)
        if tokens[1] != DATASET_VERSION:
            raise DataError(f"unsupported dataset version {tokens[1]} (want {DATASET_VERSION})", line=1)
        try:
            query_dim, item_dim = int(tokens[2]), int(tokens[3])
        except ValueError as exc:
            raise DataError(f"bad dims in header {header!r}", line=1) from exc
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            corpus.append(_parse_request(line, lineno, query_dim, item_dim))
    return corpus


def _parse_request(line: str, lineno: int, query_dim: int, item_dim: int) -> Request:
    parts = line.split(" ")
    if len(parts) < 4:
        raise DataError("truncated request record", line=lineno)
    try:
        request_id, day = int(parts[0]), int(parts[1])
        q = np.array(parts[2].split(","), dtype=np.float64)
        if q.size != query_dim:
            raise ValueError(f"query vector has {q.size} dims, header says {query_dim}")
        n = len(parts) - 3
        item_ids = np.empty(n, dtype=np.int64)
        features = np.empty((n, item_dim), dtype=np.float64)
        displayed = np.empty(n, dtype=bool)
        clicked = np.empty(n, dtype=bool)
        latent = np.empty(n, dtype=np.float64)
        for j, blob in enumerate(parts[3:]):
            fields = blob.split(",")
            if len(fields) != item_dim + 4:
                raise ValueError(f"candidate {j} has {len(fields)} fields, want {item_dim + 4}")
            item_ids[j] = int(fields[0])
            features[j] = np.array(fields[1 : 1 + item_dim], dtype=np.float64)
            displayed[j] = bool(int(fields[item_dim + 1]))
            clicked[j] = bool(int(fields[item_dim + 2]))
            latent[j] = float(fields[item_dim + 3])
        return Request(request_id, day, q, item_ids, features, displayed, clicked, latent)
    except DataError:
        raise
    except (ValueError, IndexError) as exc:
        raise DataError(f"malformed request record: {exc}", line=lineno) from exc


def partition_dataset(corpus, train_days: int, valid_days: int, test_days: int):
    """Split by contiguous day ranges: first train_days, then valid, then test."""
    if min(train_days, valid_days, test_days) < 0:
        raise ConfigError("day counts must be nonnegative")
    n_days = max((r.day for r in corpus), default=-1) + 1
    need = train_days + valid_days + test_days
    if need > n_days:
        raise ConfigError(f"split needs {need} days but corpus has {n_days}")
    t_end = train_days
    v_end = train_days + valid_days
    s_end = need
    train = [r for r in corpus if r.day < t_end]
    valid = [r for r in corpus if t_end <= r.day < v_end]
    test = [r for r in corpus if v_end <= r.day < s_end]
    return train, valid, test


def _uniform_k_of(rng: Rng, pool_size: int, k: int) -> np.ndarray:
    """k distinct indices of range(pool_size), uniform, via order statistics
    of one uniform block (vector-friendly and stream-stable)."""
    u = rng.uniform(pool_size)
    if k >= pool_size:
        return np.argsort(u, kind="stable")
    part = np.argpartition(u, k)[:k]
    return part


def sample_negatives(request: Request, labels, positive_index: int, k: int, rng: Rng) -> list:
    """K label-0 candidate indices from the same request, uniform without
    replacement; falls back to replacement (and logs) when the request has
    fewer than K negatives."""
    lab = np.asarray(labels.labels if hasattr(labels, "labels") else labels)
    if lab.shape[0] != request.n_candidates:
        raise InputError(
            f"labels length {lab.shape[0]} != candidate count {request.n_candidates}"
        )
    if lab[positive_index] != 1:
        raise InputError(f"index {positive_index} is not a positive under the active labels")
    if k < 1:
        raise InputError(f"K must be >= 1, got {k}")
    pool = np.flatnonzero(lab == 0)
    if pool.size == 0:
        raise InputError(f"request {request.request_id} has no negatives to sample")
    if pool.size >= k:
        picked = pool[_uniform_k_of(rng, pool.size, k)]
    else:
        log.warning(
            "request %s has %d negatives < K=%d; sampling with replacement",
            request.request_id, pool.size, k,
        )
        picked = pool[rng.choice_with_replacement(pool.size, k)]
    return [int(i) for i in picked]


def sample_negatives_batch(negative_pool: np.ndarray, n_anchors: int, k: int, rng: Rng) -> np.ndarray:
    """(n_anchors, K) negative indices, one without-replacement draw per row.

    Uses a single (n_anchors, pool) uniform block so the whole request costs
    one rng call; falls back to replacement when the pool is short.
    """
    pool = np.asarray(negative_pool)
    if pool.size == 0:
        raise InputError("empty negative pool")
    if pool.size >= k:
        u = rng.uniform((n_anchors, pool.size))
        picked = np.argpartition(u, k - 1, axis=1)[:, :k]
    else:
        picked = rng.choice_with_replacement(pool.size, n_anchors * k).reshape(n_anchors, k)
    return pool[picked]
