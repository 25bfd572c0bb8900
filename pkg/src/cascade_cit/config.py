"""Run configuration: defaults, file parsing, flag overrides, validation.

The config file is flat key=value lines grouped under [section] headers;
``#`` starts a comment.  Every cross-module invariant is checked at load
time and all violations are reported together.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

from .cascade import CascadeConfig
from .data import GenConfig
from .errors import ConfigError
from .models import ModelConfig, validate_pair
from .trainer import RECALL_REFERENCES, TrainConfig

# section -> key -> (type, default). hidden_sizes is a comma list of ints.
DEFAULTS = {
    "data": {
        "n_requests": (int, 20000),
        "v": (int, 200),
        "display_cutoff": (int, 30),
        "query_dim": (int, 16),
        "item_dim": (int, 24),
        "teacher_extra_dims": (int, 8),
        "noise_std": (float, 0.5),
        "seed": (int, 1),
        "n_days": (int, 18),
        "train_days": (int, 14),
        "valid_days": (int, 2),
        "test_days": (int, 2),
    },
    "student": {
        "embedding_dim": (int, 24),
        "hidden_sizes": ("int_list", (32, 16)),
        "representation_dim": (int, 8),
    },
    "teacher": {
        "embedding_dim": (int, 48),
        "hidden_sizes": ("int_list", (128, 64, 32)),
        "representation_dim": (int, 8),
    },
    "train": {
        "scheme": (str, "teacher_top_u"),
        "objective": (str, "ce_plus_cit"),
        "lambda": (float, 0.5),
        "tau": (float, 0.1),
        "K": (int, 15),
        "u": (int, 20),
        "epochs": (int, 6),
        "batch_requests": (int, 64),
        "lr": (float, 0.003),
        "seed": (int, 1),
        "early_stop_patience": (int, 3),
        "kd_temperature": (float, 1.0),
        "cit_variant": (str, "standard"),
        "max_anchors": (int, 0),
    },
    "cascade": {
        "u": (int, 20),
        "k": (int, 5),
    },
    "eval": {
        "k": (int, 5),
        "recall_reference": (str, "teacher_top_u"),
    },
}


def _parse_value(section: str, key: str, raw: str):
    kind, _default = DEFAULTS[section][key]
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == "int_list":
            return tuple(int(t) for t in raw.replace(" ", "").split(",") if t)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind}") from exc


def parse_config_file(path) -> dict:
    """Read a key=value config file into {section: {key: parsed value}}."""
    values = {}
    section = None
    problems = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                if section not in DEFAULTS:
                    problems.append(f"line {lineno}: unknown section [{section}]")
                    section = None
                continue
            if "=" not in line:
                problems.append(f"line {lineno}: expected key=value, got {line!r}")
                continue
            if section is None:
                problems.append(f"line {lineno}: key outside any [section]")
                continue
            key, raw = (t.strip() for t in line.split("=", 1))
            if key not in DEFAULTS[section]:
                problems.append(f"line {lineno}: unknown key {key!r} in [{section}]")
                continue
            try:
                values.setdefault(section, {})[key] = _parse_value(section, key, raw)
            except ConfigError as exc:
                problems.append(str(exc))
    if problems:
        raise ConfigError("; ".join(problems))
    return values


@dataclass
class RunConfig:
    """Resolved configuration for a whole pipeline run."""

    gen: GenConfig
    student: ModelConfig
    teacher: ModelConfig
    train: TrainConfig
    cascade: CascadeConfig
    eval_k: int
    recall_reference: str
    train_days: int
    valid_days: int
    test_days: int
    raw: dict

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def resolve(file_values: dict = None, overrides: dict = None) -> RunConfig:
    """Merge defaults <- config file <- flag overrides, then validate everything.

    ``overrides`` maps "section.key" to already-typed values (None entries
    are ignored).  Raises ConfigError listing every violated invariant.
    """
    merged = {s: {k: d for k, (_t, d) in keys.items()} for s, keys in DEFAULTS.items()}
    for section, kv in (file_values or {}).items():
        merged[section].update(kv)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, key = dotted.split(".", 1)
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown override {dotted!r}")
        merged[section][key] = value

    problems = []
    d = merged["data"]
    try:
        gen = GenConfig(
            n_requests=d["n_requests"],
            candidates_per_request=d["v"],
            display_cutoff=d["display_cutoff"],
            query_dim=d["query_dim"],
            item_dim=d["item_dim"],
            teacher_extra_dims=d["teacher_extra_dims"],
            noise_std=d["noise_std"],
            seed=d["seed"],
            n_days=d["n_days"],
        )
    except ConfigError as exc:
        problems.append(str(exc))
        gen = None
    if d["train_days"] + d["valid_days"] + d["test_days"] > d["n_days"]:
        problems.append(
            f"train+valid+test days {d['train_days']}+{d['valid_days']}+{d['test_days']} exceed n_days {d['n_days']}"
        )

    student = teacher = None
    try:
        student = ModelConfig(
            query_dim=d["query_dim"],
            item_dim=d["item_dim"] - d["teacher_extra_dims"],
            embedding_dim=merged["student"]["embedding_dim"],
            hidden_sizes=merged["student"]["hidden_sizes"],
            representation_dim=merged["student"]["representation_dim"],
            frozen=False,
        )
        teacher = ModelConfig(
            query_dim=d["query_dim"],
            item_dim=d["item_dim"],
            embedding_dim=merged["teacher"]["embedding_dim"],
            hidden_sizes=merged["teacher"]["hidden_sizes"],
            representation_dim=merged["teacher"]["representation_dim"],
            frozen=False,
        )
        validate_pair(student, teacher)
    except ConfigError as exc:
        problems.append(str(exc))

    t = merged["train"]
    train = None
    try:
        train = TrainConfig(
            scheme=t["scheme"],
            objective=t["objective"],
            lam=t["lambda"],
            tau=t["tau"],
            k_negatives=t["K"],
            u=t["u"],
            epochs=t["epochs"],
            batch_requests=t["batch_requests"],
            lr=t["lr"],
            seed=t["seed"],
            early_stop_patience=t["early_stop_patience"],
            kd_temperature=t["kd_temperature"],
            cit_variant=t["cit_variant"],
            max_anchors=t["max_anchors"],
        )
    except ConfigError as exc:
        problems.append(str(exc))
    if t["u"] > d["v"]:
        problems.append(f"train u {t['u']} exceeds candidates per request {d['v']}")
    if t["K"] > d["v"] - 1:
        problems.append(f"K {t['K']} leaves no room for negatives among v={d['v']} candidates")

    c = merged["cascade"]
    casc = None
    try:
        casc = CascadeConfig(v=d["v"], u=c["u"], k=c["k"])
    except ConfigError as exc:
        problems.append(str(exc))

    e = merged["eval"]
    if e["k"] < 1 or e["k"] > d["v"]:
        problems.append(f"eval k {e['k']} outside [1, v={d['v']}]")
    if e["recall_reference"] not in RECALL_REFERENCES:
        problems.append(f"recall_reference {e['recall_reference']!r} not in {RECALL_REFERENCES}")

    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))

    return RunConfig(
        gen=gen,
        student=student,
        teacher=teacher,
        train=train,
        cascade=casc,
        eval_k=e["k"],
        recall_reference=e["recall_reference"],
        train_days=d["train_days"],
        valid_days=d["valid_days"],
        test_days=d["test_days"],
        raw=merged,
    )
