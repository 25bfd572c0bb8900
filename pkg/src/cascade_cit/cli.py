"""Command-line pipeline: gen-data, train-teacher, train-student, eval,
cascade-eval, ablate.

Every subcommand is idempotent: outputs depend only on inputs and seeds,
reports embed the seed and a config hash, and JSON files use sorted keys
so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .cascade import evaluate_cascade
from .config import RunConfig, parse_config_file, resolve
from .data import generate_corpus, load_dataset, partition_dataset
from .errors import CascadeCitError
from .trainer import Checkpoint, evaluate_model, train_student, train_teacher

ABLATION_OBJECTIVES = ("ce_only", "ce_plus_kd", "pairwise", "ce_plus_cit")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="override data and train seeds")
    parser.add_argument("--workers", type=int, default=1, help="workers for parallel sections")
    parser.add_argument("--out", type=Path, default=Path("runs"), help="output directory")


def _add_train_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scheme", choices=("click", "teacher_top_u"), default=None)
    parser.add_argument("--objective", choices=ABLATION_OBJECTIVES, default=None)
    parser.add_argument("--lambda", dest="lam", type=float, default=None)
    parser.add_argument("--tau", type=float, default=None)
    parser.add_argument("--K", type=int, default=None)
    parser.add_argument("--u", type=int, default=None)
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--batch-requests", type=int, default=None)
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--early-stop-patience", type=int, default=None)
    parser.add_argument("--kd-temperature", type=float, default=None)
    parser.add_argument("--cit-variant", choices=("literal", "standard"), default=None)
    parser.add_argument("--max-anchors", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cascade-cit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext, train_flags in (
        ("gen-data", "generate the synthetic click-log dataset", False),
        ("train-teacher", "train the ranking (teacher) model on click labels", True),
        ("train-student", "train the pre-ranking (student) model", True),
        ("eval", "offline metric suite on the test split", False),
        ("cascade-eval", "cascade metrics only", False),
        ("ablate", "train all objectives on identical data/seeds and compare", True),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        if train_flags:
            _add_train_overrides(p)
    return parser


def _resolve_config(args) -> RunConfig:
    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {}
    for attr, dotted in (
        ("scheme", "train.scheme"), ("objective", "train.objective"), ("lam", "train.lambda"),
        ("tau", "train.tau"), ("K", "train.K"), ("u", "train.u"), ("epochs", "train.epochs"),
        ("batch_requests", "train.batch_requests"), ("lr", "train.lr"),
        ("early_stop_patience", "train.early_stop_patience"),
        ("kd_temperature", "train.kd_temperature"), ("cit_variant", "train.cit_variant"),
        ("max_anchors", "train.max_anchors"),
    ):
        if hasattr(args, attr):
            overrides[dotted] = getattr(args, attr)
    if args.seed is not None:
        overrides["data.seed"] = args.seed
        overrides["train.seed"] = args.seed
    return resolve(file_values, overrides)


def _paths(out: Path) -> dict:
    return {
        "dataset": out / "dataset.txt",
        "teacher": out / "teacher.ckpt",
        "student": out / "student.ckpt",
        "report": out / "report.json",
        "cascade_report": out / "cascade_report.json",
        "ablation": out / "ablation.json",
        "teacher_log": out / "train_teacher.log",
        "student_log": out / "train_student.log",
    }


def _load_corpus(paths, cfg: RunConfig):
    if not paths["dataset"].exists():
        raise CascadeCitError(f"dataset not found at {paths['dataset']}; run gen-data first")
    corpus = load_dataset(paths["dataset"])
    return partition_dataset(corpus, cfg.train_days, cfg.valid_days, cfg.test_days)


def _load_ckpt(path: Path, role: str) -> Checkpoint:
    if not path.exists():
        raise CascadeCitError(f"missing {role} checkpoint file: {path}")
    return Checkpoint.load(path)


def _write_report(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _print_table(rows: list, columns: list) -> None:
    widths = [max(len(str(c)), *(len(_cell(r, c)) for r in rows)) for c in columns]
    header = "  ".join(str(c).ljust(w) for c, w in zip(columns, widths))
    print(header)
    print("-" * len(header))
    for r in rows:
        print("  ".join(_cell(r, c).ljust(w) for c, w in zip(columns, widths)))


def _cell(row: dict, column: str) -> str:
    value = row.get(column, "")
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def _report_payload(cfg: RunConfig, body: dict) -> dict:
    return {
        "config": cfg.raw,
        "config_hash": cfg.config_hash(),
        "seed": {"data": cfg.gen.seed, "train": cfg.train.seed},
        **body,
    }


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    paths = _paths(args.out)
    corpus = generate_corpus(cfg.gen, paths["dataset"], workers=args.workers)
    clicked = sum(1 for r in corpus if r.clicked.any())
    print(f"wrote {paths['dataset']}: {len(corpus)} requests, "
          f"{sum(r.n_candidates for r in corpus)} candidates, {clicked} requests with clicks")
    return 0


def cmd_train_teacher(args) -> int:
    cfg = _resolve_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    paths = _paths(args.out)
    train, valid, _test = _load_corpus(paths, cfg)
    paths["teacher_log"].unlink(missing_ok=True)
    ckpt = train_teacher(train, valid, cfg.train, cfg.teacher, log_path=paths["teacher_log"])
    ckpt.save(paths["teacher"])
    print(f"teacher checkpoint -> {paths['teacher']} "
          f"(best epoch {ckpt.epoch}, valid G-AUC {max(ckpt.valid_gauc_history):.4f})")
    return 0


def cmd_train_student(args) -> int:
    cfg = _resolve_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    paths = _paths(args.out)
    train, valid, _test = _load_corpus(paths, cfg)
    teacher = _load_ckpt(paths["teacher"], "teacher")
    paths["student_log"].unlink(missing_ok=True)
    ckpt = train_student(train, valid, teacher, cfg.train, cfg.student,
                         log_path=paths["student_log"])
    ckpt.save(paths["student"])
    print(f"student checkpoint -> {paths['student']} "
          f"(objective {cfg.train.objective}, best epoch {ckpt.epoch}, "
          f"valid G-AUC {max(ckpt.valid_gauc_history):.4f})")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    paths = _paths(args.out)
    _train, _valid, test = _load_corpus(paths, cfg)
    student = _load_ckpt(paths["student"], "student")
    teacher = _load_ckpt(paths["teacher"], "teacher")
    _report, merged = evaluate_model(test, student, teacher, cfg.cascade, eval_k=cfg.eval_k,
                                     recall_reference=cfg.recall_reference, workers=args.workers)
    payload = _report_payload(cfg, merged)
    _write_report(paths["report"], payload)
    rows = [{"metric": k, "value": v} for k, v in sorted(merged["metrics"].items())]
    _print_table(rows, ["metric", "value"])
    print(f"report -> {paths['report']}")
    return 0


def cmd_cascade_eval(args) -> int:
    cfg = _resolve_config(args)
    paths = _paths(args.out)
    _train, _valid, test = _load_corpus(paths, cfg)
    student = _load_ckpt(paths["student"], "student")
    teacher = _load_ckpt(paths["teacher"], "teacher")
    agg, _per_request = evaluate_cascade(test, student.params, teacher.params, cfg.cascade,
                                         workers=args.workers)
    payload = _report_payload(cfg, {"cascade": agg})
    _write_report(paths["cascade_report"], payload)
    rows = [{"metric": k, "value": v} for k, v in sorted(agg.items())]
    _print_table(rows, ["metric", "value"])
    print(f"report -> {paths['cascade_report']}")
    return 0


def cmd_ablate(args) -> int:
    from dataclasses import replace

    cfg = _resolve_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    paths = _paths(args.out)
    train, valid, test = _load_corpus(paths, cfg)
    if paths["teacher"].exists():
        teacher = _load_ckpt(paths["teacher"], "teacher")
    else:
        teacher = train_teacher(train, valid, cfg.train, cfg.teacher)
        teacher.save(paths["teacher"])
    results = {}
    for objective in ABLATION_OBJECTIVES:
        train_cfg = replace(cfg.train, objective=objective)
        ckpt = train_student(train, valid, teacher, train_cfg, cfg.student)
        _report, merged = evaluate_model(test, ckpt, teacher, cfg.cascade, eval_k=cfg.eval_k,
                                         recall_reference=cfg.recall_reference,
                                         workers=args.workers)
        results[objective] = merged["metrics"]
    payload = _report_payload(cfg, {"ablation": results})
    _write_report(paths["ablation"], payload)
    rows = [
        {"Method": objective, "NDCG": m["ndcg_at_k"], "G-AUC": m["gauc"], "Recall": m["recall_at_u"]}
        for objective, m in results.items()
    ]
    _print_table(rows, ["Method", "NDCG", "G-AUC", "Recall"])
    print(f"report -> {paths['ablation']}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-teacher": cmd_train_teacher,
    "train-student": cmd_train_student,
    "eval": cmd_eval,
    "cascade-eval": cmd_cascade_eval,
    "ablate": cmd_ablate,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (CascadeCitError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
