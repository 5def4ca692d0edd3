"""Command-line entry point: ``glaucoscreen <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from .classify import VIEWS, LinearModel, TrainConfig, read_predictions, write_predictions
from .config import RunConfig
from .dataset import (
    TEST,
    TRAIN,
    VAL,
    FoldPlan,
    ManifestError,
    ManifestRecord,
    load_manifest,
    plan_splits,
    subsample_fraction,
    write_csv_atomic,
)
from .ensemble import EnsembleConfig
from .metrics import evaluate, report_jsonl
from .pipeline import (
    fuse_records,
    load_view_data,
    predict_ids,
    preprocess_manifest,
    resolve_jobs,
    run_crossval,
    train_view,
    write_history,
)
from .synthetic import DEFAULT_DOMAIN, SHIFTED_DOMAIN, generate_synthetic

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
DOMAINS = {"default": DEFAULT_DOMAIN, "shifted": SHIFTED_DOMAIN}

log = logging.getLogger("glaucoscreen")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _global_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="overrides the config seed")
    parser.add_argument("--jobs", type=int, default=default, help="worker processes (env PIPELINE_JOBS)")
    parser.add_argument("--config", type=Path, default=default, help="key = value experiment config")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="glaucoscreen", description="Three-view glaucoma screening pipeline.")
    _global_options(parser, suppress=False)
    common = _Parser(add_help=False)
    _global_options(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic fundus dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--imbalance", type=float, default=9.0, help="normal:referable ratio")
    p.add_argument("--size", type=int, default=256, help="image side in pixels")
    p.add_argument("--domain", choices=sorted(DOMAINS), default="default")
    p.add_argument("--prefix", default="syn", help="id prefix")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("preprocess", parents=[common], help="write original/cropped/polar views")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--masks", type=Path, help="directory of precomputed <id>.pgm disc masks")
    p.add_argument("--image-root", type=Path, help="base for relative manifest paths")

    p = sub.add_parser("split", parents=[common], help="write the holdout + k-fold plan")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--test-count", help="integer or 'auto'")
    p.add_argument("--k", type=int)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", parents=[common], help="train one view's model on one fold")
    p.add_argument("--views", type=Path, required=True)
    p.add_argument("--plan", type=Path, required=True)
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--view", choices=VIEWS, required=True)
    p.add_argument("--init", type=Path, help="model to fine-tune")
    p.add_argument("--train-fraction", type=float, default=1.0, help="stratified share of the fold's train ids")
    p.add_argument("--history", type=Path, help="per-epoch loss/AUC CSV")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("predict", parents=[common], help="write per-view predictions")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--views", type=Path, required=True)
    p.add_argument("--view", choices=VIEWS, required=True)
    p.add_argument("--plan", type=Path, help="fold plan selecting the subset")
    p.add_argument("--subset", choices=("all", TEST, TRAIN, VAL), default="all")
    p.add_argument("--fold", type=int, help="fold for --subset train/val")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("fuse", parents=[common], help="weighted fusion of prediction CSVs")
    p.add_argument("predictions", type=Path, nargs="+")
    p.add_argument("--weights", type=Path, help="weight.<view> = w file (default: --config or 2/0.5/0.5)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", parents=[common], help="AUC/F1/confusion of a prediction CSV")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--view", help="evaluate only rows of this view")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", type=Path, required=True, help="report CSV; a .jsonl twin is written next to it")

    p = sub.add_parser("crossval", parents=[common], help="full k-fold experiment with fusion")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--views", type=Path, help="reuse a preprocess output instead of preprocessing")
    p.add_argument("--masks", type=Path)
    p.add_argument("--image-root", type=Path)
    p.add_argument("--out", type=Path, required=True)
    return parser


def load_config(args: argparse.Namespace, extra: dict[str, str] | None = None) -> RunConfig:
    overrides = dict(extra or {})
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.config is not None and not args.config.exists():
        raise FileNotFoundError(f"config file not found: {args.config}")
    return RunConfig.load(args.config, overrides)


def _require(path: Path | None, what: str) -> None:
    if path is not None and not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")


def cmd_synth(args) -> int:
    cfg = load_config(args)
    records = generate_synthetic(
        args.n, args.imbalance, args.size, cfg.seed, args.out, DOMAINS[args.domain], args.prefix, args.jobs
    )
    positives = sum(r.label for r in records)
    print(f"wrote {len(records)} images ({positives} referable) to {args.out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    _require(args.manifest, "manifest")
    _require(args.masks, "masks directory")
    cfg = load_config(args)
    summary = preprocess_manifest(args.manifest, args.out, args.masks, cfg.clahe, args.image_root, args.jobs)
    print(f"preprocessed {summary.count} images; fallback crop used for {summary.fallback_count} ({100 * summary.fallback_rate:.1f}%)")
    return EXIT_OK


def cmd_split(args) -> int:
    _require(args.manifest, "manifest")
    extra = {}
    if args.test_count is not None:
        extra["split.test_count"] = args.test_count
    if args.k is not None:
        extra["split.k"] = str(args.k)
    if args.val_fraction is not None:
        extra["split.val_fraction"] = str(args.val_fraction)
    cfg = load_config(args, extra)
    records = load_manifest(args.manifest)
    plan = plan_splits(records, cfg.test_count, cfg.k, cfg.val_fraction, cfg.seed)
    plan.write_csv(args.out)
    labels = {r.id: r.label for r in records}
    print(f"{'fold':>4} {'train':>8} {'val':>8} {'test':>8}")
    for i in range(plan.k):
        train, val = plan.fold(i)
        print(f"{i:>4} {len(train):>8} {len(val):>8} {len(plan.test_ids):>8}")
    pos = sum(labels[i] for i in plan.test_ids)
    print(f"test referable: {pos} of {len(plan.test_ids)}")
    return EXIT_OK


def _fold_ids(plan: FoldPlan, fold: int | None, role: str) -> list[str]:
    if role == TEST:
        return plan.test_ids
    if fold is None:
        raise UsageError(f"--fold is required for --subset {role}")
    train, val = plan.fold(fold)
    return train if role == TRAIN else val


def cmd_train(args) -> int:
    for path, what in ((args.views, "views directory"), (args.plan, "fold plan"), (args.init, "init model")):
        _require(path, what)
    cfg = load_config(args)
    plan = FoldPlan.read_csv(args.plan)
    train_ids, val_ids = plan.fold(args.fold)
    init = LinearModel.load(args.init) if args.init else None
    downsample = init.downsample if init else cfg.train.downsample
    clahe_params = init.clahe if init else (cfg.clahe if cfg.classify_clahe else None)
    data = load_view_data(args.views, args.view, downsample, clahe_params, args.jobs)
    if args.train_fraction < 1.0:
        recs = [ManifestRecord(i, "", int(data.labels[data.row[i]])) for i in train_ids]
        train_ids = [r.id for r in subsample_fraction(recs, args.train_fraction, cfg.seed)]
    train_cfg = TrainConfig(cfg.train.epochs, cfg.train.batch_size, cfg.train.learning_rate, cfg.seed, downsample)
    model, history = train_view(data, train_ids, val_ids, train_cfg, cfg.augment, init, clahe_params)
    model.save(args.out)
    if args.history:
        write_history(history, args.history)
    print(f"trained {args.view} on fold {args.fold}: {len(train_ids)} train, best epoch {history.best_epoch}")
    return EXIT_OK


def cmd_predict(args) -> int:
    for path, what in ((args.model, "model"), (args.views, "views directory"), (args.plan, "fold plan")):
        _require(path, what)
    load_config(args)
    model = LinearModel.load(args.model)
    data = load_view_data(args.views, args.view, model.downsample, model.clahe, resolve_jobs(args.jobs))
    if args.subset == "all":
        ids = list(data.ids)
    else:
        if args.plan is None:
            raise UsageError(f"--plan is required for --subset {args.subset}")
        ids = _fold_ids(FoldPlan.read_csv(args.plan), args.fold, args.subset)
    write_predictions(predict_ids(model, data, ids), args.out)
    print(f"wrote {len(ids)} {args.view} predictions to {args.out}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    for p in args.predictions:
        _require(p, "prediction file")
    if args.weights is not None:
        _require(args.weights, "weights file")
        weights = EnsembleConfig.load(args.weights)
    else:
        weights = EnsembleConfig(dict(load_config(args).weights))
    fused = fuse_records([read_predictions(p) for p in args.predictions], weights)
    write_predictions(fused, args.out)
    print(f"fused {len(fused)} ids into {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _require(args.pred, "prediction file")
    _require(args.manifest, "manifest")
    records = read_predictions(args.pred)
    if args.view is not None:
        records = [r for r in records if r.view == args.view]
    preds: dict[str, tuple[float, float]] = {}
    for r in records:
        if r.id in preds:
            raise ValueError(f"{args.pred}: several rows for id {r.id!r}; pick one with --view")
        preds[r.id] = r.probs
    if not preds:
        raise ValueError(f"{args.pred}: no predictions to evaluate")
    truth = {r.id: r.label for r in load_manifest(args.manifest)}
    report = evaluate(preds, truth, args.threshold)
    row = report.as_dict()
    cols = ("auc", "f1", "tp", "fp", "tn", "fn", "n", "threshold")
    write_csv_atomic(args.out, cols, [[f"{row[c]:.9g}" if isinstance(row[c], float) else row[c] for c in cols]])
    jsonl = args.out.with_suffix(".jsonl")
    tmp = jsonl.with_name(f".{jsonl.name}.tmp")
    tmp.write_text(report_jsonl([row]), encoding="utf-8")
    os.replace(tmp, jsonl)
    c = report.confusion
    print(f"AUC {report.auc:.4f}  F1 {report.f1:.4f}  (tp {c.tp}, fp {c.fp}, tn {c.tn}, fn {c.fn}; n={report.n})")
    return EXIT_OK


def cmd_crossval(args) -> int:
    _require(args.manifest, "manifest")
    _require(args.views, "views directory")
    _require(args.masks, "masks directory")
    cfg = load_config(args)
    run_crossval(args.manifest, cfg, args.out, args.views, args.masks, args.image_root, args.jobs)
    print((args.out / "summary.txt").read_text(encoding="utf-8"), end="")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "split": cmd_split,
    "train": cmd_train,
    "predict": cmd_predict,
    "fuse": cmd_fuse,
    "eval": cmd_eval,
    "crossval": cmd_crossval,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.jobs = resolve_jobs(args.jobs)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ManifestError, ValueError, KeyError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - top-level guard maps everything else to exit 3
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
