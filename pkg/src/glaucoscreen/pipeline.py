"""Batch orchestration: preprocess a manifest into views, cache features, run cross-validation.

Directory layout produced by :func:`preprocess_manifest`::

    <views>/views.csv            id,label,fallback,crop_x,crop_y,crop_w,crop_h
    <views>/preprocess.json      sample count and measured fallback rate
    <views>/<view>/<id>.png      one 256x256 image per view

Everything fans out over a bounded process pool and is merged back in
manifest order, so ``jobs`` never changes an output byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .classify import (
    FUSED,
    VIEWS,
    LinearModel,
    PredictionRecord,
    Samples,
    TrainConfig,
    TrainHistory,
    extract_features,
    train_reference,
    write_predictions,
)
from .config import RunConfig
from .dataset import (
    FoldPlan,
    ManifestError,
    ManifestRecord,
    class_weights,
    load_manifest,
    plan_splits,
    write_csv_atomic,
)
from .ensemble import EnsembleConfig, fuse
from .imaging import AugmentPolicy, ClaheParams, Raster, read_raster, write_raster
from .parallel import ordered_map
from .metrics import EvalReport, FoldAggregate, aggregate_folds, evaluate, report_jsonl, roc_points
from .segmentation import FixedMask, Mask, preprocess_sample, segment_disc

log = logging.getLogger(__name__)

VIEWS_INDEX = "views.csv"
PREPROCESS_STATS = "preprocess.json"
CACHE_DIR = ".cache"
MASK_SUFFIXES = (".pgm", ".png")


def resolve_jobs(jobs: int | None) -> int:
    """``--jobs`` if given, else ``PIPELINE_JOBS``, else 1."""
    if jobs is None:
        env = os.environ.get("PIPELINE_JOBS", "").strip()
        jobs = int(env) if env else 1
    if jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs}")
    return jobs


def resolve_image(record: ManifestRecord, image_root: Path) -> Path:
    p = Path(record.path)
    return p if p.is_absolute() else image_root / p


# ---------------------------------------------------------------- preprocessing


@dataclass(frozen=True)
class ViewEntry:
    id: str
    label: int
    fallback: bool
    crop: tuple[int, int, int, int] | None


@dataclass(frozen=True)
class PreprocessSummary:
    count: int
    fallback_count: int

    @property
    def fallback_rate(self) -> float:
        return self.fallback_count / self.count if self.count else 0.0


@dataclass(frozen=True)
class _PreprocessJob:
    record: ManifestRecord
    image: Path
    mask: Path | None
    out_dir: Path
    clahe: ClaheParams


def _find_mask(masks_dir: Path, rid: str) -> Path:
    for suffix in MASK_SUFFIXES:
        p = masks_dir / f"{rid}{suffix}"
        if p.exists():
            return p
    raise FileNotFoundError(f"no mask for id {rid!r} in {masks_dir}")


def _preprocess_one(job: _PreprocessJob) -> ViewEntry:
    original = read_raster(job.image)
    segmenter = segment_disc if job.mask is None else FixedMask(Mask.from_raster(read_raster(job.mask)))
    views = preprocess_sample(original, segmenter, job.clahe)
    for name in VIEWS:
        write_raster(views[name], job.out_dir / name / f"{job.record.id}.png")
    box = views.crop_box
    crop = None if box is None else (box.x, box.y, box.w, box.h)
    return ViewEntry(job.record.id, job.record.label, views.used_fallback, crop)


def preprocess_manifest(
    manifest: str | os.PathLike,
    out_dir: str | os.PathLike,
    masks_dir: str | os.PathLike | None = None,
    clahe_params: ClaheParams = ClaheParams(),
    image_root: str | os.PathLike | None = None,
    jobs: int = 1,
) -> PreprocessSummary:
    """Write the three views of every manifest record plus ``views.csv``.

    Image paths are relative to ``image_root`` (default: the manifest's folder).
    With ``masks_dir``, ``<id>.pgm`` (or ``.png``) replaces the built-in
    segmenter for that id.
    """
    manifest = Path(manifest)
    records = load_manifest(manifest)
    root = Path(image_root) if image_root is not None else manifest.parent
    out = Path(out_dir)
    for name in VIEWS:
        (out / name).mkdir(parents=True, exist_ok=True)
    jobs_list = []
    for r in records:
        image = resolve_image(r, root)
        if not image.exists():
            raise FileNotFoundError(f"image for id {r.id!r} not found: {image}")
        mask = _find_mask(Path(masks_dir), r.id) if masks_dir is not None else None
        jobs_list.append(_PreprocessJob(r, image, mask, out, clahe_params))
    log.info("preprocessing %d images with %d job(s)", len(jobs_list), jobs)
    entries = ordered_map(_preprocess_one, jobs_list, jobs)
    write_views_index(entries, out / VIEWS_INDEX)
    summary = PreprocessSummary(len(entries), sum(e.fallback for e in entries))
    stats = {
        "count": summary.count,
        "fallback_count": summary.fallback_count,
        "fallback_rate": round(summary.fallback_rate, 6),
    }
    tmp = out / f".{PREPROCESS_STATS}.tmp"
    tmp.write_text(json.dumps(stats, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, out / PREPROCESS_STATS)
    return summary


def write_views_index(entries: Iterable[ViewEntry], path: Path) -> None:
    rows = (
        [e.id, e.label, int(e.fallback)] + (list(e.crop) if e.crop is not None else ["", "", "", ""])
        for e in entries
    )
    write_csv_atomic(path, ("id", "label", "fallback", "crop_x", "crop_y", "crop_w", "crop_h"), rows)


def read_views_index(views_dir: str | os.PathLike) -> list[ViewEntry]:
    path = Path(views_dir) / VIEWS_INDEX
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run preprocess first")
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "label", "fallback", "crop_x", "crop_y", "crop_w", "crop_h"]:
            raise ManifestError(f"{path}: line 1: unexpected header")
        for row in reader:
            if len(row) != 7:
                raise ManifestError(f"{path}: line {reader.line_num}: expected 7 fields")
            crop = None if row[3] == "" else tuple(int(v) for v in row[3:])
            out.append(ViewEntry(row[0], int(row[1]), row[2] == "1", crop))
    return out


# ---------------------------------------------------------------- features


def _feature_key(view: str, downsample: int, clahe_params: ClaheParams | None) -> str:
    tag = "raw" if clahe_params is None else f"clahe{clahe_params.clip_fraction:g}x{clahe_params.grid}"
    return f"features-{view}-ds{downsample}-{tag}"


def _features_of(args) -> np.ndarray:
    path, downsample, clahe_params = args
    return extract_features(read_raster(path), downsample, clahe_params)


def load_view_features(
    views_dir: str | os.PathLike,
    view: str,
    downsample: int = 16,
    clahe_params: ClaheParams | None = None,
    jobs: int = 1,
) -> tuple[list[str], np.ndarray]:
    """Feature matrix of one view for every id in ``views.csv``.

    Cached under ``<views>/.cache/``; the cache is keyed on the digest of
    ``views.csv``, so re-running preprocess invalidates it.
    """
    views_dir = Path(views_dir)
    if view not in VIEWS:
        raise ValueError(f"unknown view {view!r}")
    index_bytes = (views_dir / VIEWS_INDEX).read_bytes()
    digest = hashlib.sha256(index_bytes).hexdigest()
    ids = [e.id for e in read_views_index(views_dir)]
    cache = views_dir / CACHE_DIR / f"{_feature_key(view, downsample, clahe_params)}.npz"
    if cache.exists():
        with np.load(cache, allow_pickle=False) as z:
            if str(z["digest"]) == digest:
                return ids, z["features"]
    paths = [(views_dir / view / f"{rid}.png", downsample, clahe_params) for rid in ids]
    features = np.stack(ordered_map(_features_of, paths, jobs)) if paths else np.zeros((0, downsample**2))
    cache.parent.mkdir(exist_ok=True)
    tmp = cache.with_name(f".{cache.stem}.tmp.npz")
    np.savez(tmp, digest=np.array(digest), features=features)
    os.replace(tmp, cache)
    return ids, features


def load_views(views_dir: str | os.PathLike, view: str, ids: Sequence[str]) -> list[Raster]:
    return [read_raster(Path(views_dir) / view / f"{rid}.png") for rid in ids]


# ---------------------------------------------------------------- training


@dataclass
class ViewData:
    """Features (and lazily the rasters) of one view, addressable by id."""

    views_dir: Path
    view: str
    ids: list[str]
    features: np.ndarray
    labels: np.ndarray
    row: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.row = {rid: i for i, rid in enumerate(self.ids)}

    def rows(self, ids: Sequence[str]) -> np.ndarray:
        missing = [i for i in ids if i not in self.row]
        if missing:
            raise ManifestError(f"ids missing from {self.views_dir / VIEWS_INDEX}: {', '.join(missing[:5])}")
        return np.array([self.row[i] for i in ids], dtype=np.intp)

    def samples(self, ids: Sequence[str], with_views: bool = False) -> Samples:
        r = self.rows(ids)
        views = load_views(self.views_dir, self.view, ids) if with_views else None
        return Samples(self.labels[r], self.features[r], views)


def load_view_data(
    views_dir: str | os.PathLike, view: str, downsample: int = 16, clahe_params: ClaheParams | None = None, jobs: int = 1
) -> ViewData:
    entries = read_views_index(views_dir)
    ids, feats = load_view_features(views_dir, view, downsample, clahe_params, jobs)
    labels = np.array([e.label for e in entries], dtype=np.intp)
    return ViewData(Path(views_dir), view, ids, feats, labels)


def train_view(
    data: ViewData,
    train_ids: Sequence[str],
    val_ids: Sequence[str],
    cfg: TrainConfig,
    policy: AugmentPolicy | None = None,
    init: LinearModel | None = None,
    clahe_params: ClaheParams | None = None,
) -> tuple[LinearModel, TrainHistory]:
    """Train one reference model with inverse-frequency weights from the training labels."""
    augmenting = policy is not None and not policy.is_identity
    train = data.samples(train_ids, with_views=augmenting)
    val = data.samples(val_ids)
    weights = class_weights(train.labels.tolist())
    return train_reference(train, val, weights, cfg, policy, init, clahe_params)


def predict_ids(model: LinearModel, data: ViewData, ids: Sequence[str]) -> list[PredictionRecord]:
    probs = model.predict_features(data.features[data.rows(ids)]) if ids else np.zeros((0, 2))
    return [PredictionRecord(rid, data.view, (float(p[0]), float(p[1]))) for rid, p in zip(ids, probs)]


def fuse_records(
    per_view: Sequence[Sequence[PredictionRecord]], cfg: EnsembleConfig = EnsembleConfig()
) -> list[PredictionRecord]:
    """Fuse per-id over whatever views are present; ids keep first-seen order."""
    by_id: dict[str, dict[str, tuple[float, float]]] = {}
    for records in per_view:
        for r in records:
            views = by_id.setdefault(r.id, {})
            if r.view in views:
                raise ValueError(f"duplicate prediction for id {r.id!r}, view {r.view!r}")
            views[r.view] = r.probs
    out = []
    for rid, views in by_id.items():
        p = fuse(views, cfg)
        out.append(PredictionRecord(rid, FUSED, (float(p[0]), float(p[1]))))
    return out


def write_history(history: TrainHistory, path: Path) -> None:
    rows = [["init", f"{history.initial_loss:.9g}", ""]]
    rows += [[e, f"{loss:.9g}", f"{auc:.9g}"] for e, (loss, auc) in enumerate(zip(history.train_loss, history.val_auc))]
    write_csv_atomic(path, ("epoch", "train_loss", "val_auc"), rows)


def write_roc(records: Sequence[PredictionRecord], truth: dict[str, int], path: Path) -> None:
    """ROC operating points of the positive-class score, for external plotting."""
    pts = roc_points([r.probs[1] for r in records], [truth[r.id] for r in records])
    write_csv_atomic(path, ("threshold", "fpr", "tpr"), ([f"{t:.9g}", f"{f:.9g}", f"{p:.9g}"] for t, f, p in pts))


# ---------------------------------------------------------------- cross-validation


@dataclass
class FoldResult:
    fold: int
    reports: dict[str, EvalReport]  # view or "fused" -> test report
    histories: dict[str, TrainHistory]


@dataclass
class CrossvalResult:
    plan: FoldPlan
    folds: list[FoldResult]

    def aggregate(self, view: str) -> FoldAggregate:
        return aggregate_folds([f.reports[view] for f in self.folds])

    def test_aucs(self, view: str) -> list[float]:
        return [f.reports[view].auc for f in self.folds]


@dataclass(frozen=True)
class _FoldViewJob:
    fold: int
    view: str
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    cfg: RunConfig


_worker_data: dict[str, ViewData] = {}


def _train_fold_view(job: _FoldViewJob):
    data = _worker_data[job.view]
    cfg = job.cfg
    model, history = train_view(
        data,
        job.train_ids,
        job.val_ids,
        cfg.train,
        cfg.augment,
        clahe_params=cfg.clahe if cfg.classify_clahe else None,
    )
    return model, history, predict_ids(model, data, job.test_ids)


def _init_worker(data: dict[str, ViewData]) -> None:
    _worker_data.clear()
    _worker_data.update(data)


def check_plan(plan: FoldPlan) -> None:
    """Validation shards are pairwise disjoint and, with the always-train ids, cover the pool."""
    pool = set(plan.pool_ids)
    seen: set[str] = set()
    always_train = set(pool)
    for i in range(plan.k):
        train, val = plan.fold(i)
        v = set(val)
        if v & seen:
            raise AssertionError(f"fold {i} validation overlaps an earlier fold")
        if v & set(train) or (v | set(train)) != pool:
            raise AssertionError(f"fold {i} does not partition the pool")
        seen |= v
        always_train -= v
    if seen | always_train != pool:
        raise AssertionError("validation shards do not cover the pool")


def run_crossval(
    manifest: str | os.PathLike,
    cfg: RunConfig,
    out_dir: str | os.PathLike,
    views_dir: str | os.PathLike | None = None,
    masks_dir: str | os.PathLike | None = None,
    image_root: str | os.PathLike | None = None,
    jobs: int = 1,
) -> CrossvalResult:
    """Split, train every (fold, view), predict the test split, fuse and evaluate.

    ``views_dir`` reuses an existing preprocess output; otherwise views are
    written to ``<out>/views``. Outputs under ``out_dir``::

        config.txt  folds.csv  report.csv  report.jsonl  summary.txt
        fold<i>/model_<view>.json  fold<i>/history_<view>.csv
        fold<i>/pred_<view>.csv   fold<i>/pred_fused.csv   fold<i>/roc_fused.csv
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / ".config.txt.tmp").write_text(cfg.dumps(), encoding="utf-8")
    os.replace(out / ".config.txt.tmp", out / "config.txt")

    records = load_manifest(manifest)
    if views_dir is None:
        views_dir = out / "views"
        preprocess_manifest(manifest, views_dir, masks_dir, cfg.clahe, image_root, jobs)
    views_dir = Path(views_dir)
    indexed = {e.id: e.label for e in read_views_index(views_dir)}
    for r in records:
        if indexed.get(r.id) != r.label:
            raise ManifestError(f"id {r.id!r} missing from {views_dir / VIEWS_INDEX} or labelled differently")

    plan = plan_splits(records, cfg.test_count, cfg.k, cfg.val_fraction, cfg.seed)
    check_plan(plan)
    plan.write_csv(out / "folds.csv")
    truth = {r.id: r.label for r in records}
    test_ids = tuple(plan.test_ids)

    clahe_params = cfg.clahe if cfg.classify_clahe else None
    data = {v: load_view_data(views_dir, v, cfg.train.downsample, clahe_params, jobs) for v in VIEWS}
    tasks = []
    for i in range(plan.k):
        train, val = plan.fold(i)
        for v in VIEWS:
            tasks.append(_FoldViewJob(i, v, tuple(train), tuple(val), test_ids, cfg))
    log.info("training %d models (%d folds x %d views)", len(tasks), plan.k, len(VIEWS))
    if jobs <= 1:
        _init_worker(data)
        results = [_train_fold_view(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(data,)) as pool:
            results = list(pool.map(_train_fold_view, tasks))

    weights = EnsembleConfig(dict(cfg.weights))
    folds: list[FoldResult] = []
    report_rows = []
    for i in range(plan.k):
        fold_dir = out / f"fold{i}"
        fold_dir.mkdir(exist_ok=True)
        per_view, reports, histories = [], {}, {}
        for t, (model, history, preds) in zip(tasks, results):
            if t.fold != i:
                continue
            model.save(fold_dir / f"model_{t.view}.json")
            write_history(history, fold_dir / f"history_{t.view}.csv")
            write_predictions(preds, fold_dir / f"pred_{t.view}.csv")
            per_view.append(preds)
            reports[t.view] = evaluate({r.id: r.probs for r in preds}, truth)
            histories[t.view] = history
        fused = fuse_records(per_view, weights)
        write_predictions(fused, fold_dir / f"pred_{FUSED}.csv")
        reports[FUSED] = evaluate({r.id: r.probs for r in fused}, truth)
        write_roc(fused, truth, fold_dir / f"roc_{FUSED}.csv")
        folds.append(FoldResult(i, reports, histories))
        for name in VIEWS + (FUSED,):
            report_rows.append({"fold": i, "view": name, **reports[name].as_dict()})

    result = CrossvalResult(plan, folds)
    _write_reports(result, report_rows, out)
    return result


def _write_reports(result: CrossvalResult, rows: list[dict], out: Path) -> None:
    cols = ("fold", "view", "auc", "f1", "tp", "fp", "tn", "fn", "n", "threshold")
    write_csv_atomic(
        out / "report.csv",
        cols,
        ([_fmt(r[c]) for c in cols] for r in rows),
    )
    agg_rows = []
    for name in VIEWS + (FUSED,):
        agg = result.aggregate(name)
        agg_rows.append(
            {
                "fold": "mean",
                "view": name,
                "auc": agg.mean["auc"],
                "auc_std": agg.std["auc"],
                "f1": agg.mean["f1"],
                "f1_std": agg.std["f1"],
            }
        )
    jsonl = report_jsonl([{k: _fmt(v) if isinstance(v, float) else v for k, v in r.items()} for r in rows + agg_rows])
    (out / ".report.jsonl.tmp").write_text(jsonl, encoding="utf-8")
    os.replace(out / ".report.jsonl.tmp", out / "report.jsonl")
    text = render_table(result)
    (out / ".summary.txt.tmp").write_text(text, encoding="utf-8")
    os.replace(out / ".summary.txt.tmp", out / "summary.txt")


def _fmt(v) -> str:
    return f"{v:.9g}" if isinstance(v, float) else str(v)


def render_table(result: CrossvalResult) -> str:
    """Per-fold test AUCs and the ``mean ± std`` aggregate, one row per view."""
    k = len(result.folds)
    head = f"{'view':<10}" + "".join(f"{'fold' + str(i):>8}" for i in range(k)) + f"{'AUC':>14}{'F1':>14}"
    lines = [head, "-" * len(head)]
    for name in VIEWS + (FUSED,):
        agg = result.aggregate(name)
        cells = "".join(f"{a:>8.4f}" for a in result.test_aucs(name))
        lines.append(f"{name:<10}{cells}{agg.render('auc'):>14}{agg.render('f1'):>14}")
    return "\n".join(lines) + "\n"
