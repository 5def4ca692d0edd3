"""Per-view reference classifier: softmax regression on pooled luminance.

Stands in for the per-view CNNs. Any external model can replace it by writing
prediction CSVs (``id,view,p0,p1``) that the ensemble step reads.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import write_csv_atomic
from .imaging import AugmentPolicy, ClaheParams, Raster, augment, clahe
from .metrics import roc_auc

VIEWS = ("original", "cropped", "polar")
FUSED = "fused"
PROB_FLOOR = 1e-12
SUM_TOLERANCE = 1e-6
MODEL_FORMAT = "glaucoscreen-linear-model"
MODEL_VERSION = 1
VIEW_SIZE = 256


def softmax(logits) -> np.ndarray:
    """Max-subtracted softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def check_probs(p, tol: float = 1e-9) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (2,) or not np.all(np.isfinite(p)):
        raise ValueError(f"expected two finite probabilities, got {p!r}")
    if np.any(p < -tol) or np.any(p > 1 + tol) or abs(p.sum() - 1.0) > tol:
        raise ValueError(f"not a probability vector: {p.tolist()}")
    return p


def weighted_ce(probs, label: int, weights) -> float:
    """``-w[label] * ln(p[label])`` with the probability floored at 1e-12."""
    p = max(float(np.asarray(probs)[label]), PROB_FLOOR)
    return -float(weights[label]) * math.log(p)


def weighted_ce_grad(logits, label: int, weights) -> np.ndarray:
    """Gradient of :func:`weighted_ce` (through softmax) w.r.t. the logits."""
    g = softmax(logits)
    g[label] -= 1.0
    return float(weights[label]) * g


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    downsample: int = 16

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate < 0 or self.downsample < 1:
            raise ValueError(f"invalid training config {self}")


def extract_features(view: Raster, downsample: int = 16, clahe_params: ClaheParams | None = None) -> np.ndarray:
    """Luma of a 256x256 view, mean-pooled to ``downsample``^2 cells, scaled to [0, 1]."""
    if (view.width, view.height) != (VIEW_SIZE, VIEW_SIZE):
        raise ValueError(f"features need a {VIEW_SIZE}x{VIEW_SIZE} view, got {view.width}x{view.height}")
    if VIEW_SIZE % downsample:
        raise ValueError(f"downsample size {downsample} does not divide {VIEW_SIZE}")
    if clahe_params is not None:
        view = clahe(view, clahe_params.clip_fraction, clahe_params.grid)
    cell = VIEW_SIZE // downsample
    lum = view.luminance().astype(np.float64)
    pooled = lum.reshape(downsample, cell, downsample, cell).mean(axis=(1, 3))
    return (pooled / 255.0).ravel()


@dataclass
class LinearModel:
    """Softmax regression on standardized features.

    ``feature_mean``/``feature_scale`` are fitted on the training features and
    applied before the linear map, so SGD sees unit-scale inputs.
    """

    weights: np.ndarray  # (classes, features)
    bias: np.ndarray  # (classes,)
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    downsample: int = 16
    clahe: ClaheParams | None = None

    @classmethod
    def zeros(cls, n_features: int, downsample: int = 16, n_classes: int = 2) -> LinearModel:
        return cls(
            np.zeros((n_classes, n_features)),
            np.zeros(n_classes),
            np.zeros(n_features),
            np.ones(n_features),
            downsample,
        )

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> LinearModel:
        return LinearModel(
            self.weights.copy(),
            self.bias.copy(),
            self.feature_mean.copy(),
            self.feature_scale.copy(),
            self.downsample,
            self.clahe,
        )

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.feature_mean) / self.feature_scale

    def logits(self, features: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(features)
        if x.shape[1] != self.n_features:
            raise ValueError(f"model expects {self.n_features} features, got {x.shape[1]}")
        return self.standardize(x) @ self.weights.T + self.bias

    def predict_features(self, features: np.ndarray) -> np.ndarray:
        return softmax(self.logits(features))

    def save(self, path: str | os.PathLike) -> None:
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "classes": int(self.weights.shape[0]),
            "features": self.n_features,
            "downsample": self.downsample,
            "clahe": None if self.clahe is None else [self.clahe.clip_fraction, self.clahe.grid],
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "feature_mean": self.feature_mean.tolist(),
            "feature_scale": self.feature_scale.tolist(),
        }
        path = Path(path)
        tmp = path.with_name(f".{path.name}.tmp")
        tmp.write_text(json.dumps(doc) + "\n", encoding="utf-8")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | os.PathLike) -> LinearModel:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("format") != MODEL_FORMAT:
            raise ValueError(f"{path}: not a {MODEL_FORMAT} file")
        if doc.get("version") != MODEL_VERSION:
            raise ValueError(f"{path}: unsupported model version {doc.get('version')}")
        weights = np.asarray(doc["weights"], dtype=np.float64)
        if weights.shape != (doc["classes"], doc["features"]):
            raise ValueError(f"{path}: weight matrix shape {weights.shape} disagrees with header")
        c = doc.get("clahe")
        return cls(
            weights,
            np.asarray(doc["bias"], dtype=np.float64),
            np.asarray(doc["feature_mean"], dtype=np.float64),
            np.asarray(doc["feature_scale"], dtype=np.float64),
            int(doc["downsample"]),
            None if c is None else ClaheParams(float(c[0]), int(c[1])),
        )


def predict(model: LinearModel, view: Raster) -> np.ndarray:
    x = extract_features(view, model.downsample, model.clahe)
    return model.predict_features(x)[0]


@dataclass
class Samples:
    """Labelled training data: precomputed features, and the views when augmenting."""

    labels: np.ndarray
    features: np.ndarray
    views: Sequence[Raster] | None = None


@dataclass
class TrainHistory:
    initial_loss: float
    train_loss: list[float] = field(default_factory=list)
    val_auc: list[float] = field(default_factory=list)
    best_epoch: int = -1


def mean_weighted_ce(model: LinearModel, x: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    return _mean_ce(model.predict_features(x), y, w)


def _mean_ce(p: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    picked = np.maximum(p[np.arange(len(y)), y], PROB_FLOOR)
    return float(np.mean(-w[y] * np.log(picked)))


def _val_score(model: LinearModel, xv: np.ndarray, yv: np.ndarray, w: np.ndarray) -> float:
    # xv is already standardized
    if len(yv) == 0:
        return 0.0
    p = softmax(xv @ model.weights.T + model.bias)
    if len(np.unique(yv)) < 2:
        return -_mean_ce(p, yv, w)
    return roc_auc(p[:, 1], yv)


def train_reference(
    train: Samples,
    val: Samples,
    weights,
    cfg: TrainConfig = TrainConfig(),
    policy: AugmentPolicy | None = None,
    init: LinearModel | None = None,
    clahe_params: ClaheParams | None = None,
) -> tuple[LinearModel, TrainHistory]:
    """Mini-batch SGD on the mean class-weighted cross-entropy.

    Batches follow a per-epoch permutation drawn from ``(seed, epoch)``. After
    every epoch the model is scored on ``val`` (AUC) and the best epoch's
    parameters are returned. ``init`` continues from an existing model, keeping
    its feature standardization (fine-tuning).

    With an augmenting ``policy`` the training views are re-augmented each
    epoch, sample ``i`` of epoch ``e`` using augmentation index ``e * N + i``.
    """
    y = np.asarray(train.labels, dtype=np.intp)
    if len(np.unique(y)) < 2:
        raise ValueError("training set must contain both classes")
    x_plain = np.asarray(train.features, dtype=np.float64)
    w = np.asarray(weights.as_array() if hasattr(weights, "as_array") else weights, dtype=np.float64)
    augmenting = policy is not None and not policy.is_identity
    if augmenting and train.views is None:
        raise ValueError("augmentation needs the training views")

    if init is None:
        mean = x_plain.mean(axis=0)
        scale = x_plain.std(axis=0)
        scale[scale < 1e-8] = 1.0
        model = LinearModel(
            np.zeros((len(w), x_plain.shape[1])), np.zeros(len(w)), mean, scale, cfg.downsample, clahe_params
        )
    else:
        model = init.copy()

    xs_plain = model.standardize(x_plain)
    yv = np.asarray(val.labels, dtype=np.intp)
    xv = model.standardize(np.asarray(val.features, dtype=np.float64).reshape(len(yv), -1))

    def train_loss() -> float:
        return _mean_ce(softmax(xs_plain @ model.weights.T + model.bias), y, w)

    history = TrainHistory(initial_loss=train_loss())
    best = model.copy()
    best_score = -math.inf
    n = len(y)
    onehot = np.eye(len(w))[y]
    for epoch in range(cfg.epochs):
        if augmenting:
            x_epoch = np.stack(
                [
                    extract_features(augment(v, policy, epoch * n + i), model.downsample, model.clahe)
                    for i, v in enumerate(train.views)
                ]
            )
            xs = model.standardize(x_epoch)
        else:
            xs = xs_plain
        order = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, epoch]).permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = xs[idx]
            p = softmax(xb @ model.weights.T + model.bias)
            g = (w[y[idx]][:, None] * (p - onehot[idx])) / len(idx)
            model.weights -= cfg.learning_rate * (g.T @ xb)
            model.bias -= cfg.learning_rate * g.sum(axis=0)
        history.train_loss.append(train_loss())
        score = _val_score(model, xv, yv, w)
        history.val_auc.append(score)
        if score > best_score:
            best_score = score
            best = model.copy()
            history.best_epoch = epoch
    return (best if cfg.epochs else model), history


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    view: str
    probs: tuple[float, float]

    def __post_init__(self):
        if self.view not in VIEWS + (FUSED,):
            raise ValueError(f"unknown view {self.view!r}")
        check_probs(self.probs, SUM_TOLERANCE)


def write_predictions(records: Sequence[PredictionRecord], path: str | os.PathLike) -> None:
    write_csv_atomic(
        path,
        ("id", "view", "p0", "p1"),
        ((r.id, r.view, f"{r.probs[0]:.9g}", f"{r.probs[1]:.9g}") for r in records),
    )


def read_predictions(path: str | os.PathLike) -> list[PredictionRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["id", "view", "p0", "p1"]:
            raise ValueError(f"{path}: line 1: expected header id,view,p0,p1")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}: line {line}: expected 4 fields, got {len(row)}")
            try:
                p0, p1 = float(row[2]), float(row[3])
            except ValueError:
                raise ValueError(f"{path}: line {line}: probabilities must be numbers") from None
            try:
                out.append(PredictionRecord(row[0].strip(), row[1].strip(), (p0, p1)))
            except ValueError as exc:
                raise ValueError(f"{path}: line {line}: {exc}") from None
    return out
