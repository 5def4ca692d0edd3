"""ROC-AUC, F1, confusion counts and cross-fold aggregation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class EvalReport:
    auc: float
    f1: float
    confusion: Confusion
    threshold: float = 0.5
    n: int = field(default=0)

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(d.pop("confusion"))
        return d


def _binary_labels(labels) -> np.ndarray:
    y = np.asarray(labels)
    if y.size and not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return y.astype(np.int8)


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counted one half.

    Sorts once and walks tie groups, so the count is exact in O(n log n).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _binary_labels(labels)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    order = np.argsort(s, kind="mergesort")
    s_sorted = s[order]
    pos_sorted = y[order].astype(np.int64)
    # tie groups: [starts[k], ends[k]) share one score
    starts = np.r_[0, np.flatnonzero(np.diff(s_sorted)) + 1]
    ends = np.r_[starts[1:], s.size]
    pos_in_group = np.add.reduceat(pos_sorted, starts)
    neg_in_group = (ends - starts) - pos_in_group
    neg_below = np.cumsum(neg_in_group) - neg_in_group
    # integer pair counts: strict wins doubled plus one per tied pair
    twice_u = int(np.sum(pos_in_group * (2 * neg_below + neg_in_group)))
    return twice_u / (2.0 * n_pos * n_neg)


def roc_points(scores: Sequence[float], labels: Sequence[int]) -> list[tuple[float, float, float]]:
    """(threshold, fpr, tpr) at every distinct score, highest threshold first."""
    s = np.asarray(scores, dtype=np.float64)
    y = _binary_labels(labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    n_pos, n_neg = int(y.sum()), int(y.size - y.sum())
    tps = np.cumsum(y)
    fps = np.cumsum(1 - y)
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    pts = [(float("inf"), 0.0, 0.0)]
    for i in last:
        pts.append((float(s[i]), fps[i] / max(n_neg, 1), tps[i] / max(n_pos, 1)))
    return pts


def confusion(preds: Sequence[int], labels: Sequence[int], positive_class: int = 1) -> Confusion:
    p = np.asarray(preds) == positive_class
    t = np.asarray(labels) == positive_class
    if p.shape != t.shape:
        raise ValueError("preds and labels differ in length")
    return Confusion(
        tp=int(np.sum(p & t)), fp=int(np.sum(p & ~t)), tn=int(np.sum(~p & ~t)), fn=int(np.sum(~p & t))
    )


def f1_from_counts(c: Confusion) -> float:
    denom = 2 * c.tp + c.fp + c.fn
    return 2 * c.tp / denom if denom else 0.0


def f1(preds: Sequence[int], labels: Sequence[int], positive_class: int = 1) -> float:
    """2TP / (2TP + FP + FN); 0 when there are no predicted or actual positives."""
    return f1_from_counts(confusion(preds, labels, positive_class))


def evaluate(
    predictions: Mapping[str, Sequence[float]],
    truth: Mapping[str, int],
    threshold: float = 0.5,
) -> EvalReport:
    """AUC on the positive-class probability plus F1/confusion at ``threshold``."""
    missing = [i for i in predictions if i not in truth]
    if missing:
        raise ValueError(f"no truth label for ids: {', '.join(sorted(missing))}")
    ids = sorted(predictions)
    scores = np.array([predictions[i][1] for i in ids], dtype=np.float64)
    labels = np.array([truth[i] for i in ids])
    preds = (scores >= threshold).astype(int)
    c = confusion(preds, labels)
    return EvalReport(auc=roc_auc(scores, labels), f1=f1_from_counts(c), confusion=c, threshold=threshold, n=len(ids))


@dataclass(frozen=True)
class FoldAggregate:
    per_fold: list[EvalReport]
    mean: dict[str, float]
    std: dict[str, float]

    def render(self, metric: str) -> str:
        return f"{self.mean[metric]:.2f} ± {self.std[metric]:.2f}"


def aggregate_folds(reports: Sequence[EvalReport]) -> FoldAggregate:
    """Mean and population standard deviation of AUC and F1 across folds."""
    if not reports:
        raise ValueError("no fold reports to aggregate")
    mean, std = {}, {}
    for key in ("auc", "f1"):
        vals = np.array([getattr(r, key) for r in reports], dtype=np.float64)
        mean[key] = float(vals.mean())
        std[key] = float(vals.std(ddof=0))
    return FoldAggregate(list(reports), mean, std)


def report_jsonl(rows: Sequence[Mapping]) -> str:
    return "".join(json.dumps(dict(r), sort_keys=True) + "\n" for r in rows)
