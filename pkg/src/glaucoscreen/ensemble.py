"""Weighted fusion of per-view class probabilities."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .config import parse_kv_text

VIEWS = ("original", "cropped", "polar")
TIE_TOLERANCE = 1e-12


def _default_weights() -> dict[str, float]:
    return {"original": 2.0, "cropped": 0.5, "polar": 0.5}


@dataclass(frozen=True)
class EnsembleConfig:
    weights: dict[str, float] = field(default_factory=_default_weights)

    def __post_init__(self):
        for view, w in self.weights.items():
            if not (w >= 0 and np.isfinite(w)):
                raise ValueError(f"weight for view {view!r} must be a finite non-negative number")
        if not any(w > 0 for w in self.weights.values()):
            raise ValueError("at least one ensemble weight must be positive")

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> EnsembleConfig:
        """Read ``weight.<view>`` keys; other keys are ignored."""
        weights = {
            key.split(".", 1)[1]: float(v) for key, v in values.items() if key.startswith("weight.")
        }
        return cls(weights) if weights else cls()

    @classmethod
    def load(cls, path: str | os.PathLike) -> EnsembleConfig:
        with open(path, encoding="utf-8") as fh:
            return cls.from_mapping(parse_kv_text(fh.read()))

    def dumps(self) -> str:
        return "".join(f"weight.{v} = {w!r}\n" for v, w in self.weights.items())


def fuse(preds: Mapping[str, Sequence[float]], cfg: EnsembleConfig = EnsembleConfig()) -> np.ndarray:
    """Weighted mean of the views present, normalized by the sum of their weights."""
    if not preds:
        raise ValueError("no views to fuse")
    unknown = [v for v in preds if v not in cfg.weights]
    if unknown:
        raise ValueError(f"no ensemble weight for views: {', '.join(sorted(unknown))}")
    total = sum(cfg.weights[v] for v in preds)
    if total <= 0:
        raise ValueError("all weights of the present views are zero")
    acc = np.zeros(len(next(iter(preds.values()))), dtype=np.float64)
    for view, p in preds.items():
        acc += cfg.weights[view] * np.asarray(p, dtype=np.float64)
    return acc / total


def decide(p: Sequence[float]) -> int:
    """Arg-max label; an exact tie goes to the referable (positive) class."""
    p0, p1 = float(p[0]), float(p[1])
    if abs(p0 - p1) < TIE_TOLERANCE:
        return 1
    return int(p1 > p0)
