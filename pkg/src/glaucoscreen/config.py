"""Flat ``key = value`` experiment configuration with dotted keys."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .classify import TrainConfig
from .imaging import AugmentPolicy, ClaheParams


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class RunConfig:
    """Everything one experiment needs; defaults are the full-scale protocol."""

    seed: int = 0
    clahe: ClaheParams = ClaheParams()
    test_count: int | None = None  # None: 10,000 capped at round(10% of the manifest)
    k: int = 5
    val_fraction: float = 0.2
    train: TrainConfig = TrainConfig()
    classify_clahe: bool = False
    augment: AugmentPolicy = AugmentPolicy.identity()
    weights: dict[str, float] = field(default_factory=lambda: {"original": 2.0, "cropped": 0.5, "polar": 0.5})

    _KEYS = (
        "seed",
        "clahe.clip_fraction",
        "clahe.grid",
        "split.test_count",
        "split.k",
        "split.val_fraction",
        "train.epochs",
        "train.batch_size",
        "train.learning_rate",
        "train.downsample",
        "train.clahe",
        "augment.hflip_prob",
        "augment.vflip_prob",
        "augment.rotation_range",
        "augment.scale_min",
        "augment.scale_max",
        "weight.original",
        "weight.cropped",
        "weight.polar",
    )

    @classmethod
    def from_mapping(cls, values: dict[str, str], base: RunConfig | None = None) -> RunConfig:
        unknown = sorted(set(values) - set(cls._KEYS) - {k for k in values if k.startswith("weight.")})
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        cfg = base or cls()
        g = values.get
        seed = int(g("seed", cfg.seed))
        clahe = ClaheParams(
            float(g("clahe.clip_fraction", cfg.clahe.clip_fraction)), int(g("clahe.grid", cfg.clahe.grid))
        )
        tc = g("split.test_count")
        test_count = cfg.test_count if tc is None else (None if tc.lower() == "auto" else int(tc))
        train = replace(
            cfg.train,
            epochs=int(g("train.epochs", cfg.train.epochs)),
            batch_size=int(g("train.batch_size", cfg.train.batch_size)),
            learning_rate=float(g("train.learning_rate", cfg.train.learning_rate)),
            downsample=int(g("train.downsample", cfg.train.downsample)),
            seed=seed,
        )
        a = cfg.augment
        augment = AugmentPolicy(
            hflip_prob=float(g("augment.hflip_prob", a.hflip_prob)),
            vflip_prob=float(g("augment.vflip_prob", a.vflip_prob)),
            rotation_range=float(g("augment.rotation_range", a.rotation_range)),
            scale_range=(
                float(g("augment.scale_min", a.scale_range[0])),
                float(g("augment.scale_max", a.scale_range[1])),
            ),
            seed=seed,
        )
        weights = dict(cfg.weights)
        for key, v in values.items():
            if key.startswith("weight."):
                weights[key.split(".", 1)[1]] = float(v)
        return cls(
            seed=seed,
            clahe=clahe,
            test_count=test_count,
            k=int(g("split.k", cfg.k)),
            val_fraction=float(g("split.val_fraction", cfg.val_fraction)),
            train=train,
            classify_clahe=_bool(g("train.clahe", str(cfg.classify_clahe))),
            augment=augment,
            weights=weights,
        )

    @classmethod
    def load(cls, path: str | os.PathLike | None, overrides: dict[str, str] | None = None) -> RunConfig:
        values = parse_kv_text(Path(path).read_text(encoding="utf-8")) if path else {}
        values.update(overrides or {})
        return cls.from_mapping(values)

    def with_seed(self, seed: int) -> RunConfig:
        return replace(
            self, seed=seed, train=replace(self.train, seed=seed), augment=replace(self.augment, seed=seed)
        )

    def dumps(self) -> str:
        """Resolved configuration, one key per line, in a fixed order."""
        rows = [
            ("seed", self.seed),
            ("clahe.clip_fraction", self.clahe.clip_fraction),
            ("clahe.grid", self.clahe.grid),
            ("split.test_count", "auto" if self.test_count is None else self.test_count),
            ("split.k", self.k),
            ("split.val_fraction", self.val_fraction),
            ("train.epochs", self.train.epochs),
            ("train.batch_size", self.train.batch_size),
            ("train.learning_rate", self.train.learning_rate),
            ("train.downsample", self.train.downsample),
            ("train.clahe", str(self.classify_clahe).lower()),
            ("augment.hflip_prob", self.augment.hflip_prob),
            ("augment.vflip_prob", self.augment.vflip_prob),
            ("augment.rotation_range", self.augment.rotation_range),
            ("augment.scale_min", self.augment.scale_range[0]),
            ("augment.scale_max", self.augment.scale_range[1]),
        ] + [(f"weight.{v}", w) for v, w in self.weights.items()]
        return "".join(f"{k} = {v}\n" for k, v in rows)

