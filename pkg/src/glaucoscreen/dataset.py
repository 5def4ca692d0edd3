"""Manifests, stratified holdout / k-fold plans, class weights and subsampling.

Every quota that must sum exactly is split with the largest-remainder method
in integer arithmetic. Randomness comes from per-purpose seeded generators so
each operation is a pure function of its inputs and seed.
"""

from __future__ import annotations

import csv
import io
import os
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CLASSES = (0, 1)
DEFAULT_TEST_COUNT = 10_000

_HOLDOUT, _KFOLD, _SUBSAMPLE = 1, 2, 3

TRAIN, VAL, TEST = "train", "val", "test"


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    path: str
    label: int


def load_manifest(path: str | os.PathLike) -> list[ManifestRecord]:
    """Read a ``id,path,label`` CSV; errors name the offending line."""
    records: list[ManifestRecord] = []
    seen: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ManifestError(f"{path}: empty file, expected header id,path,label")
        if [h.strip() for h in header] != ["id", "path", "label"]:
            raise ManifestError(f"{path}: line 1: expected header id,path,label, got {','.join(header)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ManifestError(f"{path}: line {line}: expected 3 fields, got {len(row)}")
            rid, rpath, rlabel = (c.strip() for c in row)
            if not rid:
                raise ManifestError(f"{path}: line {line}: empty id")
            if rlabel not in ("0", "1"):
                raise ManifestError(f"{path}: line {line}: unknown label {rlabel!r}")
            if rid in seen:
                raise ManifestError(f"{path}: line {line}: duplicate id {rid!r} (first on line {seen[rid]})")
            seen[rid] = line
            records.append(ManifestRecord(rid, rpath, int(rlabel)))
    return records


def write_csv_atomic(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """UTF-8, LF line endings, written to a temp name and renamed into place."""
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(buf.getvalue(), encoding="utf-8", newline="")
    os.replace(tmp, path)


def write_manifest(records: Sequence[ManifestRecord], path: str | os.PathLike) -> None:
    write_csv_atomic(path, ("id", "path", "label"), ((r.id, r.path, r.label) for r in records))


def largest_remainder(total: int, weights: Sequence[int]) -> list[int]:
    """Split ``total`` in proportion to integer ``weights``; parts sum exactly to ``total``.

    Ties on the remainder go to the earlier entry.
    """
    wsum = sum(weights)
    if wsum <= 0:
        raise ValueError("weights must have a positive sum")
    base = [total * w // wsum for w in weights]
    rems = [total * w % wsum for w in weights]
    short = total - sum(base)
    for i in sorted(range(len(weights)), key=lambda i: (-rems[i], i))[:short]:
        base[i] += 1
    return base


def _rng(seed: int, purpose: int, label: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, purpose, label])


def _by_class(records: Sequence[ManifestRecord]) -> dict[int, list[int]]:
    idx: dict[int, list[int]] = {c: [] for c in CLASSES}
    for i, r in enumerate(records):
        idx[r.label].append(i)
    return idx


def _stratified_pick(records: Sequence[ManifestRecord], count: int, seed: int, purpose: int) -> set[int]:
    groups = _by_class(records)
    present = [c for c in CLASSES if groups[c]]
    quotas = largest_remainder(count, [len(groups[c]) for c in present])
    chosen: set[int] = set()
    for c, q in zip(present, quotas):
        perm = _rng(seed, purpose, c).permutation(len(groups[c]))
        chosen.update(groups[c][j] for j in perm[:q])
    return chosen


def stratified_holdout(
    records: Sequence[ManifestRecord], test_count: int, seed: int
) -> tuple[list[ManifestRecord], list[ManifestRecord]]:
    """Split off ``test_count`` records with class quotas proportional to the whole.

    Both parts keep manifest order.
    """
    if not 0 < test_count < len(records):
        raise ValueError(f"test_count must be in (0, {len(records)}), got {test_count}")
    chosen = _stratified_pick(records, test_count, seed, _HOLDOUT)
    train = [r for i, r in enumerate(records) if i not in chosen]
    test = [r for i, r in enumerate(records) if i in chosen]
    return train, test


def subsample_fraction(records: Sequence[ManifestRecord], fraction: float, seed: int) -> list[ManifestRecord]:
    """Stratified subset of round(fraction * N) records (half-up), in manifest order."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    size = int(np.floor(fraction * len(records) + 0.5))
    if size == 0:
        return []
    if size >= len(records):
        return list(records)
    chosen = _stratified_pick(records, size, seed, _SUBSAMPLE)
    return [r for i, r in enumerate(records) if i in chosen]


@dataclass(frozen=True)
class Assignment:
    role: str
    fold: int | None


class FoldPlan:
    """Test ids plus k disjoint validation shards over the train pool.

    An id with role ``val`` and fold ``i`` is validation in fold ``i`` and
    training in every other fold; role ``train`` ids (rounding leftovers) train
    in every fold; role ``test`` ids are held out from all folds.
    """

    def __init__(self, k: int, assignments: dict[str, Assignment], seed: int = 0):
        self.k = k
        self.seed = seed
        self.assignments = assignments

    @property
    def test_ids(self) -> list[str]:
        return [i for i, a in self.assignments.items() if a.role == TEST]

    @property
    def pool_ids(self) -> list[str]:
        return [i for i, a in self.assignments.items() if a.role != TEST]

    def fold(self, i: int) -> tuple[list[str], list[str]]:
        """(train ids, val ids) of fold ``i``, in plan order."""
        if not 0 <= i < self.k:
            raise ValueError(f"fold {i} out of range for k={self.k}")
        train, val = [], []
        for rid, a in self.assignments.items():
            if a.role == TEST:
                continue
            (val if a.role == VAL and a.fold == i else train).append(rid)
        return train, val

    def write_csv(self, path: str | os.PathLike) -> None:
        rows = ((rid, "" if a.fold is None else a.fold, a.role) for rid, a in self.assignments.items())
        write_csv_atomic(path, ("id", "fold", "role"), rows)

    @classmethod
    def read_csv(cls, path: str | os.PathLike) -> FoldPlan:
        assignments: dict[str, Assignment] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["id", "fold", "role"]:
                raise ManifestError(f"{path}: line 1: expected header id,fold,role")
            for row in reader:
                line = reader.line_num
                if not row:
                    continue
                if len(row) != 3:
                    raise ManifestError(f"{path}: line {line}: expected 3 fields")
                rid, fold, role = (c.strip() for c in row)
                if role not in (TRAIN, VAL, TEST):
                    raise ManifestError(f"{path}: line {line}: unknown role {role!r}")
                if rid in assignments:
                    raise ManifestError(f"{path}: line {line}: duplicate id {rid!r}")
                if (role == VAL) != (fold != ""):
                    raise ManifestError(f"{path}: line {line}: only val rows carry a fold")
                assignments[rid] = Assignment(role, int(fold) if fold else None)
        folds = [a.fold for a in assignments.values() if a.fold is not None]
        k = max(folds) + 1 if folds else 0
        return cls(k, assignments)

    def __eq__(self, other) -> bool:
        return isinstance(other, FoldPlan) and self.k == other.k and self.assignments == other.assignments


def kfold(
    train_pool: Sequence[ManifestRecord], k: int = 5, val_fraction: float = 0.2, seed: int = 0
) -> FoldPlan:
    """Stratified disjoint validation shards of round(val_fraction * N) records each
    (at most N // k, so the shards always fit).

    Each class contributes floor or ceil of its proportional share to every
    shard; the per-shard leftovers are handed out by largest remainder and
    rotated across shards so every shard has exactly the same size. Records
    left over when ``k * shard < N`` are training data in every fold.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    groups = _by_class(train_pool)
    counts = {c: len(groups[c]) for c in CLASSES}
    minority = min(counts.values())
    if k > minority:
        raise ValueError(f"k={k} exceeds the minority-class count {minority}")
    n = len(train_pool)
    # rounding up can overshoot the pool (5 * round(0.2 * 108) = 110 > 108); cap at n // k
    shard = min(int(np.floor(val_fraction * n + 0.5)), n // k)
    if shard < 1:
        raise ValueError(f"val_fraction={val_fraction} cannot give {k} disjoint non-empty shards of {n} records")

    base = {c: shard * counts[c] // n for c in CLASSES}
    rems = [shard * counts[c] % n for c in CLASSES]
    extras_per_shard = shard - sum(base.values())
    extras = largest_remainder(k * extras_per_shard, rems) if extras_per_shard else [0] * len(CLASSES)

    sizes = {c: [base[c]] * k for c in CLASSES}
    t = 0
    for c, e in zip(CLASSES, extras):
        for _ in range(e):
            sizes[c][t % k] += 1
            t += 1

    assignments: dict[str, Assignment] = {}
    fold_of: dict[int, int] = {}
    for c in CLASSES:
        perm = _rng(seed, _KFOLD, c).permutation(counts[c])
        start = 0
        for fold, size in enumerate(sizes[c]):
            for j in perm[start : start + size]:
                fold_of[groups[c][j]] = fold
            start += size
    for i, r in enumerate(train_pool):
        f = fold_of.get(i)
        assignments[r.id] = Assignment(VAL, f) if f is not None else Assignment(TRAIN, None)
    return FoldPlan(k, assignments, seed)


def default_test_count(n: int) -> int:
    """10,000, or round(10%) of a smaller manifest."""
    return min(DEFAULT_TEST_COUNT, int(np.floor(0.1 * n + 0.5)))


def plan_splits(
    records: Sequence[ManifestRecord],
    test_count: int | None = None,
    k: int = 5,
    val_fraction: float = 0.2,
    seed: int = 0,
) -> FoldPlan:
    """Holdout test split followed by stratified k-fold over the remaining pool."""
    if test_count is None:
        test_count = default_test_count(len(records))
    pool, test = stratified_holdout(records, test_count, seed)
    plan = kfold(pool, k, val_fraction, seed)
    order = {r.id: None for r in records}
    for r in test:
        plan.assignments[r.id] = Assignment(TEST, None)
    plan.assignments = {rid: plan.assignments[rid] for rid in order}
    return plan


@dataclass(frozen=True)
class ClassWeights:
    w: tuple[float, ...]

    def __getitem__(self, label: int) -> float:
        return self.w[label]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.w, dtype=np.float64)


def class_weights(records: Iterable[ManifestRecord | int], n_classes: int = len(CLASSES)) -> ClassWeights:
    """Inverse-frequency weights ``N / (C * n_j)``; sum_j w_j * n_j == N."""
    labels = [r.label if isinstance(r, ManifestRecord) else int(r) for r in records]
    counts = Counter(labels)
    missing = [c for c in range(n_classes) if counts[c] == 0]
    if missing:
        raise ValueError(f"class weights need every class present; missing {missing}")
    total = len(labels)
    return ClassWeights(tuple(total / (n_classes * counts[c]) for c in range(n_classes)))
