"""Seeded stochastic augmentation (flips, rotation, scaling)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geometry import flip_h, flip_v, rotate, scale_about_center
from .raster import Raster

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class AugmentPolicy:
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    rotation_range: float = 10.0
    scale_range: tuple[float, float] = (1.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        for p in (self.hflip_prob, self.vflip_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("flip probabilities must be in [0, 1]")
        if self.rotation_range < 0:
            raise ValueError("rotation_range is a half-width and must be >= 0")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError("scale_range must be a positive interval")

    @classmethod
    def identity(cls, seed: int = 0) -> AugmentPolicy:
        return cls(0.0, 0.0, 0.0, (1.0, 1.0), seed)

    @property
    def is_identity(self) -> bool:
        return (
            self.hflip_prob == 0.0
            and self.vflip_prob == 0.0
            and self.rotation_range == 0.0
            and self.scale_range == (1.0, 1.0)
        )


class AugmentDraw(NamedTuple):
    hflip: bool
    vflip: bool
    angle: float
    scale: float


def sample_stream(seed: int, index: int) -> np.random.Generator:
    """Philox-4x64-10 generator keyed on (seed, index); counter starts at zero.

    Being counter-based, the stream for a sample depends only on the key, so
    draws reproduce regardless of worker count or processing order.
    """
    key = np.array([seed & _MASK64, index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def draw(policy: AugmentPolicy, sample_index: int) -> AugmentDraw:
    rng = sample_stream(policy.seed, sample_index)
    u = rng.random(4)
    lo, hi = policy.scale_range
    return AugmentDraw(
        hflip=bool(u[0] < policy.hflip_prob),
        vflip=bool(u[1] < policy.vflip_prob),
        angle=float(policy.rotation_range * (2.0 * u[2] - 1.0)),
        scale=float(lo + (hi - lo) * u[3]),
    )


def augment(img: Raster, policy: AugmentPolicy, sample_index: int) -> Raster:
    """Apply scale, then rotation, then flips, as drawn for ``sample_index``."""
    d = draw(policy, sample_index)
    out = img
    if d.scale != 1.0:
        out = scale_about_center(out, d.scale)
    if d.angle != 0.0:
        out = rotate(out, d.angle)
    if d.hflip:
        out = flip_h(out)
    if d.vflip:
        out = flip_v(out)
    return out
