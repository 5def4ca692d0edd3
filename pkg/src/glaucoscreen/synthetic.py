"""Synthetic fundus-like images whose label is carried by the cup-to-disc ratio.

Each image: black surround, a vignetted orange retina disc (the field of view),
a bright optic disc at a jittered position with an even brighter cup inside,
a few dark vessels leaving the disc, and Gaussian pixel noise.

The label shows up twice, through independent draws: referable cases get a
larger cup-to-disc ratio (visible in a disc crop) and deeper darkening of the
arcuate nerve-fibre bands above and below the disc (visible only in the whole
image, since the bands start beyond the crop margin). Everything is a pure
function of ``(seed, index)``.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import ManifestRecord, write_csv_atomic, write_manifest
from .imaging import Raster, write_raster
from .parallel import ordered_map


@dataclass(frozen=True)
class SyntheticDomain:
    """Appearance knobs; lengths are fractions of the image side."""

    fov_radius: float = 0.47
    disc_radius: tuple[float, float] = (0.05, 0.065)
    disc_jitter: float = 0.05
    cdr_normal: tuple[float, float] = (0.40, 0.10)
    cdr_referable: tuple[float, float] = (0.55, 0.10)
    retina_rgb: tuple[float, float, float] = (170.0, 80.0, 35.0)
    disc_rgb: tuple[float, float, float] = (230.0, 180.0, 110.0)
    cup_rgb: tuple[float, float, float] = (250.0, 232.0, 190.0)
    rnfl_normal: tuple[float, float] = (0.0, 0.06)
    rnfl_referable: tuple[float, float] = (0.13, 0.06)
    rnfl_band: tuple[float, float] = (2.6, 7.0)  # in disc radii
    rnfl_halfwidth: float = 0.6  # radians either side of vertical
    vessel_count: int = 4
    noise_sigma: float = 6.0


DEFAULT_DOMAIN = SyntheticDomain()
# second appearance for transfer experiments: tighter field of view around a
# larger disc, cooler colour balance
SHIFTED_DOMAIN = SyntheticDomain(
    disc_radius=(0.12, 0.14),
    disc_jitter=0.02,
    retina_rgb=(120.0, 95.0, 70.0),
    disc_rgb=(200.0, 190.0, 160.0),
    cup_rgb=(240.0, 240.0, 225.0),
    noise_sigma=8.0,
)


@dataclass(frozen=True)
class SyntheticTruth:
    id: str
    label: int
    disc_x: float
    disc_y: float
    disc_r: float
    cup_x: float
    cup_y: float
    cup_r: float
    rnfl_depth: float

    @property
    def cdr(self) -> float:
        return self.cup_r / self.disc_r


def _soft_disc(dist: np.ndarray, radius: float, edge: float = 1.0) -> np.ndarray:
    return np.clip((radius - dist) / edge + 0.5, 0.0, 1.0)


def render(label: int, size: int, rng: np.random.Generator, domain: SyntheticDomain = DEFAULT_DOMAIN):
    """Draw one image.

    Returns ``(Raster, (disc_x, disc_y, disc_r, cup_x, cup_y, cup_r, rnfl_depth))``
    with lengths in pixels.
    """
    s = float(size)
    c = (size - 1) / 2.0
    y, x = np.mgrid[0:size, 0:size].astype(np.float32)

    # python floats keep the float32 arrays from being promoted
    disc_r = s * float(rng.uniform(*domain.disc_radius))
    disc_x = c + s * float(rng.uniform(-domain.disc_jitter, domain.disc_jitter))
    disc_y = c + s * float(rng.uniform(-domain.disc_jitter, domain.disc_jitter))
    cdr_mu, cdr_sd = domain.cdr_referable if label == 1 else domain.cdr_normal
    cdr = float(np.clip(rng.normal(cdr_mu, cdr_sd), 0.12, 0.9))
    cup_r = cdr * disc_r
    # cup sits slightly off the disc center, never touching its rim
    slack = max(disc_r - cup_r - 1.0, 0.0) * 0.3
    angle = float(rng.uniform(0, 2 * np.pi))
    cup_x = disc_x + slack * math.cos(angle)
    cup_y = disc_y + slack * math.sin(angle)

    r_fov = domain.fov_radius * s
    d_center = np.hypot(x - c, y - c)
    fov = _soft_disc(d_center, r_fov, edge=2.0)
    gx, gy = (float(g) for g in rng.normal(0, 0.08, size=2))
    illum = 1.0 - 0.35 * (d_center / r_fov) ** 2 + gx * (x - c) / s + gy * (y - c) / s
    base = np.asarray(domain.retina_rgb, dtype=np.float32)[None, None, :] * illum[..., None]

    # arcuate nerve-fibre bands above and below the disc; depth depends on the label
    mu, sd = domain.rnfl_referable if label == 1 else domain.rnfl_normal
    depth = float(np.clip(rng.normal(mu, sd), 0.0, 0.6))
    dx, dy = x - disc_x, y - disc_y
    d_disc = np.hypot(dx, dy)
    rho = d_disc / disc_r
    inner, outer = domain.rnfl_band
    radial = np.clip(rho - inner, 0.0, 1.0) * np.clip(outer - rho, 0.0, 1.0)
    vertical = np.abs(dy) / np.maximum(d_disc, 1e-6)  # |sin| of the angle
    half = domain.rnfl_halfwidth
    angular = np.clip((vertical - math.cos(half)) * (3.0 / (1.0 - math.cos(half))), 0.0, 1.0)
    base = base * (1.0 - depth * radial * angular)[..., None]

    # vessels: dark bands along rays from the disc center
    vessel = np.zeros_like(x)
    for theta in rng.uniform(0, 2 * np.pi, size=domain.vessel_count).tolist():
        ux, uy = math.cos(theta), math.sin(theta)
        along = dx * ux + dy * uy
        across = np.abs(dy * ux - dx * uy)
        width = s * float(rng.uniform(0.004, 0.008))
        vessel = np.maximum(vessel, (along > 0) * _soft_disc(across, width, edge=1.0))
    base = base * (1.0 - 0.45 * vessel[..., None])

    m_disc = _soft_disc(d_disc, disc_r)[..., None]
    m_cup = _soft_disc(np.hypot(x - cup_x, y - cup_y), cup_r)[..., None]
    img = base * (1 - m_disc) + np.asarray(domain.disc_rgb, dtype=np.float32) * m_disc
    img = img * (1 - m_cup) + np.asarray(domain.cup_rgb, dtype=np.float32) * m_cup
    img += domain.noise_sigma * rng.standard_normal(img.shape, dtype=np.float32)
    img = img * fov[..., None]
    pixels = np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)
    geometry = (disc_x, disc_y, disc_r, cup_x, cup_y, cup_r, depth)
    return Raster(pixels), tuple(float(v) for v in geometry)


def label_quota(n: int, imbalance_ratio: float) -> tuple[int, int]:
    """(normal, referable) counts for ``normal:referable = imbalance_ratio:1``."""
    n1 = int(np.floor(n / (imbalance_ratio + 1.0) + 0.5))
    n1 = min(max(n1, 1), n - 1)
    return n - n1, n1


@dataclass(frozen=True)
class _RenderJob:
    id: str
    label: int
    index: int
    seed: int
    size: int
    domain: SyntheticDomain
    out: Path


def _render_one(job: _RenderJob) -> tuple[ManifestRecord, SyntheticTruth]:
    img, geom = render(job.label, job.size, np.random.default_rng([job.seed, 1, job.index]), job.domain)
    rel = f"images/{job.id}.png"
    write_raster(img, job.out / rel)
    return ManifestRecord(job.id, rel, job.label), SyntheticTruth(job.id, job.label, *geom)


def generate_synthetic(
    n: int,
    imbalance_ratio: float,
    image_size: int,
    seed: int,
    out_dir: str | os.PathLike,
    domain: SyntheticDomain = DEFAULT_DOMAIN,
    prefix: str = "syn",
    jobs: int = 1,
) -> list[ManifestRecord]:
    """Write ``images/<id>.png``, ``manifest.csv`` and ``truth.csv`` under ``out_dir``.

    Manifest paths are relative to ``out_dir``.
    """
    if n < 2:
        raise ValueError("need at least two images")
    if imbalance_ratio <= 0:
        raise ValueError("imbalance_ratio must be positive")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    n0, n1 = label_quota(n, imbalance_ratio)
    labels = np.array([0] * n0 + [1] * n1)
    labels = labels[np.random.default_rng([seed, 0]).permutation(n)]

    width = len(str(n - 1))
    tasks = [
        _RenderJob(f"{prefix}{i:0{width}d}", int(label), i, seed, image_size, domain, out)
        for i, label in enumerate(labels.tolist())
    ]
    results = ordered_map(_render_one, tasks, jobs)
    records = [r for r, _ in results]
    truths = [t for _, t in results]
    write_manifest(records, out / "manifest.csv")
    write_csv_atomic(
        out / "truth.csv",
        list(asdict(truths[0]).keys()),
        ([t.id, t.label] + [f"{v:.6f}" for v in list(asdict(t).values())[2:]] for t in truths),
    )
    return records


_GEOMETRY = ("disc_x", "disc_y", "disc_r", "cup_x", "cup_y", "cup_r", "rnfl_depth")


def read_truth(path: str | os.PathLike) -> list[SyntheticTruth]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            SyntheticTruth(
                row["id"], int(row["label"]), *(float(row[k]) for k in _GEOMETRY)
            )
            for row in csv.DictReader(fh)
        ]
