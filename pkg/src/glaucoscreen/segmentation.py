"""Optic-disc localization and the three-view preprocessing pipeline.

A segmenter is any callable taking the CLAHE-enhanced 256x256 image and
returning a :class:`Mask`. The built-in one is a brightness-blob heuristic; real
network outputs come in as precomputed masks (see :class:`FixedMask`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import ndimage

from .imaging import ClaheParams, Raster, clahe, crop, polar_transform, resize_bilinear
from .imaging.geometry import center_crop

FRAME = 256
FALLBACK_RESIZE = 272
PAD_PERCENT = 30
MIN_PADDING = 20
MAJORITY_FRACTION = 0.5
MIN_CROP_SIDE = 8
BRIGHT_PERCENTILE = 99.0

RESIZED = "resized256"
ORIGINAL = "original"

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


class Mask:
    """Boolean disc mask, row-major, ``True`` = disc."""

    __slots__ = ("bits",)

    def __init__(self, bits: np.ndarray):
        bits = np.asarray(bits)
        if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
            raise ValueError(f"mask must be a non-empty 2-D array, got shape {bits.shape}")
        bits = np.ascontiguousarray(bits, dtype=bool).copy()
        bits.flags.writeable = False
        self.bits = bits

    @classmethod
    def empty(cls, width: int = FRAME, height: int = FRAME) -> Mask:
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def from_raster(cls, img: Raster) -> Mask:
        """Nonzero luma counts as disc (how mask images are stored on disk)."""
        return cls(img.luminance() > 0)

    def to_raster(self) -> Raster:
        return Raster(np.where(self.bits, 255, 0).astype(np.uint8))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other) -> bool:
        return isinstance(other, Mask) and np.array_equal(self.bits, other.bits)


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int
    frame: str = RESIZED

    def __post_init__(self):
        if self.x < 0 or self.y < 0 or self.w < 1 or self.h < 1:
            raise ValueError(f"invalid bounding box {self}")

    @property
    def x1(self) -> int:
        return self.x + self.w

    @property
    def y1(self) -> int:
        return self.y + self.h


class Component(NamedTuple):
    label: int
    area: int
    bbox: BoundingBox


@dataclass(frozen=True)
class ViewSet:
    original_view: Raster
    cropped_view: Raster
    polar_view: Raster
    used_fallback: bool
    crop_box: BoundingBox | None = field(default=None, compare=False)

    def __getitem__(self, view: str) -> Raster:
        return {"original": self.original_view, "cropped": self.cropped_view, "polar": self.polar_view}[view]


Segmenter = Callable[[Raster], Mask]


def connected_components(mask: Mask) -> list[Component]:
    """4-connected components, labelled 1.. in raster-scan discovery order."""
    labels, n = ndimage.label(mask.bits, structure=_FOUR_CONNECTED)
    if n == 0:
        return []
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    out = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        ys, xs = sl
        box = BoundingBox(xs.start, ys.start, xs.stop - xs.start, ys.stop - ys.start, RESIZED)
        out.append(Component(i, int(areas[i]), box))
    return out


def segment_disc(img256: Raster) -> Mask:
    """Brightest blob: luma at or above its 99th percentile, largest 4-connected piece.

    Pixels at the image minimum never count, so a flat image gives an empty mask.
    """
    if (img256.width, img256.height) != (FRAME, FRAME):
        raise ValueError(f"segmenter expects a {FRAME}x{FRAME} image, got {img256.width}x{img256.height}")
    lum = img256.luminance()
    threshold = np.percentile(lum, BRIGHT_PERCENTILE)
    candidate = (lum >= threshold) & (lum > lum.min())
    if not candidate.any():
        return Mask.empty(FRAME, FRAME)
    labels, n = ndimage.label(candidate, structure=_FOUR_CONNECTED)
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    areas[0] = 0
    return Mask(labels == int(np.argmax(areas)))


class FixedMask:
    """Segmenter that ignores the image and returns a precomputed mask."""

    def __init__(self, mask: Mask):
        self.mask = mask

    def __call__(self, img256: Raster) -> Mask:
        return self.mask


def mask_to_bbox(mask: Mask) -> BoundingBox | None:
    rows = np.flatnonzero(mask.bits.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.bits.any(axis=0))
    return BoundingBox(
        int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1), RESIZED
    )


def disc_diameter(bbox: BoundingBox) -> int:
    if bbox.frame != RESIZED:
        raise ValueError("disc diameter is defined on the resized frame")
    return max(bbox.w, bbox.h)


def padding_for(diameter: int) -> int:
    """30% of the diameter, rounded half-up in integer arithmetic, floored at 20 px."""
    return max((PAD_PERCENT * int(diameter) + 50) // 100, MIN_PADDING)


def pad_bbox(bbox: BoundingBox, diameter: int, frame_size: int = FRAME) -> BoundingBox:
    if bbox.frame != RESIZED:
        raise ValueError("padding is applied in the resized frame")
    p = padding_for(diameter)
    x0 = max(bbox.x - p, 0)
    y0 = max(bbox.y - p, 0)
    x1 = min(bbox.x1 + p, frame_size)
    y1 = min(bbox.y1 + p, frame_size)
    return BoundingBox(x0, y0, x1 - x0, y1 - y0, RESIZED)


def to_original_frame(bbox: BoundingBox, orig_w: int, orig_h: int, frame_size: int = FRAME) -> BoundingBox:
    """Scale a resized-frame box to the original image, rounding outward, clamped.

    Returns a box that may be thinner than 1 px only if the input is degenerate;
    callers check the crop size.
    """
    x0 = (bbox.x * orig_w) // frame_size
    y0 = (bbox.y * orig_h) // frame_size
    x1 = -((-bbox.x1 * orig_w) // frame_size)
    y1 = -((-bbox.y1 * orig_h) // frame_size)
    x1, y1 = min(x1, orig_w), min(y1, orig_h)
    return BoundingBox(x0, y0, max(x1 - x0, 1), max(y1 - y0, 1), ORIGINAL)


def fallback_crop(original: Raster) -> Raster:
    """Center square equivalent to resizing the shorter side to 272 and taking 256."""
    shorter = min(original.width, original.height)
    side = max(1, min(shorter, (shorter * FRAME * 2 + FALLBACK_RESIZE) // (2 * FALLBACK_RESIZE)))
    return center_crop(original, side)


def needs_fallback(mask: Mask | None, crop_box: BoundingBox | None = None) -> bool:
    if mask is None or mask.area == 0:
        return True
    if mask.area > MAJORITY_FRACTION * mask.width * mask.height:
        return True
    return crop_box is not None and (crop_box.w < MIN_CROP_SIDE or crop_box.h < MIN_CROP_SIDE)


def preprocess_sample(
    original: Raster,
    segmenter: Segmenter = segment_disc,
    clahe_params: ClaheParams = ClaheParams(),
) -> ViewSet:
    """Original, disc-cropped and polar views, each 256x256.

    The mask is computed on the CLAHE-enhanced 256x256 image; its padded box is
    mapped back to the original and raw original pixels are cropped. An empty
    mask, a mask covering over half the frame, or a crop narrower than 8 px
    switches to the center-crop fallback.
    """
    resized = resize_bilinear(original, FRAME, FRAME)
    enhanced = clahe(resized, clahe_params.clip_fraction, clahe_params.grid)
    mask = segmenter(enhanced)
    if (mask.width, mask.height) != (FRAME, FRAME):
        raise ValueError(f"segmenter returned a {mask.width}x{mask.height} mask, expected {FRAME}x{FRAME}")

    box = None
    if not needs_fallback(mask):
        tight = mask_to_bbox(mask)
        padded = pad_bbox(tight, disc_diameter(tight))
        box = to_original_frame(padded, original.width, original.height)
        if needs_fallback(mask, box):
            box = None

    if box is None:
        region = fallback_crop(original)
    else:
        region = crop(original, box.x, box.y, box.w, box.h)
    cropped = resize_bilinear(region, FRAME, FRAME)
    return ViewSet(
        original_view=resized,
        cropped_view=cropped,
        polar_view=polar_transform(cropped, FRAME, FRAME),
        used_fallback=box is None,
        crop_box=box,
    )
