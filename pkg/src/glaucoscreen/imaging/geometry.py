"""Geometric transforms on rasters: resize, crops, polar warp, flips, rotation, scaling.

All resampling is inverse-mapped and bilinear, computed in float64 and rounded
half-up back to 8 bits.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .raster import Raster, apply_taps, bilinear_taps, sample_bilinear, to_uint8


def _axis_coords(out_size: int, in_size: int) -> np.ndarray:
    # pixel-center alignment: output center i maps to (i + 0.5) * in/out - 0.5
    return (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5


def resize_bilinear(img: Raster, out_w: int, out_h: int) -> Raster:
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be >= 1")
    if (out_w, out_h) == (img.width, img.height):
        return img
    src = img.pixels.astype(np.float64)

    ys = np.clip(_axis_coords(out_h, img.height), 0.0, img.height - 1)
    y0 = np.floor(ys).astype(np.intp)
    y1 = np.minimum(y0 + 1, img.height - 1)
    fy = (ys - y0)[:, None, None]
    rows = src[y0] * (1.0 - fy) + src[y1] * fy

    xs = np.clip(_axis_coords(out_w, img.width), 0.0, img.width - 1)
    x0 = np.floor(xs).astype(np.intp)
    x1 = np.minimum(x0 + 1, img.width - 1)
    fx = (xs - x0)[None, :, None]
    out = rows[:, x0] * (1.0 - fx) + rows[:, x1] * fx
    return Raster(to_uint8(out))


def crop(img: Raster, x: int, y: int, w: int, h: int) -> Raster:
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > img.width or y + h > img.height:
        raise ValueError(f"crop window ({x}, {y}, {w}, {h}) outside {img.width}x{img.height} image")
    return Raster(img.pixels[y : y + h, x : x + w])


def center_crop(img: Raster, size: int) -> Raster:
    """Square window centered in the image; an odd leftover goes to the right/bottom margin."""
    if size < 1:
        raise ValueError("crop size must be >= 1")
    if size > min(img.width, img.height):
        raise ValueError("crop exceeds image")
    x = (img.width - size) // 2
    y = (img.height - size) // 2
    return crop(img, x, y, size, size)


def flip_h(img: Raster) -> Raster:
    return Raster(img.pixels[:, ::-1])


def flip_v(img: Raster) -> Raster:
    return Raster(img.pixels[::-1])


def _center(img: Raster) -> tuple[float, float]:
    return (img.width - 1) / 2.0, (img.height - 1) / 2.0


def polar_transform(img: Raster, out_w: int, out_h: int) -> Raster:
    """Unwrap the image around its center: columns sweep the angle, rows the radius.

    Output pixel (i, j) samples the source at ``center + (r cos t, r sin t)`` with
    ``t = 2*pi*(i + 0.5)/out_w`` and ``r = r_max*(j + 0.5)/out_h``, where
    ``r_max = min(width, height)/2``. Row 0 is nearest the center.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be >= 1")
    idx, wts = _polar_taps(img.width, img.height, out_w, out_h)
    return Raster(to_uint8(apply_taps(img.pixels, idx, wts, (out_h, out_w))))


@lru_cache(maxsize=8)
def _polar_taps(w: int, h: int, out_w: int, out_h: int):
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    r_max = min(w, h) / 2.0
    theta = 2.0 * math.pi * (np.arange(out_w) + 0.5) / out_w
    radius = r_max * (np.arange(out_h) + 0.5) / out_h
    xs = cx + radius[:, None] * np.cos(theta)[None, :]
    ys = cy + radius[:, None] * np.sin(theta)[None, :]
    idx, wts = bilinear_taps(xs, ys, w, h)
    idx.flags.writeable = False
    wts.flags.writeable = False
    return idx, wts


def _affine_about_center(img: Raster, a: float, b: float, c: float, d: float) -> Raster:
    # (a b; c d) maps output offsets from the center to source offsets
    cx, cy = _center(img)
    du = np.arange(img.width, dtype=np.float64) - cx
    dv = np.arange(img.height, dtype=np.float64) - cy
    xs = cx + a * du[None, :] + b * dv[:, None]
    ys = cy + c * du[None, :] + d * dv[:, None]
    return Raster(to_uint8(sample_bilinear(img.pixels, xs, ys, fill=0.0)))


def rotate(img: Raster, degrees: float) -> Raster:
    """Rotate about the image center; positive angles turn content counter-clockwise
    as displayed (y axis pointing down). Uncovered corners are filled with 0."""
    if degrees == 0:
        return img
    t = math.radians(degrees)
    cos_t, sin_t = math.cos(t), math.sin(t)
    # inverse of a counter-clockwise display rotation in y-down coordinates
    return _affine_about_center(img, cos_t, -sin_t, sin_t, cos_t)


def scale_about_center(img: Raster, factor: float) -> Raster:
    """Magnify (factor > 1) or shrink content about the center, keeping the frame size."""
    if not factor > 0:
        raise ValueError("scale factor must be positive")
    if factor == 1.0:
        return img
    inv = 1.0 / factor
    return _affine_about_center(img, inv, 0.0, 0.0, inv)
