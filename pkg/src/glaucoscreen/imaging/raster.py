"""8-bit raster container and the sampling helpers shared by the geometric ops."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np


class Raster:
    """Immutable 2-D image with 1 or 3 channels of 8-bit samples.

    Pixels are held as a read-only ``(height, width, channels)`` uint8 array.
    A 2-D array is accepted and promoted to a single channel.
    """

    __slots__ = ("_pixels",)

    def __init__(self, pixels: np.ndarray):
        arr = np.asarray(pixels)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"raster must be HxW, HxWx1 or HxWx3, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("raster must be at least 1x1")
        if arr.dtype != np.uint8:
            if np.issubdtype(arr.dtype, np.integer) and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("samples outside the 8-bit range")
            arr = arr.astype(np.uint8)
        arr = np.ascontiguousarray(arr)
        if arr.flags.writeable:
            arr = arr.copy()
            arr.flags.writeable = False
        self._pixels = arr

    @classmethod
    def from_samples(cls, samples, width: int, height: int, channels: int = 1) -> Raster:
        """Build from a flat row-major sample sequence."""
        flat = np.asarray(samples, dtype=np.int64).ravel()
        if flat.size != width * height * channels:
            raise ValueError(
                f"expected {width * height * channels} samples, got {flat.size}"
            )
        return cls(flat.reshape(height, width, channels).astype(np.uint8))

    @classmethod
    def filled(cls, width: int, height: int, value: int, channels: int = 1) -> Raster:
        return cls(np.full((height, width, channels), value, dtype=np.uint8))

    @property
    def pixels(self) -> np.ndarray:
        return self._pixels

    @property
    def width(self) -> int:
        return self._pixels.shape[1]

    @property
    def height(self) -> int:
        return self._pixels.shape[0]

    @property
    def channels(self) -> int:
        return self._pixels.shape[2]

    @property
    def samples(self) -> np.ndarray:
        return self._pixels.ravel()

    def luminance(self) -> np.ndarray:
        """Luma plane as uint8 ``(H, W)``; Y = round(0.299R + 0.587G + 0.114B)."""
        if self.channels == 1:
            return self._pixels[:, :, 0]
        return luma(self._pixels)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Raster):
            return NotImplemented
        return np.array_equal(self._pixels, other._pixels)

    def __hash__(self):
        return hash((self._pixels.shape, self._pixels.tobytes()))

    def __repr__(self) -> str:
        return f"Raster({self.width}x{self.height}x{self.channels})"


class Point(NamedTuple):
    """Cartesian offset from a transform center, in pixels."""

    u: float
    v: float


class PolarCoord(NamedTuple):
    r: float
    theta: float


def to_polar(p: Point) -> PolarCoord:
    """Radius and angle of a Cartesian offset; the angle is wrapped to [0, 2*pi)."""
    r = math.hypot(p.u, p.v)
    theta = math.atan2(p.v, p.u)
    if theta < 0:
        theta += 2.0 * math.pi
        if theta >= 2.0 * math.pi:  # tiny negative angles round up to 2*pi
            theta = 0.0
    return PolarCoord(r, theta)


def from_polar(c: PolarCoord) -> Point:
    return Point(c.r * math.cos(c.theta), c.r * math.sin(c.theta))


def luma(rgb: np.ndarray) -> np.ndarray:
    rgb = rgb.astype(np.float64)
    y = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return to_uint8(y)


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Round half-up and saturate to the 8-bit range."""
    v = np.floor(np.asarray(values, dtype=np.float64) + 0.5)
    np.clip(v, 0, 255, out=v)
    return v.astype(np.uint8)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def bilinear_taps(xs: np.ndarray, ys: np.ndarray, w: int, h: int):
    """Flat indices of the four neighbours and their weights, coordinates clamped."""
    cx = np.clip(xs, 0.0, w - 1)
    cy = np.clip(ys, 0.0, h - 1)
    x0 = np.floor(cx).astype(np.intp)
    y0 = np.floor(cy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = cx - x0
    fy = cy - y0
    idx = np.stack([y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1]).reshape(4, -1)
    wts = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy]).reshape(4, -1)
    return idx, wts


def apply_taps(pixels: np.ndarray, idx: np.ndarray, wts: np.ndarray, shape: tuple) -> np.ndarray:
    channels = pixels.shape[2]
    out = np.empty(tuple(shape) + (channels,), dtype=np.float64)
    # one channel at a time keeps the gathers contiguous
    for c in range(channels):
        plane = np.ascontiguousarray(pixels[:, :, c]).ravel()
        acc = wts[0] * plane[idx[0]]
        for k in range(1, 4):
            acc += wts[k] * plane[idx[k]]
        out[..., c] = acc.reshape(shape)
    return out


def sample_bilinear(
    pixels: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill: float | None = None
) -> np.ndarray:
    """Bilinear lookup of ``pixels`` (H, W, C) at float coordinates.

    Coordinates are clamped to the pixel-center grid. With ``fill`` set, points
    outside the image footprint ``[-0.5, size - 0.5]`` take that value instead.
    Returns float64 of shape ``xs.shape + (C,)``.
    """
    h, w = pixels.shape[:2]
    idx, wts = bilinear_taps(xs, ys, w, h)
    out = apply_taps(pixels, idx, wts, xs.shape)
    if fill is not None:
        eps = 1e-9
        outside = (xs < -0.5 - eps) | (xs > w - 0.5 + eps) | (ys < -0.5 - eps) | (ys > h - 0.5 + eps)
        out[outside] = fill
    return out
