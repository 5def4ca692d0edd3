"""Contrast limited adaptive histogram equalization on 8-bit rasters."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .raster import Raster, to_uint8

NBINS = 256


@dataclass(frozen=True)
class ClaheParams:
    clip_fraction: float = 0.01
    grid: int = 8

    def __post_init__(self):
        if self.grid < 1:
            raise ValueError("grid must be >= 1")
        if not 0.0 < self.clip_fraction <= 1.0:
            raise ValueError("clip_fraction must be in (0, 1]")


def clip_histogram(hist: np.ndarray, limit: int) -> np.ndarray:
    """Clip every bin at ``limit`` and hand the excess back out in one pass.

    The excess is split evenly; the leftover ``excess % nbins`` counts go one
    each to bins spread at a regular stride, so the total is preserved.
    """
    hist = np.asarray(hist, dtype=np.int64)
    excess = int(np.maximum(hist - limit, 0).sum())
    out = np.minimum(hist, limit)
    if excess == 0:
        return out
    nbins = out.size
    quotient, remainder = divmod(excess, nbins)
    out = out + quotient
    if remainder:
        step = max(nbins // remainder, 1)
        out[np.arange(remainder) * step] += 1
    return out


def tile_edges(size: int, grid: int) -> np.ndarray:
    """Integer tile boundaries along one axis; tiles differ in size by at most one pixel."""
    n = min(grid, size)
    return (np.arange(n + 1) * size) // n


def _tile_luts(plane: np.ndarray, ys: np.ndarray, xs: np.ndarray, clip_fraction: float) -> np.ndarray:
    ny, nx = len(ys) - 1, len(xs) - 1
    # one bincount over (tile, level) gives every tile histogram at once
    row_tile = np.repeat(np.arange(ny), np.diff(ys))
    col_tile = np.repeat(np.arange(nx), np.diff(xs))
    tile_of = row_tile[:, None] * nx + col_tile[None, :]
    hists = np.bincount((tile_of * NBINS + plane).ravel(), minlength=ny * nx * NBINS).reshape(ny * nx, NBINS)
    counts = np.outer(np.diff(ys), np.diff(xs)).ravel()
    luts = np.empty((ny * nx, NBINS), dtype=np.float64)
    identity = np.arange(NBINS, dtype=np.float64)
    single = np.count_nonzero(hists, axis=1) <= 1
    for t in range(ny * nx):
        if single[t]:
            # single-valued tile: leave its level where it is
            luts[t] = identity
            continue
        limit = math.ceil(clip_fraction * counts[t])
        luts[t] = np.cumsum(clip_histogram(hists[t], limit)) * (255.0 / counts[t])
    return luts.reshape(ny, nx, NBINS)


def _interp_weights(size: int, edges: np.ndarray):
    """Per-pixel neighbouring tile indices and the weight of the second one."""
    centers = (edges[:-1] + edges[1:] - 1) / 2.0
    pos = np.arange(size, dtype=np.float64)
    hi = np.searchsorted(centers, pos, side="right")
    lo = np.clip(hi - 1, 0, len(centers) - 1)
    hi = np.clip(hi, 0, len(centers) - 1)
    span = centers[hi] - centers[lo]
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(span > 0, (pos - centers[lo]) / np.where(span > 0, span, 1.0), 0.0)
    return lo, hi, np.clip(w, 0.0, 1.0)


def equalize_plane(plane: np.ndarray, params: ClaheParams) -> np.ndarray:
    """CLAHE on a single uint8 plane ``(H, W)``; returns float64 mapped levels."""
    h, w = plane.shape
    ys = tile_edges(h, params.grid)
    xs = tile_edges(w, params.grid)
    luts = _tile_luts(plane, ys, xs, params.clip_fraction)

    ylo, yhi, wy = _interp_weights(h, ys)
    xlo, xhi, wx = _interp_weights(w, xs)
    flat = luts.ravel()
    nx = luts.shape[1]
    v = plane.astype(np.intp)
    wy = wy[:, None]
    wx = wx[None, :]
    top = (ylo * nx * NBINS)[:, None] + v
    bottom = (yhi * nx * NBINS)[:, None] + v
    left = (xlo * NBINS)[None, :]
    right = (xhi * NBINS)[None, :]
    upper = flat[top + left] * (1 - wx) + flat[top + right] * wx
    lower = flat[bottom + left] * (1 - wx) + flat[bottom + right] * wx
    return upper * (1 - wy) + lower * wy


def clahe(img: Raster, clip_fraction: float = 0.01, grid: int = 8) -> Raster:
    """Contrast limited adaptive histogram equalization.

    Each of ``grid x grid`` tiles gets a 256-bin histogram clipped at
    ``ceil(clip_fraction * tile_pixels)``; its CDF, scaled to [0, 255], is the
    tile's mapping. Pixels blend the mappings of the four nearest tile centers.
    Colour images are equalized on luma; the RGB channels are then scaled by
    the luma gain, which keeps their ratios.
    """
    params = ClaheParams(clip_fraction, grid)
    if img.channels == 1:
        return Raster(to_uint8(equalize_plane(img.pixels[:, :, 0], params)))

    y = img.luminance()
    y_new = to_uint8(equalize_plane(y, params)).astype(np.float64)
    rgb = img.pixels.astype(np.float64)
    y_old = y.astype(np.float64)
    gain = np.divide(y_new, y_old, out=np.zeros_like(y_new), where=y_old > 0)
    out = rgb * gain[:, :, None]
    black = y_old == 0
    out[black] = y_new[black][:, None]
    return Raster(to_uint8(out))
