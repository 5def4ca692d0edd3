"""Raster file I/O: PNG and binary PGM/PPM, by file extension."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

from .raster import Raster

_FORMATS = {".png": "PNG", ".pgm": "PPM", ".ppm": "PPM", ".pnm": "PPM"}


def read_raster(path: str | os.PathLike) -> Raster:
    with Image.open(path) as im:
        if im.mode in ("L", "RGB"):
            arr = np.asarray(im)
        elif im.mode in ("1", "P", "I;16", "I"):
            arr = np.asarray(im.convert("L"))
        else:
            arr = np.asarray(im.convert("RGB"))
    return Raster(arr)


def write_raster(img: Raster, path: str | os.PathLike) -> None:
    """Write atomically (temp file + rename). PGM is gray-only, PPM colour-only."""
    path = Path(path)
    fmt = _FORMATS.get(path.suffix.lower())
    if fmt is None:
        raise ValueError(f"unsupported raster extension: {path.suffix}")
    if path.suffix.lower() == ".pgm" and img.channels != 1:
        raise ValueError("PGM holds single-channel images only")
    if path.suffix.lower() == ".ppm" and img.channels != 3:
        raise ValueError("PPM holds three-channel images only")
    arr = img.pixels[:, :, 0] if img.channels == 1 else img.pixels
    im = Image.fromarray(np.ascontiguousarray(arr))
    tmp = path.with_name(f".{path.name}.tmp")
    kwargs = {"compress_level": 1} if fmt == "PNG" else {}
    im.save(tmp, format=fmt, **kwargs)
    os.replace(tmp, path)
