"""Raster container and pixel-level transforms."""

from .augment import AugmentPolicy, augment, draw, sample_stream
from .clahe import ClaheParams, clahe
from .geometry import (
    center_crop,
    crop,
    flip_h,
    flip_v,
    polar_transform,
    resize_bilinear,
    rotate,
    scale_about_center,
)
from .io import read_raster, write_raster
from .raster import Point, PolarCoord, Raster, from_polar, round_half_up, to_polar

__all__ = [
    "AugmentPolicy",
    "ClaheParams",
    "Point",
    "PolarCoord",
    "Raster",
    "augment",
    "center_crop",
    "clahe",
    "crop",
    "draw",
    "flip_h",
    "flip_v",
    "from_polar",
    "polar_transform",
    "read_raster",
    "resize_bilinear",
    "rotate",
    "round_half_up",
    "sample_stream",
    "scale_about_center",
    "to_polar",
    "write_raster",
]
