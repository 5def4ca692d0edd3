from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glaucoscreen.imaging import Raster
from glaucoscreen.segmentation import (
    BoundingBox,
    FixedMask,
    Mask,
    connected_components,
    disc_diameter,
    fallback_crop,
    mask_to_bbox,
    pad_bbox,
    padding_for,
    preprocess_sample,
    segment_disc,
    to_original_frame,
)


def disc_membership(size, cx, cy, radius):
    y, x = np.mgrid[0:size, 0:size]
    return (x - cx) ** 2 + (y - cy) ** 2 <= radius**2


def disc_raster(size, cx, cy, radius, inner=250, outer=20, channels=1):
    arr = np.where(disc_membership(size, cx, cy, radius), inner, outer).astype(np.uint8)
    if channels == 3:
        arr = np.stack([arr] * 3, axis=2)
    return Raster(arr)


def bfs_components(bits):
    """Independent flood-fill oracle: (area, x, y, w, h) in scan discovery order."""
    h, w = bits.shape
    seen = np.zeros_like(bits)
    out = []
    for y in range(h):
        for x in range(w):
            if bits[y, x] and not seen[y, x]:
                q = deque([(y, x)])
                seen[y, x] = True
                pts = []
                while q:
                    cy, cx = q.popleft()
                    pts.append((cy, cx))
                    for ny, nx in ((cy - 1, cx), (cy + 1, cx), (cy, cx - 1), (cy, cx + 1)):
                        if 0 <= ny < h and 0 <= nx < w and bits[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            q.append((ny, nx))
                ys = [p[0] for p in pts]
                xs = [p[1] for p in pts]
                out.append((len(pts), min(xs), min(ys), max(xs) - min(xs) + 1, max(ys) - min(ys) + 1))
    return out


class TestComponents:
    def test_empty(self):
        assert connected_components(Mask.empty(10, 7)) == []

    def test_full(self):
        comps = connected_components(Mask(np.ones((5, 9), dtype=bool)))
        assert len(comps) == 1 and comps[0].area == 45

    def test_two_squares(self):
        bits = np.zeros((8, 8), dtype=bool)
        bits[1:3, 1:3] = True
        bits[5:7, 4:6] = True
        comps = connected_components(Mask(bits))
        assert [c.area for c in comps] == [4, 4]
        assert comps[0].bbox == BoundingBox(1, 1, 2, 2)
        assert comps[1].bbox == BoundingBox(4, 5, 2, 2)

    def test_diagonal_not_connected(self):
        bits = np.array([[1, 0], [0, 1]], dtype=bool)
        assert len(connected_components(Mask(bits))) == 2

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 0.7))
    def test_matches_flood_fill(self, seed, density):
        bits = np.random.default_rng(seed).random((14, 17)) < density
        got = [(c.area, c.bbox.x, c.bbox.y, c.bbox.w, c.bbox.h) for c in connected_components(Mask(bits))]
        assert got == bfs_components(bits)


class TestSegmentDisc:
    def test_black_gives_empty(self):
        assert segment_disc(Raster.filled(256, 256, 0)).area == 0

    @pytest.mark.parametrize("radius", [8, 20, 35])
    def test_single_disc(self, radius):
        img = disc_raster(256, 100.0, 140.0, radius, channels=3)
        mask = segment_disc(img)
        truth = disc_membership(256, 100.0, 140.0, radius)
        diff = mask.bits ^ truth
        # every disagreement lies within 1 px of the analytic boundary
        y, x = np.nonzero(diff)
        r = np.hypot(x - 100.0, y - 140.0)
        assert np.all(np.abs(r - radius) <= 1.0)

    def test_keeps_largest_blob(self):
        arr = np.full((256, 256), 20, dtype=np.uint8)
        arr[30:55, 30:50] = 250  # 500 px
        arr[150:170, 150:160] = 250  # 200 px
        mask = segment_disc(Raster(arr))
        assert mask.area == 500
        assert mask.bits[40, 40] and not mask.bits[160, 155]

    def test_wrong_dims(self):
        with pytest.raises(ValueError):
            segment_disc(Raster.filled(128, 256, 0))


class TestBoxes:
    def test_empty(self):
        assert mask_to_bbox(Mask.empty()) is None

    def test_single_pixel(self):
        bits = np.zeros((64, 64), dtype=bool)
        bits[20, 10] = True
        assert mask_to_bbox(Mask(bits)) == BoundingBox(10, 20, 1, 1)

    def test_two_pixels(self):
        bits = np.zeros((64, 64), dtype=bool)
        bits[5, 5] = True
        bits[40, 30] = True
        assert mask_to_bbox(Mask(bits)) == BoundingBox(5, 5, 26, 36)

    @pytest.mark.parametrize("box,d", [((0, 0, 40, 30), 40), ((0, 0, 1, 1), 1), ((2, 3, 17, 29), 29)])
    def test_diameter(self, box, d):
        assert disc_diameter(BoundingBox(*box)) == d

    def test_diameter_rejects_original_frame(self):
        with pytest.raises(ValueError):
            disc_diameter(BoundingBox(0, 0, 3, 3, "original"))

    @pytest.mark.parametrize("d,p", [(100, 30), (50, 20), (67, 20), (75, 23), (65, 20), (70, 21)])
    def test_padding_values(self, d, p):
        assert padding_for(d) == p

    def test_padding_never_below_20(self):
        for d in range(1, 501):
            assert padding_for(d) >= 20

    def test_pad_and_clamp(self):
        box = pad_bbox(BoundingBox(100, 100, 50, 40), 50)
        assert box == BoundingBox(80, 80, 90, 80)
        edge = pad_bbox(BoundingBox(5, 240, 10, 10), 10)
        assert edge == BoundingBox(0, 220, 35, 36)

    def test_original_frame_rounds_outward(self):
        box = to_original_frame(BoundingBox(10, 20, 30, 40), 1000, 500)
        # 10*1000/256 = 39.06 -> 39 ; 40*1000/256 = 156.25 -> 157
        assert (box.x, box.x1) == (39, 157)
        # 20*500/256 = 39.06 -> 39 ; 60*500/256 = 117.19 -> 118
        assert (box.y, box.y1) == (39, 118)
        assert box.frame == "original"


def _centered_disc_original(size=512, diameter=64):
    c = (size - 1) / 2
    return disc_raster(size, c, c, diameter / 2, channels=3), c


class TestPreprocess:
    def test_empty_mask_falls_back(self):
        orig = Raster(np.random.default_rng(0).integers(0, 256, (300, 400, 3)).astype(np.uint8))
        views = preprocess_sample(orig, FixedMask(Mask.empty()))
        assert views.used_fallback
        # shorter side 300 -> square of round(300*256/272) = 282 px, resized to 256
        from glaucoscreen.imaging import center_crop, resize_bilinear

        expected = resize_bilinear(center_crop(orig, 282), 256, 256)
        assert views.cropped_view == expected
        assert fallback_crop(orig).width == 282

    def test_full_mask_falls_back(self):
        orig, _ = _centered_disc_original()
        views = preprocess_sample(orig, FixedMask(Mask(np.ones((256, 256), dtype=bool))))
        assert views.used_fallback

    def test_majority_boundary(self):
        orig, _ = _centered_disc_original()
        bits = np.zeros((256, 256), dtype=bool)
        bits.ravel()[: 256 * 128] = True  # exactly 50% -> not a majority
        assert not preprocess_sample(orig, FixedMask(Mask(bits))).used_fallback
        bits.ravel()[256 * 128] = True
        assert preprocess_sample(orig, FixedMask(Mask(bits))).used_fallback

    def test_degenerate_crop_falls_back(self):
        # on a 10x10 original even the 20 px padding maps to < 8 px
        orig = Raster.filled(10, 10, 100, channels=3)
        bits = np.zeros((256, 256), dtype=bool)
        bits[0, 0] = True
        views = preprocess_sample(orig, FixedMask(Mask(bits)))
        assert views.used_fallback

    def test_centered_disc_fully_contained_with_margin(self):
        orig, c = _centered_disc_original(512, 64)
        views = preprocess_sample(orig)
        assert not views.used_fallback
        box = views.crop_box
        r = 32
        # 20 px in the 256 frame is 40 px in a 512 original
        assert box.x <= c - r - 40 + 1 and box.x1 >= c + r + 40 - 1
        assert box.y <= c - r - 40 + 1 and box.y1 >= c + r + 40 - 1
        for v in (views.original_view, views.cropped_view, views.polar_view):
            assert (v.width, v.height) == (256, 256)

    def test_mask_pixels_inside_crop(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            w, h = rng.integers(100, 900, size=2)
            cx, cy, rad = rng.uniform(40, 216), rng.uniform(40, 216), rng.uniform(3, 30)
            bits = disc_membership(256, cx, cy, rad)
            orig = Raster.filled(int(w), int(h), 50, channels=3)
            views = preprocess_sample(orig, FixedMask(Mask(bits)))
            if views.used_fallback:
                continue
            box = views.crop_box
            ys, xs = np.nonzero(bits)
            # pixel footprint [x, x+1) of the 256 frame, mapped to the original
            assert np.all(xs * w / 256 >= box.x) and np.all((xs + 1) * w / 256 <= box.x1)
            assert np.all(ys * h / 256 >= box.y) and np.all((ys + 1) * h / 256 <= box.y1)

    @settings(max_examples=8, deadline=None)
    @given(st.integers(64, 4096), st.integers(64, 4096), st.integers(0, 2**16))
    def test_views_always_256(self, w, h, seed):
        rng = np.random.default_rng(seed)
        small = rng.integers(0, 256, size=(8, 8, 3)).astype(np.uint8)
        orig = Raster(np.kron(small, np.ones((h // 8 + 1, w // 8 + 1, 1), dtype=np.uint8))[:h, :w])
        views = preprocess_sample(orig)
        for v in (views.original_view, views.cropped_view, views.polar_view):
            assert (v.width, v.height, v.channels) == (256, 256, 3)

    def test_deterministic(self):
        orig, _ = _centered_disc_original(400, 50)
        a, b = preprocess_sample(orig), preprocess_sample(orig)
        assert a == b

    def test_segmenter_error_propagates(self):
        def broken(img):
            raise RuntimeError("model down")

        with pytest.raises(RuntimeError, match="model down"):
            preprocess_sample(Raster.filled(300, 300, 10, channels=3), broken)

    def test_wrong_mask_dims(self):
        with pytest.raises(ValueError):
            preprocess_sample(Raster.filled(300, 300, 10), FixedMask(Mask.empty(128, 128)))
