import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from glaucoscreen.ensemble import VIEWS, EnsembleConfig, decide, fuse

prob = st.floats(0.0, 1.0).map(lambda p: (1.0 - p, p))
weight = st.floats(0.0, 10.0)


def as_preds(*ps):
    return dict(zip(VIEWS, ps))


class TestFuse:
    def test_worked_example(self):
        p = fuse(as_preds((0.8, 0.2), (0.4, 0.6), (0.5, 0.5)), EnsembleConfig())
        np.testing.assert_allclose(p, [(1.6 + 0.2 + 0.25) / 3, (0.4 + 0.3 + 0.25) / 3], atol=1e-12)
        np.testing.assert_allclose(p, [0.6833333333, 0.3166666667], atol=1e-9)

    def test_identical_views(self):
        np.testing.assert_allclose(fuse(as_preds((0.3, 0.7), (0.3, 0.7), (0.3, 0.7))), [0.3, 0.7])

    def test_single_view_passthrough(self):
        np.testing.assert_allclose(fuse({"polar": (0.12, 0.88)}), [0.12, 0.88])

    def test_missing_view_renormalizes(self):
        p = fuse({"cropped": (0.2, 0.8), "polar": (0.6, 0.4)})
        np.testing.assert_allclose(p, [0.4, 0.6])

    def test_errors(self):
        with pytest.raises(ValueError, match="no views"):
            fuse({})
        with pytest.raises(ValueError, match="no ensemble weight"):
            fuse({"fundus": (0.5, 0.5)})
        with pytest.raises(ValueError, match="zero"):
            fuse({"polar": (0.5, 0.5)}, EnsembleConfig({"original": 1.0, "polar": 0.0}))

    @given(prob, prob, prob, weight, weight, weight, st.floats(1e-3, 1e3))
    def test_scale_invariance_and_bounds(self, a, b, c, w0, w1, w2, scale):
        if w0 + w1 + w2 == 0:
            w0 = 1.0
        preds = as_preds(a, b, c)
        cfg = EnsembleConfig(dict(zip(VIEWS, (w0, w1, w2))))
        scaled = EnsembleConfig(dict(zip(VIEWS, (scale * w0, scale * w1, scale * w2))))
        p = fuse(preds, cfg)
        np.testing.assert_allclose(fuse(preds, scaled), p, atol=1e-12)
        assert abs(p.sum() - 1.0) < 1e-9
        stack = np.array([a, b, c])
        assert np.all(stack.min(0) - 1e-12 <= p) and np.all(p <= stack.max(0) + 1e-12)


class TestDecide:
    def test_examples(self):
        assert decide((0.68333, 0.31667)) == 0
        assert decide((0.5, 0.5)) == 1
        assert decide((0.1, 0.9)) == 1

    def test_near_tie_goes_positive(self):
        assert decide((0.5 + 1e-13, 0.5 - 1e-13)) == 1
        assert decide((0.5 + 1e-9, 0.5 - 1e-9)) == 0

    @given(prob, prob, prob)
    def test_class_swap_equivariance(self, a, b, c):
        p = fuse(as_preds(a, b, c))
        q = fuse(as_preds(a[::-1], b[::-1], c[::-1]))
        np.testing.assert_allclose(q, p[::-1], atol=1e-12)
        if abs(p[0] - p[1]) > 1e-9:
            assert decide(q) == 1 - decide(p)


class TestConfig:
    def test_defaults(self):
        assert EnsembleConfig().weights == {"original": 2.0, "cropped": 0.5, "polar": 0.5}

    def test_load(self, tmp_path):
        (tmp_path / "w.txt").write_text("# weights\nweight.original = 1\nweight.polar = 3\nseed = 4\n")
        assert EnsembleConfig.load(tmp_path / "w.txt").weights == {"original": 1.0, "polar": 3.0}

    def test_dumps_round_trip(self, tmp_path):
        cfg = EnsembleConfig({"original": 0.25, "cropped": 1.5})
        (tmp_path / "w.txt").write_text(cfg.dumps())
        assert EnsembleConfig.load(tmp_path / "w.txt") == cfg

    @pytest.mark.parametrize("weights", [{"original": -1.0}, {"original": 0.0, "polar": 0.0}, {"polar": float("nan")}])
    def test_invalid(self, weights):
        with pytest.raises(ValueError):
            EnsembleConfig(weights)
