import numpy as np
import pytest

from mptpar.featmap import (FeatureMap, flatten_rois, init_backbone, init_flatten, roi_align, synth_backbone)
from mptpar.numerics import ParamStore, Tensor, finite_diff_check

from helpers import bilinear_oracle, np_gelu, randomize


def _backbone_store(rng, channels=5):
    store = ParamStore()
    init_backbone(store, channels, rng)
    return store


def _dense_backbone_oracle(frames, store):
    """Per-pixel loops over each output cell; independent of the reshape path."""
    w1, b1 = store["backbone.s1.w"].data, store["backbone.s1.b"].data
    w2, b2 = store["backbone.s2.w"].data, store["backbone.s2.b"].data
    t_, _, h, w = frames.shape
    c = b1.size
    s1 = np.zeros((t_, h // 4, w // 4, c))
    for t in range(t_):
        for i in range(h // 4):
            for j in range(w // 4):
                patch = [frames[t, ch, 4 * i + di, 4 * j + dj] for di in range(4) for dj in range(4) for ch in range(3)]
                s1[t, i, j] = np_gelu(np.array(patch) @ w1 + b1)
    out = np.zeros((t_, c, h // 8, w // 8))
    for t in range(t_):
        for i in range(h // 8):
            for j in range(w // 8):
                patch = np.concatenate([s1[t, 2 * i + di, 2 * j + dj] for di in range(2) for dj in range(2)])
                out[t, :, i, j] = np_gelu(patch @ w2 + b2)
    return out


class TestBackbone:
    def test_zero_frames_zero_features(self, rng):
        store = _backbone_store(rng)
        fm = synth_backbone(np.zeros((2, 3, 16, 16)), store)
        assert fm.shape == (2, 5, 2, 2) and fm.stride == 8
        assert np.all(fm.data.data == 0)

    def test_identical_frames(self, rng):
        store = _backbone_store(rng)
        frame = rng.normal(size=(3, 16, 24))
        fm = synth_backbone(np.stack([frame, frame]), store).data.data
        np.testing.assert_array_equal(fm[0], fm[1])

    def test_dense_oracle(self, rng):
        store = _backbone_store(rng)
        randomize(store, rng, scale=0.2)
        frames = rng.normal(size=(2, 3, 16, 24))
        np.testing.assert_allclose(synth_backbone(frames, store).data.data,
                                   _dense_backbone_oracle(frames, store), rtol=0, atol=1e-10)

    def test_indivisible(self, rng):
        with pytest.raises(ValueError):
            synth_backbone(np.zeros((1, 3, 12, 16)), _backbone_store(rng))


def _fm(arr, stride=1.0):
    return FeatureMap(Tensor(np.asarray(arr, dtype=float)), stride)


class TestRoiAlign:
    def test_cell_aligned(self, rng):
        arr = rng.normal(size=(1, 2, 4, 5))
        out = roi_align(_fm(arr, 8.0), [[[16, 8, 24, 16]]], 1, 1).data
        np.testing.assert_array_equal(out[0, 0, :, 0, 0], arr[0, :, 1, 2])

    def test_constant_map(self, rng):
        arr = np.full((2, 3, 6, 6), 1.75)
        boxes = np.array([[[3.3, 1.2, 40.0, 30.1], [0.0, 0.0, 48.0, 48.0]]] * 2)
        out = roi_align(_fm(arr, 8.0), boxes, 3, 2).data
        np.testing.assert_allclose(out, 1.75, atol=1e-15)

    def testbilinear_oracle(self, rng):
        arr = rng.normal(size=(1, 1, 4, 4))
        out = roi_align(_fm(arr), [[[0.5, 0.5, 2.5, 2.5]]], 2, 2).data[0, 0, 0]
        # bin centres at 1.0 and 2.0, minus the half-pixel offset
        expect = np.array([[bilinear_oracle(arr[0, 0], y, x) for x in (0.5, 1.5)] for y in (0.5, 1.5)])
        np.testing.assert_allclose(out, expect, rtol=0, atol=1e-12)

    def test_random_boxes_oracle(self, rng):
        arr = rng.normal(size=(2, 3, 5, 6))
        boxes = np.array([[[1.0, 2.0, 30.0, 20.0]], [[4.0, 0.5, 12.0, 39.0]]])
        out = roi_align(_fm(arr, 8.0), boxes, 3, 3).data
        for t in range(2):
            x1, y1, x2, y2 = boxes[t, 0] / 8
            for i in range(3):
                for j in range(3):
                    y = y1 + (i + 0.5) * (y2 - y1) / 3 - 0.5
                    x = x1 + (j + 0.5) * (x2 - x1) / 3 - 0.5
                    for c in range(3):
                        assert out[t, 0, c, i, j] == pytest.approx(bilinear_oracle(arr[t, c], y, x), abs=1e-12)

    def test_translation_on_ramp(self):
        yy, xx = np.mgrid[0:8, 0:8]
        ramp = (0.3 * xx + 1.1 * yy)[None, None].astype(float)
        base = roi_align(_fm(ramp), [[[2.2, 1.4, 4.0, 3.9]]], 3, 3).data
        shifted = roi_align(_fm(ramp), [[[3.2, 1.4, 5.0, 3.9]]], 3, 3).data
        down = roi_align(_fm(ramp), [[[2.2, 2.4, 4.0, 4.9]]], 3, 3).data
        np.testing.assert_allclose(shifted - base, 0.3, atol=1e-12)
        np.testing.assert_allclose(down - base, 1.1, atol=1e-12)

    def test_degenerate_box(self):
        with pytest.raises(ValueError):
            roi_align(_fm(np.zeros((1, 1, 4, 4))), [[[2.0, 1.0, 2.0, 3.0]]], 2, 2)

    def test_gradient(self, rng):
        store = ParamStore()
        store.add("fm", rng.normal(size=(2, 2, 4, 5)))
        boxes = np.array([[[1.0, 2.0, 30.0, 20.0], [5.0, 5.0, 9.0, 13.0]], [[4.0, 0.5, 12.0, 31.0], [0, 0, 40, 32]]])
        w = Tensor(rng.normal(size=(2, 2, 2, 3, 3)))
        f = lambda s: (roi_align(FeatureMap(s["fm"], 8.0), boxes, 3, 3) * w).sum()  # noqa: E731
        assert finite_diff_check(f, store).max_error <= 1e-4


class TestFlatten:
    def test_zero_rois(self, rng):
        store = ParamStore()
        init_flatten(store, 2, 3, 3, 8, rng)
        out = flatten_rois(Tensor(np.zeros((2, 4, 2, 3, 3))), store)
        assert out.shape == (2, 4, 8) and np.all(out.data == 0)

    def test_single_individual_shape(self, rng):
        store = ParamStore()
        init_flatten(store, 2, 3, 3, 8, rng)
        assert flatten_rois(Tensor(rng.normal(size=(3, 1, 2, 3, 3))), store).shape == (3, 1, 8)

    def test_matmul_oracle(self, rng):
        store = ParamStore()
        init_flatten(store, 2, 2, 2, 6, rng)
        randomize(store, rng)
        rois = rng.normal(size=(2, 3, 2, 2, 2))
        w, b = store["roi_proj.w"].data, store["roi_proj.b"].data
        expect = np.array([[rois[t, n].reshape(-1) @ w + b for n in range(3)] for t in range(2)])
        np.testing.assert_allclose(flatten_rois(Tensor(rois), store).data, expect, atol=1e-12)
