"""Tests for the conv stack and RoI align."""

import numpy as np
import pytest

from fsdag.core import ops
from fsdag.core.gradcheck import grad_check
from fsdag.core.tensor import Tensor
from fsdag.document import BBox
from fsdag.encoders.visual import RasterSizeError
from fsdag.encoders.visual import conv_feature_map
from fsdag.encoders.visual import roi_align
from fsdag.encoders.visual import roi_align_many


def conv_layers(seed: int, channels=(8, 16, 16), zero_bias: bool = False):
    rng = np.random.default_rng(seed)
    layers, c_in = [], 1
    for c_out in channels:
        weight = Tensor(rng.normal(size=(c_out, c_in, 3, 3)) * 0.4, requires_grad=True)
        bias = Tensor(np.zeros(c_out) if zero_bias else rng.normal(size=c_out) * 0.1, requires_grad=True)
        layers.append((weight, bias))
        c_in = c_out
    return layers


class TestConvFeatureMap:
    """Three stride-2 conv layers."""

    def test_zero_raster_zero_bias_gives_zero_map(self):
        fmap = conv_feature_map(np.zeros((16, 16)), conv_layers(0, zero_bias=True))
        assert np.all(fmap.data == 0.0)

    @pytest.mark.parametrize("height,width", [(8, 8), (20, 13), (48, 64), (33, 9)])
    def test_output_is_one_eighth(self, height: int, width: int):
        fmap = conv_feature_map(np.ones((height, width)), conv_layers(1))
        assert fmap.shape == (16, int(np.ceil(height / 8)), int(np.ceil(width / 8)))

    def test_too_small(self):
        with pytest.raises(RasterSizeError):
            conv_feature_map(np.ones((7, 20)), conv_layers(0))

    def test_gradients_match_finite_differences(self):
        raster = np.random.default_rng(2).uniform(size=(8, 8))
        layers = conv_layers(3, channels=(2, 3, 3))
        params = [t for layer in layers for t in layer]

        def fn():
            fmap = conv_feature_map(raster, layers)
            return ops.sum(ops.mul(fmap, fmap))

        assert grad_check(fn, params, atol=1e-10) < 1e-4


class TestRoiAlign:
    """Bilinear RoI pooling."""

    def test_constant_map(self):
        fmap = Tensor(np.full((4, 5, 6), 2.5))
        out = roi_align(fmap, BBox(3, 7, 21, 15), 48, 40)
        np.testing.assert_allclose(out.data, [2.5] * 4, atol=1e-12)

    def test_whole_page_on_linear_ramp(self):
        """
        Given: a 4×4 map whose value is 2·col + row
        When: a box covering the whole page is pooled on a 3×3 grid
        Then: samples sit at 1/6, 3/2 and 17/6 on each axis, so the mean is 2·1.5 + 1.5
        """
        rows, cols = np.meshgrid(np.arange(4.0), np.arange(4.0), indexing="ij")
        fmap = Tensor((2 * cols + rows)[None])

        out = roi_align(fmap, BBox(0, 0, 40, 40), 40, 40)

        np.testing.assert_allclose(out.data, [4.5], atol=1e-12)

    def test_batch_matches_single(self):
        fmap = Tensor(np.random.default_rng(0).normal(size=(3, 6, 8)))
        boxes = [BBox(0, 0, 10, 5), BBox(30, 20, 60, 40), BBox(12, 3, 13, 44)]
        batch = roi_align_many(fmap, boxes, 64, 48).data
        for row, box in zip(batch, boxes):
            np.testing.assert_allclose(row, roi_align(fmap, box, 64, 48).data, atol=1e-14)

    def test_thin_box_uses_nearest_pixel(self):
        """
        Given: a map valued 4·row + col and a box far thinner than one map cell in x
        When: it is pooled
        Then: x snaps to column 1 while y keeps its bilinear mean of 1.5
        """
        values = np.arange(16.0).reshape(1, 4, 4)

        out = roi_align(Tensor(values), BBox(10.0, 10.0, 10.00001, 30.0), 40, 40)

        np.testing.assert_allclose(out.data, [4 * 1.5 + 1], atol=1e-12)

    def test_content_far_from_box_is_ignored(self):
        rng = np.random.default_rng(4)
        base = rng.normal(size=(2, 8, 8))
        box = BBox(0, 0, 16, 16)
        changed = base.copy()
        changed[:, 4:, 4:] = rng.normal(size=(2, 4, 4))

        a = roi_align(Tensor(base), box, 64, 64).data
        b = roi_align(Tensor(changed), box, 64, 64).data

        assert np.array_equal(a, b)

    def test_gradients_reach_the_map(self):
        fmap = Tensor(np.random.default_rng(5).normal(size=(2, 5, 5)), requires_grad=True)
        weights = Tensor(np.array([0.7, -1.3]))

        def fn():
            pooled = roi_align_many(fmap, [BBox(3, 4, 30, 20), BBox(20, 25, 40, 39)], 40, 40)
            return ops.sum(ops.mul(ops.mul(pooled, pooled), weights))

        assert grad_check(fn, [fmap], atol=1e-10) < 1e-4
