"""Tests for geometric and graph augmentation."""

import numpy as np
import pytest
from skimage.transform import ProjectiveTransform

from fsdag.document import BBox
from fsdag.document import Document
from fsdag.training.augment import AugmentConfig
from fsdag.training.augment import apply_transform
from fsdag.training.augment import augment_geometric
from fsdag.training.augment import augment_graph
from fsdag.training.augment import map_box
from fsdag.training.augment import rotation_transform
from fsdag.training.augment import scale_transform

from tests.helpers import make_page


def zoom_page() -> Document:
    # one box in the corner, two around the center of the 64×48 page
    return make_page([(2, 2, 10, 8), (28, 20, 36, 28), (30, 22, 34, 26)], ["a", "b", "c"], [0, 1, 2])


class TestApplyTransform:
    """Warping a page and its boxes."""

    def test_identity_returns_page_unchanged(self, three_node_page: Document):
        sample = apply_transform(three_node_page, ProjectiveTransform(matrix=np.eye(3)))
        assert sample.document is three_node_page
        assert sample.kept == [0, 1, 2]

    def test_translation_moves_boxes(self):
        box = map_box(BBox(10, 10, 20, 15), scale_transform(1.0, 64, 48, tx=5.0), 64, 48)
        assert box.as_list() == [15.0, 10.0, 25.0, 15.0]

    def test_regions_pushed_off_the_page_are_dropped(self):
        """
        Given: a 2× zoom about the page center
        When: it is applied to a page with one corner box and two central boxes
        Then: the corner box is dropped and the survivors are renumbered 0 and 1
        """
        sample = apply_transform(zoom_page(), scale_transform(2.0, 64, 48), "scale_pad")

        assert sample.kept == [1, 2]
        assert [r.id for r in sample.document.by_id()] == [0, 1]
        assert [r.text for r in sample.document.by_id()] == ["b", "c"]
        assert sample.document.region(0).bbox.as_list() == [24.0, 16.0, 40.0, 32.0]

    def test_fewer_than_two_survivors_keeps_original(self):
        page = make_page([(2, 2, 10, 8), (50, 38, 60, 46), (28, 20, 36, 28)])
        sample = apply_transform(page, scale_transform(2.0, 64, 48), "scale_pad")
        assert sample.document is page
        assert sample.kind == "identity"

    def test_rotation_keeps_raster_in_range(self, three_node_page: Document):
        sample = apply_transform(three_node_page, rotation_transform(4.0, 64, 48), "rotation")
        raster = sample.document.raster
        assert raster.shape == three_node_page.raster.shape
        assert raster.min() >= 0.0 and raster.max() <= 1.0

    @pytest.mark.parametrize("degrees", [1.0, 3.0, 5.0])
    def test_rotation_there_and_back_restores_centers(self, degrees: float):
        """
        Given: boxes well inside the page
        When: the page is rotated by +degrees and the result by -degrees
        Then: every box center lands within 1 px of where it started
        """
        page = make_page([(20, 16, 30, 22), (34, 24, 44, 30), (24, 28, 36, 34)])

        there = apply_transform(page, rotation_transform(degrees, 64, 48), "rotation")
        back = apply_transform(there.document, rotation_transform(-degrees, 64, 48), "rotation")

        assert there.kept == [0, 1, 2] and back.kept == [0, 1, 2]
        for before, after in zip(page.by_id(), back.document.by_id()):
            assert abs(after.bbox.cx - before.bbox.cx) <= 1.0
            assert abs(after.bbox.cy - before.bbox.cy) <= 1.0

    def test_same_stream_same_sample(self, three_node_page: Document):
        a = augment_geometric(three_node_page, np.random.default_rng(1))
        b = augment_geometric(three_node_page, np.random.default_rng(1))
        assert a.kind == b.kind
        assert a.document == b.document


class TestAugmentGraph:
    """Node dropout and box jitter."""

    def boxes(self) -> list[BBox]:
        return [BBox(2, 2, 20, 10), BBox(30, 3, 50, 11), BBox(0, 40, 6, 48)]

    def test_disabled_is_identity(self):
        out = augment_graph(self.boxes(), 64, 48, np.random.default_rng(0), AugmentConfig(node_dropout=0.0, bbox_jitter=0.0))
        assert out.node_mask.tolist() == [1.0, 1.0, 1.0]
        assert out.boxes == self.boxes()

    def test_full_dropout(self):
        out = augment_graph(self.boxes(), 64, 48, np.random.default_rng(0), AugmentConfig(node_dropout=1.0))
        assert out.node_mask.tolist() == [0.0, 0.0, 0.0]

    def test_jittered_boxes_stay_on_page(self):
        out = augment_graph(self.boxes(), 64, 48, np.random.default_rng(3), AugmentConfig(bbox_jitter=5.0))
        for box in out.boxes:
            assert box.is_valid()
            assert 0.0 <= box.x0 and box.x1 <= 64.0
            assert 0.0 <= box.y0 and box.y1 <= 48.0

    def test_dropout_rate(self):
        """
        Given: node_dropout 0.1 and no jitter
        When: node masks for 3 x 13334 nodes are drawn from one stream
        Then: the dropped fraction is within 0.01 of 0.1
        """
        gen = np.random.default_rng(11)
        cfg = AugmentConfig(node_dropout=0.1, bbox_jitter=0.0)
        masks = np.concatenate([augment_graph(self.boxes(), 64, 48, gen, cfg).node_mask for _ in range(13_334)])
        assert abs((1.0 - masks.mean()) - 0.1) <= 0.01
