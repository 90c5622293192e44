"""Geometric and graph augmentation of training pages.

Geometric augmentation warps the raster with one randomly chosen transform
(rotation, perspective, affine, scale-and-pad) and maps every box through
the same transform. Graph augmentation drops node features and jitters boxes
before the spatial relations are computed.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np
from skimage.transform import ProjectiveTransform
from skimage.transform import estimate_transform
from skimage.transform import warp

from fsdag.document import BBox
from fsdag.document import Document
from fsdag.document import TextRegion

logger = logging.getLogger(__name__)

TRANSFORM_KINDS = ("rotation", "perspective", "affine", "scale_pad")
MIN_KEPT_AREA = 0.25
PAD_VALUE = 1.0


@dataclass
class AugmentConfig:
    """Augmentation strengths.

    Attributes:
        rotation_deg: Rotations are uniform in [-rotation_deg, rotation_deg]
        perspective: Corner offsets are uniform in +/- this fraction of the extent
        translate: Affine translation, fraction of the extent
        scale_min, scale_max: Scale range for affine and scale-and-pad
        geometric_prob: Chance that a training sample is warped
        node_dropout: Chance that a node's fused features are zeroed
        bbox_jitter: Standard deviation of box coordinate noise, pixels
    """

    rotation_deg: float = 5.0
    perspective: float = 0.05
    translate: float = 0.05
    scale_min: float = 0.9
    scale_max: float = 1.1
    geometric_prob: float = 0.5
    node_dropout: float = 0.1
    bbox_jitter: float = 2.0

    def validate(self) -> None:
        for name in ("geometric_prob", "node_dropout"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"train.augment.{name} must be in [0, 1], got {value}")
        for name in ("rotation_deg", "perspective", "translate", "bbox_jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"train.augment.{name} must be non-negative, got {getattr(self, name)}")
        if not 0 < self.scale_min <= self.scale_max:
            raise ValueError(f"train.augment scale range [{self.scale_min}, {self.scale_max}] is invalid")


@dataclass
class AugmentedSample:
    """A warped page; regions keep their text and label.

    Attributes:
        document: Transformed raster and boxes; surviving regions renumbered
            0..L'-1 in original id order
        kept: Original id of each surviving region, indexed by new id
        kind: Transform that produced the sample
    """

    document: Document
    kept: list[int]
    kind: str


@dataclass
class GraphPerturbation:
    """Node feature mask and jittered boxes, both indexed by region id."""

    node_mask: np.ndarray
    boxes: list[BBox]


def _about_center(linear: np.ndarray, cx: float, cy: float) -> np.ndarray:
    to_origin = np.array([[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]])
    back = np.array([[1.0, 0.0, cx], [0.0, 1.0, cy], [0.0, 0.0, 1.0]])
    return back @ linear @ to_origin


def rotation_transform(degrees: float, width: float, height: float) -> ProjectiveTransform:
    """Rotation about the page center; positive angles turn clockwise on screen."""
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    linear = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return ProjectiveTransform(matrix=_about_center(linear, width / 2, height / 2))


def scale_transform(scale: float, width: float, height: float, tx: float = 0.0, ty: float = 0.0) -> ProjectiveTransform:
    """Scale about the page center followed by a translation in pixels."""
    linear = np.array([[scale, 0.0, 0.0], [0.0, scale, 0.0], [0.0, 0.0, 1.0]])
    matrix = _about_center(linear, width / 2, height / 2)
    matrix[0, 2] += tx
    matrix[1, 2] += ty
    return ProjectiveTransform(matrix=matrix)


def perspective_transform(offsets: np.ndarray, width: float, height: float) -> ProjectiveTransform:
    """Homography moving the four page corners by offsets (4×2 pixels)."""
    src = np.array([[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]])
    return estimate_transform("projective", src, src + offsets)


def sample_transform(doc: Document, gen: np.random.Generator, cfg: AugmentConfig) -> tuple[str, ProjectiveTransform]:
    """Draw one transform kind uniformly, then its parameters."""
    kind = TRANSFORM_KINDS[gen.integers(len(TRANSFORM_KINDS))]
    width, height = doc.width, doc.height
    if kind == "rotation":
        return kind, rotation_transform(gen.uniform(-cfg.rotation_deg, cfg.rotation_deg), width, height)
    if kind == "perspective":
        extent = np.array([width, height])
        offsets = gen.uniform(-cfg.perspective, cfg.perspective, size=(4, 2)) * extent
        return kind, perspective_transform(offsets, width, height)
    if kind == "affine":
        scale = gen.uniform(cfg.scale_min, cfg.scale_max)
        tx, ty = gen.uniform(-cfg.translate, cfg.translate, size=2) * np.array([width, height])
        return kind, scale_transform(scale, width, height, tx, ty)
    return kind, scale_transform(gen.uniform(cfg.scale_min, cfg.scale_max), width, height)


def map_box(box: BBox, transform: ProjectiveTransform, width: float, height: float) -> BBox:
    """Axis-aligned hull of the transformed corners, clipped to the page."""
    corners = transform(box.corners())
    x0, y0 = corners.min(axis=0)
    x1, y1 = corners.max(axis=0)
    return BBox(float(x0), float(y0), float(x1), float(y1)).clip(width, height)


def apply_transform(doc: Document, transform: ProjectiveTransform, kind: str = "custom") -> AugmentedSample:
    """Warp the raster bilinearly and carry every box through the transform.

    Regions whose clipped box keeps less than a quarter of the original area
    are dropped. If fewer than two regions would survive, the page is
    returned unchanged.
    """
    if np.array_equal(transform.params, np.eye(3)):
        return AugmentedSample(document=doc, kept=[r.id for r in doc.by_id()], kind=kind)

    kept: list[int] = []
    regions: list[TextRegion] = []
    for region in doc.by_id():
        box = map_box(region.bbox, transform, doc.width, doc.height)
        if not box.is_valid() or box.area < MIN_KEPT_AREA * region.bbox.area:
            continue
        regions.append(dataclasses.replace(region, id=len(regions), bbox=box))
        kept.append(region.id)

    if len(regions) < 2:
        logger.warning(f"{kind} augmentation would leave {len(regions)} region(s) of {doc.name or 'page'}; skipped")
        return AugmentedSample(document=doc, kept=[r.id for r in doc.by_id()], kind="identity")
    if len(regions) < len(doc):
        logger.debug(f"{kind} augmentation dropped {len(doc) - len(regions)} region(s) of {doc.name or 'page'}")

    raster = None
    if doc.raster is not None:
        raster = warp(
            doc.raster,
            inverse_map=transform.inverse,
            order=1,
            mode="constant",
            cval=PAD_VALUE,
            preserve_range=True,
        )
        raster = np.clip(raster, 0.0, 1.0)
    warped = dataclasses.replace(doc, regions=tuple(regions), raster=raster)
    return AugmentedSample(document=warped, kept=kept, kind=kind)


def augment_geometric(doc: Document, gen: np.random.Generator, cfg: AugmentConfig | None = None) -> AugmentedSample:
    """Apply one randomly drawn geometric transform to a page with a raster."""
    cfg = cfg or AugmentConfig()
    kind, transform = sample_transform(doc, gen, cfg)
    return apply_transform(doc, transform, kind)


def augment_graph(
    boxes: list[BBox],
    width: float,
    height: float,
    gen: np.random.Generator,
    cfg: AugmentConfig | None = None,
) -> GraphPerturbation:
    """Node-feature dropout mask plus Gaussian box jitter.

    A jittered box is clipped to the page; if clipping collapses it, the
    original box is kept.
    """
    cfg = cfg or AugmentConfig()
    node_mask = (gen.random(len(boxes)) >= cfg.node_dropout).astype(np.float64)
    noise = gen.normal(0.0, cfg.bbox_jitter, size=(len(boxes), 4)) if cfg.bbox_jitter > 0 else np.zeros((len(boxes), 4))

    jittered: list[BBox] = []
    for box, delta in zip(boxes, noise):
        moved = BBox(*(float(c + d) for c, d in zip(box.as_list(), delta))).clip(width, height)
        jittered.append(moved if moved.is_valid() else box)
    return GraphPerturbation(node_mask=node_mask, boxes=jittered)
