"""Visual features: a small trainable conv stack and RoI align over word boxes."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from fsdag.core import ops
from fsdag.core.tensor import Tensor
from fsdag.document import BBox

MIN_RASTER_SIDE = 8
# boxes thinner than this (in map cells) sample the nearest pixel on that axis
MIN_SAMPLE_EXTENT = 1e-3


class RasterSizeError(ValueError):
    """Raised when a raster is too small for the conv stack."""


@dataclass
class VisualEncoderConfig:
    """Conv stack and RoI settings.

    Attributes:
        channels: Output channels of each stride-2 3×3 conv layer
        roi_grid: Samples per side of the RoI grid
    """

    channels: tuple[int, ...] = (8, 16, 16)
    kernel: int = 3
    stride: int = 2
    padding: int = 1
    roi_grid: int = 3

    @property
    def d_visual(self) -> int:
        return self.channels[-1]

    def validate(self) -> None:
        if not self.channels or min(self.channels) < 1:
            raise ValueError(f"visual.channels must be positive, got {self.channels}")
        if self.roi_grid < 1:
            raise ValueError(f"visual.roi_grid must be at least 1, got {self.roi_grid}")


def conv_feature_map(
    raster: np.ndarray,
    layers: Sequence[tuple[Tensor, Tensor]],
    stride: int = 2,
    padding: int = 1,
) -> Tensor:
    """Run the conv stack (conv + ReLU per layer) over an H×W raster.

    Args:
        raster: Grayscale page in [0, 1]
        layers: (weight C_out×C_in×k×k, bias C_out) per layer

    Returns:
        C×ceil(H/8)×ceil(W/8) feature map for the default three layers

    Raises:
        RasterSizeError: either side is shorter than 8 pixels
    """
    height, width = raster.shape
    if height < MIN_RASTER_SIDE or width < MIN_RASTER_SIDE:
        raise RasterSizeError(f"raster {height}×{width} is smaller than {MIN_RASTER_SIDE}×{MIN_RASTER_SIDE}")
    fmap = Tensor(raster[None, :, :])
    for weight, bias in layers:
        fmap = ops.relu(ops.conv2d(fmap, weight, bias, stride=stride, padding=padding))
    return fmap


def _sample_axis(start: float, stop: float, grid: int) -> np.ndarray:
    extent = stop - start
    if extent < MIN_SAMPLE_EXTENT:
        return np.full(grid, float(np.round(0.5 * (start + stop) - 0.5)))
    return start + (np.arange(grid) + 0.5) * (extent / grid) - 0.5


def roi_sample_points(bbox: BBox, fmap_shape: tuple[int, int], width: float, height: float, grid: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Row and column coordinates of the grid×grid RoI samples in map index space.

    The box is scaled to map coordinates, split into grid×grid cells and
    each cell center is shifted by half a pixel so that integer coordinates
    address pixel centers.
    """
    map_h, map_w = fmap_shape
    sy, sx = map_h / height, map_w / width
    ys = _sample_axis(bbox.y0 * sy, bbox.y1 * sy, grid)
    xs = _sample_axis(bbox.x0 * sx, bbox.x1 * sx, grid)
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return grid_y.reshape(-1), grid_x.reshape(-1)


def roi_align(fmap: Tensor, bbox: BBox, width: float, height: float, grid: int = 3) -> Tensor:
    """D_v vector for one box: the channel-wise mean of grid×grid bilinear samples."""
    pooled = roi_align_many(fmap, [bbox], width, height, grid)
    return ops.reshape(pooled, (pooled.shape[1],))


def roi_align_many(fmap: Tensor, boxes: Sequence[BBox], width: float, height: float, grid: int = 3) -> Tensor:
    """roi_align for several boxes at once; returns len(boxes)×C."""
    samples = grid * grid
    points = [roi_sample_points(b, fmap.shape[1:], width, height, grid) for b in boxes]
    ys = np.concatenate([p[0] for p in points])
    xs = np.concatenate([p[1] for p in points])
    gathered = ops.bilinear_gather(fmap, ys, xs)
    return ops.mean(ops.reshape(gathered, (len(boxes), samples, fmap.shape[0])), axis=1)
