"""Page builders shared by the tests."""

import numpy as np

from fsdag.document import BBox
from fsdag.document import Document
from fsdag.document import LabelSet
from fsdag.document import TextRegion

LABELS = LabelSet(("other", "date", "total", "vendor"))


def make_page(
    boxes: list[tuple[float, float, float, float]],
    texts: list[str] | None = None,
    labels: list[int] | None = None,
    width: float = 64.0,
    height: float = 48.0,
    with_raster: bool = True,
    name: str = "page",
) -> Document:
    """A page with one region per box; rasters shade each box by its label."""
    texts = texts or [f"w{i}" for i in range(len(boxes))]
    labels = labels if labels is not None else [i % len(LABELS) for i in range(len(boxes))]
    regions = tuple(
        TextRegion(id=i, text=t, bbox=BBox(*b), label=lab) for i, (b, t, lab) in enumerate(zip(boxes, texts, labels))
    )
    raster = None
    if with_raster:
        raster = np.ones((int(height), int(width)))
        for region in regions:
            b = region.bbox
            raster[int(b.y0) : int(b.y1), int(b.x0) : int(b.x1)] = 0.2 + 0.1 * (region.label or 0)
    return Document(width=width, height=height, regions=regions, labels=LABELS, raster=raster, name=name)


def random_page(rng: np.random.Generator, count: int, name: str = "random") -> Document:
    """count non-degenerate boxes at random positions on a 64×48 page."""
    boxes = []
    for _ in range(count):
        x0 = float(rng.uniform(0, 48))
        y0 = float(rng.uniform(0, 38))
        boxes.append((x0, y0, x0 + float(rng.uniform(4, 15)), y0 + float(rng.uniform(3, 9))))
    words = ["total", "date", "acme", "12.50", "inv", "2024", "paid", "qty", "tax", "sum"]
    texts = [words[int(rng.integers(len(words)))] for _ in range(count)]
    labels = [int(rng.integers(len(LABELS))) for _ in range(count)]
    return make_page(boxes, texts, labels, name=name)


