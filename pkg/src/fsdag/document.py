"""Document model for OCR'd pages: regions, labels, IO, reading order, grid bins."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

logger = logging.getLogger(__name__)

LINE_OVERLAP_RATIO = 0.5
# corpus directory files that are not documents
CORPUS_METADATA = ("manifest.json", "split.json")


class DocumentParseError(ValueError):
    """Raised when a document file is malformed.

    Attributes:
        where: Line number or field path that failed to parse
    """

    def __init__(self, message: str, where: str | None = None) -> None:
        super().__init__(f"{message} (at {where})" if where else message)
        self.where = where


class DocumentValidationError(ValueError):
    """Raised when a document breaks an invariant; names the offending region."""


class DomainError(ValueError):
    """Raised when a coordinate lies outside the document extent."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in pixel coordinates."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def cx(self) -> float:
        return 0.5 * (self.x0 + self.x1)

    @property
    def cy(self) -> float:
        return 0.5 * (self.y0 + self.y1)

    @property
    def area(self) -> float:
        return self.width * self.height

    def is_valid(self) -> bool:
        return 0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1

    def corners(self) -> np.ndarray:
        """The four corners as a 4×2 array of (x, y)."""
        return np.array(
            [[self.x0, self.y0], [self.x1, self.y0], [self.x1, self.y1], [self.x0, self.y1]],
            dtype=np.float64,
        )

    def clip(self, width: float, height: float) -> BBox:
        return BBox(
            min(max(self.x0, 0.0), width),
            min(max(self.y0, 0.0), height),
            min(max(self.x1, 0.0), width),
            min(max(self.y1, 0.0), height),
        )

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass(frozen=True)
class TextRegion:
    """One OCR word with its box and optional gold class index."""

    id: int
    text: str
    bbox: BBox
    label: int | None = None


@dataclass(frozen=True)
class LabelSet:
    """Ordered class names; index 0 is the background class."""

    names: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.names) < 2:
            raise DocumentValidationError(f"label set needs at least 2 classes, got {list(self.names)}")
        if len(set(self.names)) != len(self.names):
            raise DocumentValidationError(f"label names must be unique: {list(self.names)}")

    def __len__(self) -> int:
        return len(self.names)


@dataclass(frozen=True, eq=False)
class Document:
    """A single page: extent, optional grayscale raster in [0,1] and its regions.

    Construction validates every invariant. Documents are immutable; derive
    variants with ``dataclasses.replace``.
    """

    width: float
    height: float
    regions: tuple[TextRegion, ...]
    labels: LabelSet | None = None
    raster: np.ndarray | None = field(default=None, repr=False)
    name: str = ""

    def __post_init__(self) -> None:
        validate_document(self)

    def __len__(self) -> int:
        return len(self.regions)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Document):
            return NotImplemented
        if self.raster is None or other.raster is None:
            same_raster = self.raster is None and other.raster is None
        else:
            same_raster = np.array_equal(self.raster, other.raster)
        return (
            self.width == other.width
            and self.height == other.height
            and sorted(self.regions, key=lambda r: r.id) == sorted(other.regions, key=lambda r: r.id)
            and self.labels == other.labels
            and same_raster
        )

    __hash__ = None  # type: ignore[assignment]

    def region(self, region_id: int) -> TextRegion:
        """Region by id regardless of storage order."""
        for region in self.regions:
            if region.id == region_id:
                return region
        raise KeyError(region_id)

    def by_id(self) -> list[TextRegion]:
        """Regions sorted by id."""
        return sorted(self.regions, key=lambda r: r.id)

    def is_labeled(self) -> bool:
        return bool(self.regions) and all(r.label is not None for r in self.regions)


def validate_document(doc: Document) -> None:
    """Check every Document invariant.

    Raises:
        DocumentValidationError: naming the first offending region
    """
    if doc.width <= 0 or doc.height <= 0:
        raise DocumentValidationError(f"document extent must be positive, got {doc.width}×{doc.height}")

    ids = sorted(r.id for r in doc.regions)
    if ids != list(range(len(doc.regions))):
        raise DocumentValidationError(f"region ids must be 0..{len(doc.regions) - 1}, got {ids}")

    for region in doc.regions:
        box = region.bbox
        if not region.text.strip():
            raise DocumentValidationError(f"region {region.id}: text is empty")
        if not box.is_valid():
            raise DocumentValidationError(f"region {region.id}: invalid bbox {box.as_list()}")
        if box.x1 > doc.width or box.y1 > doc.height:
            raise DocumentValidationError(
                f"region {region.id}: bbox {box.as_list()} exceeds page {doc.width}×{doc.height}"
            )
        if region.label is not None:
            n_classes = len(doc.labels) if doc.labels is not None else None
            if region.label < 0 or (n_classes is not None and region.label >= n_classes):
                raise DocumentValidationError(f"region {region.id}: label {region.label} out of range")

    if doc.raster is not None:
        expected = (int(round(doc.height)), int(round(doc.width)))
        if doc.raster.shape != expected:
            raise DocumentValidationError(f"raster shape {doc.raster.shape} does not match page {expected}")


# --- IO ---


def _require(data: dict[str, Any], key: str, where: str) -> Any:
    if key not in data:
        raise DocumentParseError(f"missing required field '{key}'", where)
    return data[key]


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise DocumentParseError(f"expected a number, got {value!r}", where)
    return float(value)


def _integer(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise DocumentParseError(f"expected an integer, got {value!r}", where)
    return int(value)


def _parse_region(data: Any, index: int) -> TextRegion:
    where = f"regions[{index}]"
    if not isinstance(data, dict):
        raise DocumentParseError("region must be an object", where)
    bbox = _require(data, "bbox", where)
    if not isinstance(bbox, list) or len(bbox) != 4:
        raise DocumentParseError("bbox must be [x0, y0, x1, y1]", f"{where}.bbox")
    try:
        box = BBox(*(_number(v, f"{where}.bbox") for v in bbox))
        label = data.get("label")
        return TextRegion(
            id=_integer(_require(data, "id", where), f"{where}.id"),
            text=str(_require(data, "text", where)),
            bbox=box,
            label=None if label is None else _integer(label, f"{where}.label"),
        )
    except (TypeError, ValueError) as e:
        if isinstance(e, DocumentParseError):
            raise
        raise DocumentParseError(f"bad value: {e}", where) from e


def read_pgm(path: Path) -> np.ndarray:
    """Read an 8-bit grayscale PGM and rescale it to [0,1]."""
    with Image.open(path) as image:
        if image.mode != "L":
            raise DocumentParseError(f"raster must be 8-bit grayscale, got mode {image.mode}", str(path))
        return np.asarray(image, dtype=np.float64) / 255.0


def write_pgm(raster: np.ndarray, path: Path) -> None:
    """Write a [0,1] raster as binary 8-bit PGM (P5)."""
    levels = np.clip(np.round(raster * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(levels).save(path, format="PPM")


def parse_document(data: Any, base_dir: Path | None = None, name: str = "") -> Document:
    """Build a Document from its decoded JSON form."""
    if not isinstance(data, dict):
        raise DocumentParseError("document must be a JSON object")
    width = _number(_require(data, "width", "width"), "width")
    height = _number(_require(data, "height", "height"), "height")
    regions_data = _require(data, "regions", "regions")
    if not isinstance(regions_data, list):
        raise DocumentParseError("regions must be a list", "regions")
    regions = tuple(_parse_region(r, i) for i, r in enumerate(regions_data))

    labels = LabelSet(tuple(data["labels"])) if data.get("labels") else None

    raster = None
    if data.get("raster"):
        raster_path = (base_dir or Path.cwd()) / data["raster"]
        if not raster_path.exists():
            raise DocumentParseError(f"raster file not found: {raster_path}", "raster")
        raster = read_pgm(raster_path)

    return Document(
        width=width,
        height=height,
        regions=regions,
        labels=labels,
        raster=raster,
        name=name,
    )


def load_document(path: Path | str) -> Document:
    """Load and validate a document JSON file (and its PGM raster, if referenced).

    Raises:
        DocumentParseError: malformed JSON or missing fields (with line/field)
        DocumentValidationError: an invariant fails (names the region)
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except UnicodeDecodeError as e:
        raise DocumentParseError(f"{path} is not UTF-8 text", f"byte {e.start}") from e
    except json.JSONDecodeError as e:
        raise DocumentParseError(f"invalid JSON in {path}: {e.msg}", f"line {e.lineno}") from e
    return parse_document(data, base_dir=path.parent, name=path.stem)


def document_to_dict(doc: Document, raster_name: str | None = None) -> dict[str, Any]:
    data: dict[str, Any] = {"width": doc.width, "height": doc.height}
    if raster_name is not None:
        data["raster"] = raster_name
    if doc.labels is not None:
        data["labels"] = list(doc.labels.names)
    data["regions"] = [
        {"id": r.id, "text": r.text, "bbox": r.bbox.as_list(), **({"label": r.label} if r.label is not None else {})}
        for r in doc.by_id()
    ]
    return data


def save_document(doc: Document, path: Path | str) -> Path:
    """Write doc as JSON; a raster goes to a sibling ``<stem>.pgm``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raster_name = None
    if doc.raster is not None:
        raster_name = f"{path.stem}.pgm"
        write_pgm(doc.raster, path.parent / raster_name)
    path.write_text(json.dumps(document_to_dict(doc, raster_name), indent=2) + "\n", encoding="utf-8")
    return path


def save_corpus(docs: list[Document], directory: Path | str) -> list[Path]:
    """Write each document as ``<name>.json`` (plus raster) into directory."""
    directory = Path(directory)
    names = [doc.name or f"doc-{i:04d}" for i, doc in enumerate(docs)]
    if len(set(names)) != len(names):
        raise DocumentValidationError("document names must be unique within a corpus")
    return [save_document(doc, directory / f"{name}.json") for doc, name in zip(docs, names)]


def load_corpus(directory: Path | str) -> list[Document]:
    """Load every document JSON in a directory, sorted by file name."""
    directory = Path(directory)
    paths = sorted(p for p in directory.glob("*.json") if p.name not in CORPUS_METADATA)
    if not paths:
        raise DocumentParseError(f"no documents found in {directory}")
    docs = [load_document(p) for p in paths]
    logger.info(f"Loaded {len(docs)} documents from {directory}")
    return docs


# --- layout ---


def reading_order(doc: Document) -> list[int]:
    """Deterministic reading sequence of region ids.

    Regions whose vertical centers are closer than half the smaller height are
    joined into lines (transitively). Lines run top to bottom by mean vertical
    center; regions within a line run left to right by x0. Ties break by id.
    """
    regions = doc.by_id()
    count = len(regions)
    if count == 0:
        return []

    cy = np.array([r.bbox.cy for r in regions])
    heights = np.array([r.bbox.height for r in regions])
    same_line = np.abs(cy[:, None] - cy[None, :]) < LINE_OVERLAP_RATIO * np.minimum(heights[:, None], heights[None, :])
    n_lines, line_of = connected_components(csr_matrix(same_line), directed=False)

    lines: list[list[TextRegion]] = [[] for _ in range(n_lines)]
    for region, line in zip(regions, line_of):
        lines[line].append(region)

    def line_key(members: list[TextRegion]) -> tuple[float, int]:
        return (float(np.mean([m.bbox.cy for m in members])), min(m.id for m in members))

    order: list[int] = []
    for members in sorted(lines, key=line_key):
        order.extend(r.id for r in sorted(members, key=lambda r: (r.bbox.x0, r.id)))
    return order


def grid_bin(coord: float, extent: float, k: int) -> int:
    """Grid cell index of coord on a k-cell partition of [0, extent].

    Raises:
        DomainError: coord outside [0, extent] or k < 1
    """
    if k < 1:
        raise DomainError(f"grid size must be at least 1, got {k}")
    if not 0 <= coord <= extent:
        raise DomainError(f"coordinate {coord} outside [0, {extent}]")
    return min(int(math.floor(k * coord / extent)), k - 1)


def spatial_relation(a: BBox, b: BBox, width: float, height: float) -> np.ndarray:
    """Relative placement of b with respect to a, normalized by the page.

    Returns [dx, dy, w_a, h_a, w_b, h_b] where dx, dy are center offsets.
    """
    return np.array(
        [
            (b.cx - a.cx) / width,
            (b.cy - a.cy) / height,
            a.width / width,
            a.height / height,
            b.width / width,
            b.height / height,
        ],
        dtype=np.float64,
    )


def spatial_relations(boxes: list[BBox], width: float, height: float) -> np.ndarray:
    """spatial_relation for every ordered pair: an L×L×6 array indexed [i, j]."""
    cx = np.array([b.cx for b in boxes])
    cy = np.array([b.cy for b in boxes])
    w = np.array([b.width for b in boxes]) / width
    h = np.array([b.height for b in boxes]) / height
    count = len(boxes)
    out = np.empty((count, count, 6))
    out[..., 0] = (cx[None, :] - cx[:, None]) / width
    out[..., 1] = (cy[None, :] - cy[:, None]) / height
    out[..., 2] = w[:, None]
    out[..., 3] = h[:, None]
    out[..., 4] = w[None, :]
    out[..., 5] = h[None, :]
    return out
