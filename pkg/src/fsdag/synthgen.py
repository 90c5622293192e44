"""Deterministic synthetic form generator for few-shot corpora.

A TemplateSpec places one value per key-value class near a fixed anchor cell
of a page grid, adds background words in free cells and renders every word
box as a filled rectangle whose intensity depends on its class.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any

import numpy as np

from fsdag import rng as rng_streams
from fsdag.document import BBox
from fsdag.document import Document
from fsdag.document import LabelSet
from fsdag.document import TextRegion
from fsdag.document import save_corpus

logger = logging.getLogger(__name__)

BACKGROUND_NAME = "other"
CHAR_WIDTH = 7.0
BOX_PADDING = 6.0


class GenerationError(RuntimeError):
    """Raised when a template cannot produce valid pages."""


@dataclass(frozen=True)
class FieldSpec:
    """One key-value class: its name, anchor grid cell (col, row) and vocabulary."""

    name: str
    anchor: tuple[int, int]
    vocabulary: tuple[str, ...]


@dataclass(frozen=True)
class TemplateSpec:
    """Layout and vocabulary of a synthetic document type."""

    name: str
    page_width: int
    page_height: int
    grid: tuple[int, int]
    fields: tuple[FieldSpec, ...]
    region_height: float = 14.0
    jitter: float = 4.0
    distractor_count: int = 0
    distractor_vocabulary: tuple[str, ...] = ("note",)
    description: str = ""

    @property
    def n_classes(self) -> int:
        return len(self.fields)

    @property
    def cell_size(self) -> tuple[float, float]:
        return self.page_width / self.grid[0], self.page_height / self.grid[1]

    def label_set(self) -> LabelSet:
        return LabelSet((BACKGROUND_NAME, *(f.name for f in self.fields)))


@dataclass
class CorpusManifest:
    """Provenance of a generated corpus."""

    seed: int
    template: str
    n_docs: int
    n_train: int | None = None
    n_test: int | None = None
    documents: list[str] = field(default_factory=list)


def parse_template_spec(data: dict[str, Any]) -> TemplateSpec:
    """Build a TemplateSpec from its JSON form.

    Raises:
        ValueError: missing fields or empty vocabularies
    """
    try:
        fields = tuple(
            FieldSpec(
                name=f["name"],
                anchor=(int(f["anchor"][0]), int(f["anchor"][1])),
                vocabulary=tuple(f["vocabulary"]),
            )
            for f in data["fields"]
        )
        spec = TemplateSpec(
            name=data["_meta"]["name"],
            description=data["_meta"].get("description", ""),
            page_width=int(data["page"][0]),
            page_height=int(data["page"][1]),
            grid=(int(data["grid"][0]), int(data["grid"][1])),
            fields=fields,
            region_height=float(data.get("region_height", 14.0)),
            jitter=float(data.get("jitter", 4.0)),
            distractor_count=int(data.get("distractors", 0)),
            distractor_vocabulary=tuple(data.get("distractor_vocabulary", ["note"])),
        )
    except (KeyError, IndexError, TypeError) as e:
        raise ValueError(f"Template missing or malformed field: {e}") from e

    if spec.n_classes < 2:
        raise ValueError("Template needs at least two fields")
    for f in spec.fields:
        if not f.vocabulary:
            raise ValueError(f"Field '{f.name}' has an empty vocabulary")
    if not spec.distractor_vocabulary:
        raise ValueError("Template has an empty distractor vocabulary")
    return spec


def check_template(spec: TemplateSpec) -> None:
    """Verify that every anchored box fits its cell under worst-case jitter.

    Raises:
        GenerationError: anchors overlap, leave the grid, or cannot hold a box
    """
    cols, rows = spec.grid
    cell_w, cell_h = spec.cell_size
    anchors = [f.anchor for f in spec.fields]
    if len(set(anchors)) != len(anchors):
        raise GenerationError(f"Template '{spec.name}' has overlapping anchors: {anchors}")
    for f in spec.fields:
        col, row = f.anchor
        if not (0 <= col < cols and 0 <= row < rows):
            raise GenerationError(f"Field '{f.name}' anchor {f.anchor} lies outside the {cols}×{rows} grid")
    if spec.region_height + 2 * spec.jitter > cell_h:
        raise GenerationError(
            f"Template '{spec.name}': boxes of height {spec.region_height} with jitter {spec.jitter} "
            f"do not fit cells of height {cell_h:.1f}"
        )
    if cell_w - 2 * spec.jitter - 1.0 <= 0:
        raise GenerationError(f"Template '{spec.name}': jitter {spec.jitter} too large for cells of width {cell_w:.1f}")
    free_cells = cols * rows - len(anchors)
    if spec.distractor_count > free_cells:
        raise GenerationError(
            f"Template '{spec.name}' wants {spec.distractor_count} distractors but only {free_cells} cells are free"
        )


def texture_intensity(label: int) -> float:
    """Gray level that encodes a class in the rendered raster."""
    return 0.2 + 0.6 * (label % 8) / 8


def _place(spec: TemplateSpec, cell: tuple[int, int], text: str, gen: np.random.Generator) -> BBox:
    cell_w, cell_h = spec.cell_size
    width = min(BOX_PADDING + CHAR_WIDTH * len(text), cell_w - 2 * spec.jitter - 1.0)
    cx = (cell[0] + 0.5) * cell_w + gen.uniform(-spec.jitter, spec.jitter)
    cy = (cell[1] + 0.5) * cell_h + gen.uniform(-spec.jitter, spec.jitter)
    return BBox(cx - width / 2, cy - spec.region_height / 2, cx + width / 2, cy + spec.region_height / 2)


def render(width: int, height: int, regions: list[TextRegion]) -> np.ndarray:
    """White page with each region filled by its class texture, 8-bit quantized."""
    raster = np.ones((height, width))
    for region in regions:
        box = region.bbox
        r0, r1 = int(np.floor(box.y0)), int(np.ceil(box.y1))
        c0, c1 = int(np.floor(box.x0)), int(np.ceil(box.x1))
        raster[r0:r1, c0:c1] = texture_intensity(region.label or 0)
    return np.round(raster * 255.0) / 255.0


def generate_document(spec: TemplateSpec, index: int, seed: int) -> Document:
    """The index-th page of the corpus for (spec, seed)."""
    gen = rng_streams.stream(seed, "synth", spec.name, index)
    regions: list[TextRegion] = []

    for class_index, f in enumerate(spec.fields, start=1):
        text = f.vocabulary[gen.integers(len(f.vocabulary))]
        regions.append(TextRegion(id=len(regions), text=text, bbox=_place(spec, f.anchor, text, gen), label=class_index))

    if spec.distractor_count:
        anchored = {f.anchor for f in spec.fields}
        free = [(c, r) for r in range(spec.grid[1]) for c in range(spec.grid[0]) if (c, r) not in anchored]
        for pick in gen.choice(len(free), size=spec.distractor_count, replace=False):
            text = spec.distractor_vocabulary[gen.integers(len(spec.distractor_vocabulary))]
            regions.append(TextRegion(id=len(regions), text=text, bbox=_place(spec, free[pick], text, gen), label=0))

    return Document(
        width=float(spec.page_width),
        height=float(spec.page_height),
        regions=tuple(regions),
        labels=spec.label_set(),
        raster=render(spec.page_width, spec.page_height, regions),
        name=f"{spec.name}-{index:04d}",
    )


def generate(spec: TemplateSpec, n_docs: int, seed: int) -> list[Document]:
    """Generate n_docs pages; a pure function of (spec, n_docs, seed).

    Raises:
        ValueError: n_docs < 1
        GenerationError: the template's anchors cannot be laid out
    """
    if n_docs < 1:
        raise ValueError(f"n_docs must be at least 1, got {n_docs}")
    check_template(spec)
    docs = [generate_document(spec, i, seed) for i in range(n_docs)]
    logger.info(f"Generated {n_docs} '{spec.name}' documents (seed {seed})")
    return docs


def split(docs: list[Document], n_train: int, seed: int) -> tuple[list[Document], list[Document]]:
    """Seeded shuffle, then the first n_train documents train and the rest test.

    Raises:
        ValueError: n_train is not in [0, len(docs))
    """
    if not 0 <= n_train < len(docs):
        raise ValueError(f"n_train must be in [0, {len(docs)}), got {n_train}")
    order = rng_streams.stream(seed, "split").permutation(len(docs))
    shuffled = [docs[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:]


def write_corpus(docs: list[Document], out_dir: Path, manifest: CorpusManifest) -> Path:
    """Write each document (JSON + PGM) and manifest.json into out_dir."""
    out_dir.mkdir(parents=True, exist_ok=True)
    save_corpus(docs, out_dir)
    manifest.documents = [doc.name for doc in docs]
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest_path
