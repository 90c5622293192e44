"""Character-confusion OCR errors injected into region texts at inference time."""

from __future__ import annotations

import dataclasses
import json
import logging
from collections.abc import Mapping
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path

import numpy as np

from fsdag import rng as rng_streams
from fsdag.document import Document

logger = logging.getLogger(__name__)

DEFAULT_CONFUSIONS: dict[str, tuple[str, ...]] = {
    "1": ("l", "I"),
    "l": ("I",),
    "6": ("b",),
    "5": ("S",),
    ",": (".",),
}


def _default_mapping() -> dict[str, tuple[str, ...]]:
    return dict(DEFAULT_CONFUSIONS)


@dataclass(frozen=True)
class ConfusionTable:
    """Characters an OCR engine commonly misreads, with their replacements."""

    mapping: Mapping[str, tuple[str, ...]] = field(default_factory=_default_mapping)

    def __post_init__(self) -> None:
        for key, replacements in self.mapping.items():
            if len(key) != 1:
                raise ValueError(f"confusion keys must be single characters, got {key!r}")
            if not replacements:
                raise ValueError(f"confusion entry {key!r} has no replacements")

    def __contains__(self, char: object) -> bool:
        return char in self.mapping

    def replacements(self, char: str) -> tuple[str, ...]:
        return tuple(self.mapping[char])


def load_confusion_table(path: Path | str) -> ConfusionTable:
    """Read a JSON object mapping a character to a list of replacement strings."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected an object mapping characters to replacement lists")
    return ConfusionTable({key: tuple(value) for key, value in data.items()})


def perturb_text(word: str, p: float, table: ConfusionTable, gen: np.random.Generator) -> str:
    """With probability p, replace every confusable character of word.

    One Bernoulli draw decides for the whole word; each confusable character
    then takes a uniformly drawn replacement.

    Example:
        >>> perturb_text("ate 5 chocolates", 1.0, ConfusionTable(), np.random.default_rng(0))
        'ate S chocoIates'
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    if gen.random() >= p:
        return word
    out = []
    for char in word:
        if char in table:
            options = table.replacements(char)
            out.append(options[gen.integers(len(options))] if len(options) > 1 else options[0])
        else:
            out.append(char)
    return "".join(out)


def perturb_document(doc: Document, p: float, table: ConfusionTable, seed: int) -> Document:
    """Perturb every region text; boxes, labels and raster are untouched.

    Region r of document d draws from the stream (seed, "ocr", d.name, r), so
    the result does not depend on corpus order.
    """
    regions = tuple(
        dataclasses.replace(
            region,
            text=perturb_text(region.text, p, table, rng_streams.stream(seed, "ocr", doc.name, region.id)),
        )
        for region in doc.regions
    )
    return dataclasses.replace(doc, regions=regions)


def perturb_corpus(docs: list[Document], p: float, table: ConfusionTable, seed: int) -> list[Document]:
    perturbed = [perturb_document(doc, p, table, seed) for doc in docs]
    changed = sum(a.text != b.text for doc, new in zip(docs, perturbed) for a, b in zip(doc.regions, new.regions))
    logger.info(f"OCR noise p={p}: {changed} region texts changed across {len(docs)} documents")
    return perturbed
