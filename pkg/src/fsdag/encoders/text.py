"""Text features for regions.

Each region text is split into boundary-padded character n-grams, every
n-gram gets a frozen pseudo-random embedding derived from its hash, the
embeddings are pooled and a trainable projection maps the result to D_t.
An external embedding file can replace the built-in backbone; it maps a
whole region text to one frozen vector.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections.abc import Callable
from collections.abc import Iterable
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any

import numpy as np

from fsdag.core import ops
from fsdag.core.tensor import ContractViolation
from fsdag.core.tensor import Tensor
from fsdag.document import Document

logger = logging.getLogger(__name__)

CHAR_BUCKETS = 128
POOLING_MODES = ("first", "mean")


class EmbeddingLookupError(KeyError):
    """Raised when a region text has no entry in the external embedding table."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class EmbeddingFormatError(ValueError):
    """Raised when an external embedding file is malformed."""


@dataclass
class TextEncoderConfig:
    """Text backbone settings.

    Attributes:
        kind: "hash_ngram" (built-in) or "external_file"
        raw_dim: Backbone embedding size D_raw
        d_text: Projected size D_t
        ngram_sizes: Character n-gram sizes
        hash_seed: Seed mixed into every n-gram hash
        embeddings_path: JSON embedding file, required for external_file
    """

    kind: str = "hash_ngram"
    raw_dim: int = 256
    d_text: int = 32
    ngram_sizes: tuple[int, ...] = (2, 3)
    hash_seed: int = 0
    embeddings_path: str | None = None

    def validate(self) -> None:
        if self.kind not in ("hash_ngram", "external_file"):
            raise ValueError(f"text.kind must be hash_ngram or external_file, got {self.kind!r}")
        if self.raw_dim < 1 or self.d_text < 1:
            raise ValueError("text dimensions must be positive")
        if not self.ngram_sizes or min(self.ngram_sizes) < 1:
            raise ValueError(f"text.ngram_sizes must be positive, got {self.ngram_sizes}")
        if self.kind == "external_file" and not self.embeddings_path:
            raise ValueError("text.kind external_file needs text.embeddings_path")


def subtokenize(text: str, sizes: Iterable[int]) -> list[str]:
    """Character n-grams of "^" + text + "$", size by size, left to right.

    Text shorter than the smallest size yields the padded text as its only
    sub-token.

    Example:
        >>> subtokenize("ab", {2})
        ['^a', 'ab', 'b$']
    """
    sizes = sorted(set(sizes))
    padded = f"^{text}$"
    if len(text) < sizes[0]:
        return [padded]
    return [padded[i : i + n] for n in sizes for i in range(len(padded) - n + 1)]


@lru_cache(maxsize=65536)
def hash_embed(subtoken: str, seed: int, raw_dim: int) -> np.ndarray:
    """Frozen vector for a sub-token, entries drawn from N(0, 1/sqrt(raw_dim)).

    The returned array is read-only and shared between callers.
    """
    digest = hashlib.blake2b(subtoken.encode("utf-8"), digest_size=8, key=str(seed).encode("ascii")).digest()
    gen = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
    vector = gen.normal(0.0, 1.0 / np.sqrt(raw_dim), size=raw_dim)
    vector.setflags(write=False)
    return vector


def pool_subtokens(embs: list[np.ndarray], mode: str = "mean") -> np.ndarray:
    """Mean of the sub-token embeddings, or the first one.

    Raises:
        ContractViolation: embs is empty
    """
    if not embs:
        raise ContractViolation("pool_subtokens needs at least one embedding")
    if mode == "first":
        return np.array(embs[0])
    if mode == "mean":
        return np.mean(np.stack(embs), axis=0)
    raise ValueError(f"unknown pooling mode {mode!r}; expected one of {POOLING_MODES}")


class EmbeddingTable:
    """Exact-string lookup from region text to a frozen vector."""

    def __init__(self, vectors: dict[str, np.ndarray]) -> None:
        dims = {v.shape for v in vectors.values()}
        if len(dims) > 1:
            raise EmbeddingFormatError(f"embedding vectors have mixed shapes: {sorted(dims)}")
        self._vectors = vectors
        for v in self._vectors.values():
            v.setflags(write=False)

    @property
    def dim(self) -> int | None:
        for v in self._vectors.values():
            return int(v.shape[0])
        return None

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, text: object) -> bool:
        return text in self._vectors

    def lookup(self, text: str) -> np.ndarray:
        """Vector for text.

        Raises:
            EmbeddingLookupError: text has no entry
        """
        try:
            return self._vectors[text]
        except KeyError:
            raise EmbeddingLookupError(f"no external embedding for text {text!r}") from None

    def items(self) -> Iterable[tuple[str, np.ndarray]]:
        return self._vectors.items()


def _reject_duplicates(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    seen: dict[str, Any] = {}
    for key, value in pairs:
        if key in seen:
            raise EmbeddingFormatError(f"duplicate embedding key {key!r}")
        seen[key] = value
    return seen


def load_external_embeddings(path: Path | str) -> EmbeddingTable:
    """Read a JSON object mapping text to a list of floats.

    Raises:
        EmbeddingFormatError: invalid JSON, duplicate keys, non-numeric or
            ragged vectors
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"), object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as e:
        raise EmbeddingFormatError(f"invalid JSON in {path}: {e.msg} (line {e.lineno})") from e
    if not isinstance(data, dict):
        raise EmbeddingFormatError(f"{path}: expected an object mapping text to vectors")

    vectors: dict[str, np.ndarray] = {}
    for text, values in data.items():
        if not isinstance(values, list) or not values or not all(isinstance(v, (int, float)) for v in values):
            raise EmbeddingFormatError(f"{path}: entry {text!r} is not a non-empty list of numbers")
        vectors[text] = np.array(values, dtype=np.float64)
    table = EmbeddingTable(vectors)
    logger.info(f"Loaded {len(table)} external embeddings (dim {table.dim}) from {path}")
    return table


def save_external_embeddings(table: EmbeddingTable | dict[str, np.ndarray], path: Path | str) -> Path:
    """Write an embedding table in the format load_external_embeddings reads.

    Floats are written with their shortest round-tripping representation.
    """
    data = {text: [float(v) for v in np.asarray(vector).reshape(-1)] for text, vector in table.items()}
    path = Path(path)
    path.write_text(json.dumps(data, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


@lru_cache(maxsize=16384)
def _hashed_text_vector(text: str, sizes: tuple[int, ...], seed: int, raw_dim: int, mode: str) -> np.ndarray:
    vector = pool_subtokens([hash_embed(s, seed, raw_dim) for s in subtokenize(text, sizes)], mode)
    vector.setflags(write=False)
    return vector


def raw_text_vector(text: str, cfg: TextEncoderConfig, mode: str = "mean", table: EmbeddingTable | None = None) -> np.ndarray:
    """Frozen backbone vector for one region text."""
    if cfg.kind == "external_file":
        if table is None:
            raise ContractViolation("external_file text encoder needs an embedding table")
        return table.lookup(text)
    return _hashed_text_vector(text, tuple(cfg.ngram_sizes), cfg.hash_seed, cfg.raw_dim, mode)


def char_bucket_weights(texts: list[str]) -> np.ndarray:
    """Averaging matrix (len(texts)×CHAR_BUCKETS) over each text's character buckets."""
    weights = np.zeros((len(texts), CHAR_BUCKETS))
    for row, text in enumerate(texts):
        for ch in text:
            weights[row, ord(ch) % CHAR_BUCKETS] += 1.0 / len(text)
    return weights


def text_features(
    doc: Document,
    order: list[int],
    cfg: TextEncoderConfig,
    project: Callable[[Tensor], Tensor],
    pooling: str = "mean",
    table: EmbeddingTable | None = None,
    char_table: Tensor | None = None,
) -> Tensor:
    """t_i for every region, rows in region-id order.

    Rows are computed in reading order and scattered back, so the result does
    not depend on how the regions are numbered.

    Args:
        doc: Document whose region texts are encoded
        order: Reading sequence of region ids
        cfg: Backbone settings
        project: Trainable projection D_raw -> D_t (MLP 1)
        pooling: "mean" or "first" over sub-tokens, or "off" to use the
            trainable character-bucket table instead of the frozen backbone
        table: External embeddings, for kind external_file
        char_table: CHAR_BUCKETS×D_raw trainable table, for pooling "off"

    Raises:
        EmbeddingLookupError: an external table misses a region text
    """
    texts = [doc.region(i).text for i in order]
    if pooling == "off":
        if char_table is None:
            raise ContractViolation("pooling 'off' needs a character-bucket table")
        raw = ops.matmul(Tensor(char_bucket_weights(texts)), char_table)
    else:
        raw = Tensor(np.stack([raw_text_vector(text, cfg, pooling, table) for text in texts]))
    projected = project(raw)
    return ops.take_rows(projected, np.argsort(order))
