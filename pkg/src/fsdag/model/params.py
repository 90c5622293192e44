"""Trainable parameters of the graph network and their checkpoint container.

Checkpoint layout::

    b"FSDAG1" | header length (uint64, little-endian) | header (UTF-8 JSON)
    | payload (float64, little-endian)

The header holds the model config, the label names and, per tensor, its
name, shape, byte offset into the payload and byte count.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import struct
from collections.abc import Iterator
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from fsdag import rng as rng_streams
from fsdag.core import ops
from fsdag.core.tensor import Tensor
from fsdag.encoders.text import CHAR_BUCKETS
from fsdag.encoders.text import TextEncoderConfig
from fsdag.encoders.visual import VisualEncoderConfig
from fsdag.model.config import ModelConfig

logger = logging.getLogger(__name__)

MAGIC = b"FSDAG1"
FORMAT_VERSION = 1
EMBEDDING_STD = 0.02
_LENGTH = struct.Struct("<Q")


class CheckpointError(ValueError):
    """Raised when a checkpoint is truncated, malformed or inconsistent."""


@dataclass
class MLP:
    """linear -> ReLU -> linear."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(ops.relu(ops.linear(x, self.w1, self.b1)), self.w2, self.b2)

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1]


@dataclass(frozen=True)
class Linear:
    weight: Tensor
    bias: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


def _mlp_shapes(prefix: str, d_in: int, d_hidden: int, d_out: int) -> list[tuple[str, tuple[int, ...]]]:
    return [
        (f"{prefix}.w1", (d_in, d_hidden)),
        (f"{prefix}.b1", (d_hidden,)),
        (f"{prefix}.w2", (d_hidden, d_out)),
        (f"{prefix}.b2", (d_out,)),
    ]


def parameter_shapes(config: ModelConfig, n_classes: int) -> list[tuple[str, tuple[int, ...]]]:
    """Name and shape of every trainable tensor, in checkpoint order."""
    shapes: list[tuple[str, tuple[int, ...]]] = []
    if config.use_text_pool == "off":
        shapes.append(("char_table", (CHAR_BUCKETS, config.text.raw_dim)))
    shapes += _mlp_shapes("mlp1", config.text.raw_dim, config.d_text, config.d_text)

    if config.use_visual:
        c_in = 1
        for layer, c_out in enumerate(config.visual.channels):
            k = config.visual.kernel
            shapes.append((f"conv.{layer}.weight", (c_out, c_in, k, k)))
            shapes.append((f"conv.{layer}.bias", (c_out,)))
            c_in = c_out

    shapes += _mlp_shapes("mlp2", config.d_text * config.d_visual, config.d_node, config.d_node)
    shapes += _mlp_shapes("mlp3", 6, config.d_edge, config.d_edge)

    if config.use_positional:
        shapes.append(("pos_hor", (config.grid_k, config.pos_sub_dim)))
        shapes.append(("pos_ver", (config.grid_k, config.pos_sub_dim)))

    for head in range(config.heads):
        shapes += _mlp_shapes(f"mlp4.{head}", config.pair_dim, config.d_node, config.d_node)
        # hidden width d_node; a width-1 hidden layer would make the score a single ReLU unit
        shapes += _mlp_shapes(f"mlp5.{head}", config.d_node, config.d_node, 1)

    message_dim = config.heads * (config.d_node if config.message_mode == "vector" else 1)
    for step in range(config.steps):
        shapes += _mlp_shapes(f"mlp6.{step}", message_dim, config.d_node, config.d_node)

    shapes.append(("classifier.weight", (config.d_node, n_classes)))
    shapes.append(("classifier.bias", (n_classes,)))
    return shapes


def _init_tensor(name: str, shape: tuple[int, ...], fan_in: int, seed: int) -> np.ndarray:
    gen = rng_streams.stream(seed, "init", name)
    if name in ("char_table", "pos_hor", "pos_ver"):
        return gen.normal(0.0, EMBEDDING_STD, size=shape)
    if len(shape) == 1:
        bound = 1.0 / np.sqrt(fan_in)
        return gen.uniform(-bound, bound, size=shape)
    if len(shape) == 4:
        receptive = shape[2] * shape[3]
        fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
    else:
        fan_in, fan_out = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return gen.uniform(-limit, limit, size=shape)


class ModelParams:
    """All trainable tensors by name, with typed accessors per component.

    Attributes:
        config: The ModelConfig the shapes follow
        labels: Class names, index 0 the background class
        tensors: Name -> Tensor, in checkpoint order
    """

    def __init__(self, config: ModelConfig, labels: tuple[str, ...], tensors: dict[str, Tensor]) -> None:
        self.config = config
        self.labels = tuple(labels)
        self.tensors = tensors

    @classmethod
    def initialize(cls, config: ModelConfig, labels: tuple[str, ...], seed: int) -> ModelParams:
        """Glorot-uniform weights, small uniform biases, N(0, 0.02) tables.

        Each tensor draws from its own stream keyed by (seed, name).
        """
        config.validate()
        tensors: dict[str, Tensor] = {}
        fan_in = 1
        for name, shape in parameter_shapes(config, len(labels)):
            # a bias takes the fan-in of the weight listed just before it
            if len(shape) > 1:
                fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            tensors[name] = Tensor(_init_tensor(name, shape, fan_in, seed), requires_grad=True, name=name)
        return cls(config, labels, tensors)

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.tensors.values())

    def __len__(self) -> int:
        return len(self.tensors)

    def mlp(self, prefix: str) -> MLP:
        t = self.tensors
        return MLP(t[f"{prefix}.w1"], t[f"{prefix}.b1"], t[f"{prefix}.w2"], t[f"{prefix}.b2"])

    @property
    def text_projection(self) -> MLP:
        return self.mlp("mlp1")

    @property
    def char_table(self) -> Tensor | None:
        return self.tensors.get("char_table")

    @property
    def conv_layers(self) -> list[tuple[Tensor, Tensor]]:
        if not self.config.use_visual:
            return []
        return [
            (self.tensors[f"conv.{i}.weight"], self.tensors[f"conv.{i}.bias"])
            for i in range(len(self.config.visual.channels))
        ]

    @property
    def fusion(self) -> MLP:
        return self.mlp("mlp2")

    @property
    def edge_projection(self) -> MLP:
        return self.mlp("mlp3")

    @property
    def pos_tables(self) -> tuple[Tensor, Tensor] | None:
        if not self.config.use_positional:
            return None
        return self.tensors["pos_hor"], self.tensors["pos_ver"]

    def head_vector(self, head: int) -> MLP:
        return self.mlp(f"mlp4.{head}")

    def head_score(self, head: int) -> MLP:
        return self.mlp(f"mlp5.{head}")

    def update(self, step: int) -> MLP:
        return self.mlp(f"mlp6.{step}")

    @property
    def classifier(self) -> Linear:
        return Linear(self.tensors["classifier.weight"], self.tensors["classifier.bias"])

    def zero_grad(self) -> None:
        for tensor in self:
            tensor.zero_grad()

    def groups(self) -> dict[str, list[Tensor]]:
        """Tensors per component group, e.g. "mlp4.2" or "conv.0" or "pos_hor"."""
        out: dict[str, list[Tensor]] = {}
        for name, tensor in self.tensors.items():
            group = name.rsplit(".", 1)[0] if "." in name else name
            out.setdefault(group, []).append(tensor)
        return out


def gradient_flow(params: ModelParams) -> dict[str, bool]:
    """Whether each parameter group currently holds a nonzero gradient."""
    return {
        group: any(t.grad is not None and bool(np.any(t.grad != 0.0)) for t in tensors)
        for group, tensors in params.groups().items()
    }


# --- checkpoint container ---


def config_to_dict(config: ModelConfig) -> dict[str, Any]:
    return dataclasses.asdict(config)


def config_from_dict(data: dict[str, Any]) -> ModelConfig:
    """Inverse of config_to_dict; JSON lists become tuples again."""
    data = dict(data)
    text = dict(data.pop("text", {}))
    visual = dict(data.pop("visual", {}))
    if "ngram_sizes" in text:
        text["ngram_sizes"] = tuple(text["ngram_sizes"])
    if "channels" in visual:
        visual["channels"] = tuple(visual["channels"])
    return ModelConfig(**data, text=TextEncoderConfig(**text), visual=VisualEncoderConfig(**visual))


def checkpoint_bytes(params: ModelParams) -> bytes:
    """Serialized checkpoint; identical parameters give identical bytes."""
    index = []
    payload = bytearray()
    for name, tensor in params.tensors.items():
        chunk = tensor.data.astype("<f8").tobytes()
        index.append({"name": name, "shape": list(tensor.shape), "offset": len(payload), "nbytes": len(chunk)})
        payload += chunk
    header = {
        "format": FORMAT_VERSION,
        "config": config_to_dict(params.config),
        "labels": list(params.labels),
        "tensors": index,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + _LENGTH.pack(len(header_bytes)) + header_bytes + bytes(payload)


def save_checkpoint(params: ModelParams, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(params))
    logger.info(f"Saved checkpoint with {len(params)} tensors to {path}")
    return path


def parse_checkpoint(blob: bytes) -> ModelParams:
    """Decode checkpoint bytes, validating every shape against the config.

    Raises:
        CheckpointError: bad magic, truncation, malformed header or a shape
            that disagrees with the config
    """
    prefix = len(MAGIC) + _LENGTH.size
    if len(blob) < prefix or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic or truncated)")
    (header_len,) = _LENGTH.unpack_from(blob, len(MAGIC))
    if len(blob) < prefix + header_len:
        raise CheckpointError("checkpoint truncated inside the header")
    try:
        header = json.loads(blob[prefix : prefix + header_len].decode("utf-8"))
        config = config_from_dict(header["config"])
        labels = tuple(header["labels"])
        index = header["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise CheckpointError(f"malformed checkpoint header: {e}") from e
    if header.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {header.get('format')!r}")

    expected = parameter_shapes(config, len(labels))
    if [entry.get("name") for entry in index] != [name for name, _ in expected]:
        raise CheckpointError("checkpoint tensors do not match the parameter layout of its config")

    payload = blob[prefix + header_len :]
    tensors: dict[str, Tensor] = {}
    for entry, (name, shape) in zip(index, expected):
        if tuple(entry["shape"]) != shape:
            raise CheckpointError(f"tensor {name}: header shape {entry['shape']} but config needs {list(shape)}")
        start, nbytes = int(entry["offset"]), int(entry["nbytes"])
        if nbytes != 8 * int(np.prod(shape)):
            raise CheckpointError(f"tensor {name}: {nbytes} bytes cannot hold shape {list(shape)}")
        if start + nbytes > len(payload):
            raise CheckpointError(f"checkpoint truncated inside tensor {name}")
        values = np.frombuffer(payload, dtype="<f8", count=nbytes // 8, offset=start).reshape(shape)
        tensors[name] = Tensor(values.astype(np.float64), requires_grad=True, name=name)
    return ModelParams(config, labels, tensors)


def load_checkpoint(path: Path | str) -> ModelParams:
    """Read a checkpoint file.

    Raises:
        CheckpointError: see parse_checkpoint
        FileNotFoundError: path does not exist
    """
    return parse_checkpoint(Path(path).read_bytes())
