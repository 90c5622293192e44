"""Few-shot training loop.

One document per step: optional geometric and graph augmentation, forward,
smoothed cross-entropy, backward, Adam. Every random draw comes from a stream
keyed by (seed, purpose, epoch, document name), so a run is a pure function of
the corpus, the configs and the seed.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path

import numpy as np

from fsdag import rng as rng_streams
from fsdag.core.tensor import Tape
from fsdag.core.tensor import backward
from fsdag.document import Document
from fsdag.evaluation.metrics import evaluate
from fsdag.model.config import ConfigError
from fsdag.model.config import ModelConfig
from fsdag.model.graph import forward
from fsdag.model.graph import smoothed_ce_loss
from fsdag.model.params import ModelParams
from fsdag.model.params import gradient_flow
from fsdag.model.params import save_checkpoint
from fsdag.training.augment import AugmentConfig
from fsdag.training.augment import augment_geometric
from fsdag.training.augment import augment_graph
from fsdag.training.optimizer import Adam

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Optimizer, schedule and augmentation settings.

    Attributes:
        checkpoint_every: Save an intermediate checkpoint every N epochs
            (0 keeps only the final one)
    """

    epochs: int = 300
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"train.epochs must be non-negative, got {self.epochs}")
        if self.lr < 0:
            raise ConfigError(f"train.lr must be non-negative, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"train.beta1/beta2 must be in [0, 1), got {self.beta1}, {self.beta2}")
        if self.seed < 0 or self.checkpoint_every < 0:
            raise ConfigError("train.seed and train.checkpoint_every must be non-negative")
        try:
            self.augment.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    macro_f1: float
    wallclock_ms: float


@dataclass
class TrainResult:
    """Final parameters, per-epoch log and which groups ever received gradient."""

    params: ModelParams
    log: list[EpochRecord] = field(default_factory=list)
    gradient_seen: dict[str, bool] = field(default_factory=dict)


def check_label_sets(docs: list[Document]) -> tuple[str, ...]:
    """Shared label names of a training corpus.

    Raises:
        ConfigError: no documents, unlabeled regions or differing label sets
    """
    if not docs:
        raise ConfigError("training needs at least one document")
    first = docs[0].labels
    for doc in docs:
        if doc.labels is None or not doc.is_labeled():
            raise ConfigError(f"document {doc.name or '<unnamed>'} is not fully labeled")
        if doc.labels != first:
            raise ConfigError(
                f"label set mismatch: {doc.name or '<unnamed>'} has {list(doc.labels.names)}, "
                f"expected {list(first.names)}"
            )
    return tuple(first.names)


def _doc_key(doc: Document, index: int) -> str:
    return doc.name or f"doc-{index}"


def train_step(
    doc: Document,
    params: ModelParams,
    optimizer: Adam,
    config: TrainConfig,
    gen: np.random.Generator,
) -> tuple[float, dict[str, bool]]:
    """One augmented forward/backward/update on a single page.

    Returns:
        The loss and the gradient-flow map of this step
    """
    model = params.config
    sample = doc
    perturbation = None
    if model.training_strategies:
        if doc.raster is not None and gen.random() < config.augment.geometric_prob:
            sample = augment_geometric(doc, gen, config.augment).document
        perturbation = augment_graph([r.bbox for r in sample.by_id()], sample.width, sample.height, gen, config.augment)

    labels = np.array([r.label for r in sample.by_id()], dtype=np.intp)
    tape = Tape()
    with tape:
        logits, _ = forward(
            sample,
            params,
            node_mask=None if perturbation is None else perturbation.node_mask,
            boxes=None if perturbation is None else perturbation.boxes,
        )
        loss = smoothed_ce_loss(logits, labels, model.effective_smoothing)
    backward(loss, tape)
    flow = gradient_flow(params)
    optimizer.step()
    optimizer.zero_grad()
    return loss.item(), flow


def append_log(record: EpochRecord, path: Path) -> None:
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps({"epoch": record.epoch, "loss": record.loss, "macro_f1": record.macro_f1, "wallclock_ms": record.wallclock_ms}) + "\n")


def train(
    train_docs: list[Document],
    config: TrainConfig,
    model_config: ModelConfig,
    log_path: Path | None = None,
    checkpoint_dir: Path | None = None,
) -> TrainResult:
    """Train from a fresh initialization.

    Args:
        train_docs: Labeled pages sharing one label set
        config: Optimizer, schedule and augmentation settings
        model_config: Architecture and ablation switches
        log_path: JSON-lines file; one record per epoch is appended
        checkpoint_dir: Where intermediate checkpoints go when
            config.checkpoint_every > 0

    Raises:
        ConfigError: invalid settings or inconsistent label sets
    """
    config.validate()
    model_config.validate()
    labels = check_label_sets(train_docs)

    params = ModelParams.initialize(model_config, labels, config.seed)
    optimizer = Adam(params, lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
    result = TrainResult(params=params, gradient_seen={group: False for group in params.groups()})
    if log_path is not None:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_path.write_text("", encoding="utf-8")

    logger.info(f"Training on {len(train_docs)} documents for {config.epochs} epochs ({len(params)} tensors)")
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = rng_streams.stream(config.seed, "shuffle", epoch).permutation(len(train_docs))
        losses = []
        for index in order:
            doc = train_docs[index]
            gen = rng_streams.stream(config.seed, "augment", epoch, _doc_key(doc, int(index)))
            loss, flow = train_step(doc, params, optimizer, config, gen)
            losses.append(loss)
            for group, nonzero in flow.items():
                result.gradient_seen[group] = result.gradient_seen[group] or nonzero

        train_f1 = evaluate(params, train_docs).macro_f1
        record = EpochRecord(
            epoch=epoch,
            loss=float(np.mean(losses)),
            macro_f1=train_f1,
            wallclock_ms=(time.perf_counter() - started) * 1000.0,
        )
        result.log.append(record)
        if log_path is not None:
            append_log(record, log_path)
        if epoch == 1 or epoch == config.epochs or epoch % 25 == 0:
            logger.info(f"epoch {epoch:4d}  loss {record.loss:.4f}  train macro F1 {train_f1:.4f}")
        if checkpoint_dir is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(params, checkpoint_dir / f"epoch-{epoch:04d}.ckpt")

    return result
