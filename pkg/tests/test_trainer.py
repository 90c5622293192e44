"""Tests for the Adam optimizer and the training loop."""

import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest

from fsdag.core.tensor import Tensor
from fsdag.document import Document
from fsdag.document import LabelSet
from fsdag.model.config import ConfigError
from fsdag.model.config import ModelConfig
from fsdag.model.params import ModelParams
from fsdag.model.params import checkpoint_bytes
from fsdag.training.optimizer import Adam
from fsdag.training.trainer import TrainConfig
from fsdag.training.trainer import check_label_sets
from fsdag.training.trainer import train

from tests.helpers import LABELS
from tests.helpers import make_page


@pytest.fixture
def pages() -> list[Document]:
    return [
        make_page([(2, 2, 20, 10), (30, 3, 50, 11), (5, 25, 40, 33)], ["Invoice", "01/02/24", "9.99"], [0, 1, 2], name="a"),
        make_page([(3, 4, 22, 12), (32, 2, 52, 10), (6, 26, 38, 34), (44, 30, 60, 40)], ["Bill", "12/31/23", "120.00", "Acme"], [0, 1, 2, 3], name="b"),
    ]


class TestAdam:
    """Single optimizer steps."""

    def test_first_step_moves_by_lr(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.array([0.5, -3.0])

        Adam([p], lr=0.1).step()

        np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-7)

    def test_tensor_without_gradient_is_untouched(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        Adam([p], lr=0.1).step()
        assert p.data.tolist() == [1.0]

    def test_zero_grad(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.array([1.0])
        opt = Adam([p])
        opt.zero_grad()
        assert p.grad is None or not np.any(p.grad)


class TestCheckLabelSets:
    """Label set consistency of a training corpus."""

    def test_shared_names(self, pages: list[Document]):
        assert check_label_sets(pages) == LABELS.names

    def test_mismatch(self, pages: list[Document]):
        other = dataclasses.replace(pages[1], labels=LabelSet(("other", "date", "total", "payee")))
        with pytest.raises(ConfigError) as exc_info:
            check_label_sets([pages[0], other])
        assert "mismatch" in str(exc_info.value)

    def test_empty(self):
        with pytest.raises(ConfigError):
            check_label_sets([])

    def test_unlabeled(self, pages: list[Document]):
        bare = dataclasses.replace(pages[0], regions=tuple(dataclasses.replace(r, label=None) for r in pages[0].regions))
        with pytest.raises(ConfigError):
            check_label_sets([bare])


class TestTrain:
    """The seeded training loop."""

    def test_zero_learning_rate_keeps_initial_parameters(self, pages: list[Document], tiny_config: ModelConfig):
        result = train(pages, TrainConfig(epochs=2, lr=0.0, seed=4), tiny_config)
        initial = ModelParams.initialize(tiny_config, LABELS.names, seed=4)
        assert checkpoint_bytes(result.params) == checkpoint_bytes(initial)

    def test_same_seed_same_checkpoint(self, pages: list[Document], tiny_config: ModelConfig):
        """
        Given: identical corpus, configs and seed
        When: training runs twice
        Then: the final checkpoints are byte-identical and losses agree
        """
        config = TrainConfig(epochs=3, lr=0.01, seed=1)

        first = train(pages, config, tiny_config)
        second = train(pages, config, tiny_config)

        assert checkpoint_bytes(first.params) == checkpoint_bytes(second.params)
        assert [r.loss for r in first.log] == [r.loss for r in second.log]

    def test_different_seed_different_checkpoint(self, pages: list[Document], tiny_config: ModelConfig):
        a = train(pages, TrainConfig(epochs=1, lr=0.01, seed=1), tiny_config)
        b = train(pages, TrainConfig(epochs=1, lr=0.01, seed=2), tiny_config)
        assert checkpoint_bytes(a.params) != checkpoint_bytes(b.params)

    def test_every_group_receives_gradient(self, pages: list[Document], tiny_config: ModelConfig):
        result = train(pages, TrainConfig(epochs=1, lr=0.01), tiny_config)
        assert result.gradient_seen
        assert all(result.gradient_seen.values()), [g for g, seen in result.gradient_seen.items() if not seen]

    def test_character_table_receives_gradient(self, pages: list[Document], tiny_config: ModelConfig):
        config = dataclasses.replace(tiny_config, use_text_pool="off", training_strategies=False)
        result = train(pages, TrainConfig(epochs=1, lr=0.01), config)
        assert result.gradient_seen["char_table"]

    def test_loss_decreases_without_augmentation(self, pages: list[Document], tiny_config: ModelConfig):
        config = dataclasses.replace(tiny_config, training_strategies=False)
        result = train(pages, TrainConfig(epochs=30, lr=0.01), config)
        assert result.log[-1].loss < result.log[0].loss

    def test_jsonl_log_and_checkpoints(self, pages: list[Document], tiny_config: ModelConfig, tmp_path: Path):
        log_path = tmp_path / "train_log.jsonl"

        result = train(pages, TrainConfig(epochs=4, lr=0.01, checkpoint_every=2), tiny_config, log_path, tmp_path / "checkpoints")

        records = [json.loads(line) for line in log_path.read_text().splitlines()]
        assert [r["epoch"] for r in records] == [1, 2, 3, 4]
        assert set(records[0]) == {"epoch", "loss", "macro_f1", "wallclock_ms"}
        assert records[-1]["loss"] == result.log[-1].loss
        assert sorted(p.name for p in (tmp_path / "checkpoints").iterdir()) == ["epoch-0002.ckpt", "epoch-0004.ckpt"]

    def test_label_mismatch_is_rejected(self, pages: list[Document], tiny_config: ModelConfig):
        other = dataclasses.replace(pages[1], labels=LabelSet(("other", "date", "total", "payee")))
        with pytest.raises(ConfigError):
            train([pages[0], other], TrainConfig(epochs=1), tiny_config)

    def test_negative_epochs(self, pages: list[Document], tiny_config: ModelConfig):
        with pytest.raises(ConfigError):
            train(pages, TrainConfig(epochs=-1), tiny_config)
