"""Shared fixtures: a small labeled page and a tiny model configuration."""

import pytest

from fsdag.document import Document
from fsdag.encoders.text import TextEncoderConfig
from fsdag.encoders.visual import VisualEncoderConfig
from fsdag.model.config import ModelConfig

from tests.helpers import make_page


@pytest.fixture
def three_node_page() -> Document:
    return make_page(
        [(2, 2, 20, 10), (30, 3, 50, 11), (5, 25, 40, 33)],
        ["Invoice", "2024-01-31", "Total 42.00"],
        [0, 1, 2],
    )


@pytest.fixture
def tiny_config() -> ModelConfig:
    """Small widths so forward/backward run in milliseconds."""
    return ModelConfig(
        d_node=8,
        d_edge=8,
        d_pos=8,
        heads=2,
        steps=2,
        grid_k=5,
        text=TextEncoderConfig(raw_dim=16, d_text=4),
        visual=VisualEncoderConfig(channels=(2, 3), roi_grid=2),
    )
