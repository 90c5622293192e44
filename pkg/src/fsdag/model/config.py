"""Model hyperparameters and the ablation presets.

Each preset switches the four architecture components and the training
strategies on or off; everything else keeps the default dimensions.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from dataclasses import field

from fsdag.encoders.text import TextEncoderConfig
from fsdag.encoders.visual import VisualEncoderConfig

TEXT_POOL_MODES = ("off", "first", "mean")
MESSAGE_MODES = ("vector", "scalar")
POS_SUBTABLES = 4


class ConfigError(ValueError):
    """Raised when a configuration value or key is invalid."""


@dataclass
class ModelConfig:
    """Dimensions and component switches of the graph network.

    Attributes:
        d_node: Node feature size D_n
        d_edge: Edge feature size D_e
        d_pos: Positional embedding size D_p, four sub-tables of d_pos/4
        heads: Attention heads D_h
        steps: Propagation steps
        grid_k: Positional grid cells per side
        label_smoothing: Smoothing mass epsilon
        use_text_pool: "off" (trainable character buckets), "first" or "mean"
            sub-token pooling over the frozen backbone
        use_visual: Conv stack + RoI align; otherwise a constant visual vector
        use_positional: Grid positional embeddings; otherwise zeros
        training_strategies: Label smoothing, instance norm and augmentation
        message_mode: "vector" messages (head vectors) or "scalar" (head scores)
    """

    d_node: int = 64
    d_edge: int = 64
    d_pos: int = 64
    heads: int = 4
    steps: int = 2
    grid_k: int = 25
    label_smoothing: float = 0.1
    use_text_pool: str = "mean"
    use_visual: bool = True
    use_positional: bool = True
    training_strategies: bool = True
    message_mode: str = "vector"
    text: TextEncoderConfig = field(default_factory=TextEncoderConfig)
    visual: VisualEncoderConfig = field(default_factory=VisualEncoderConfig)

    @property
    def d_text(self) -> int:
        return self.text.d_text

    @property
    def d_visual(self) -> int:
        return self.visual.d_visual

    @property
    def pos_sub_dim(self) -> int:
        return self.d_pos // POS_SUBTABLES

    @property
    def pair_dim(self) -> int:
        """Input width of the per-head edge MLP: [n_i, p_i, e_ij, n_j, p_j]."""
        return 2 * self.d_node + 2 * self.d_pos + self.d_edge

    @property
    def effective_smoothing(self) -> float:
        return self.label_smoothing if self.training_strategies else 0.0

    def validate(self) -> None:
        """Raise ConfigError on the first invalid value."""
        for name in ("d_node", "d_edge", "d_pos", "heads", "steps", "grid_k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be at least 1, got {getattr(self, name)}")
        if self.d_pos % POS_SUBTABLES:
            raise ConfigError(f"model.d_pos must be divisible by {POS_SUBTABLES}, got {self.d_pos}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"model.label_smoothing must be in [0, 1), got {self.label_smoothing}")
        if self.use_text_pool not in TEXT_POOL_MODES:
            raise ConfigError(f"model.use_text_pool must be one of {TEXT_POOL_MODES}, got {self.use_text_pool!r}")
        if self.message_mode not in MESSAGE_MODES:
            raise ConfigError(f"model.message_mode must be one of {MESSAGE_MODES}, got {self.message_mode!r}")
        try:
            self.text.validate()
            self.visual.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e


@dataclass(frozen=True)
class AblationPreset:
    """One row of the component ablation table."""

    row: str
    description: str
    use_text_pool: str
    use_visual: bool
    use_positional: bool
    training_strategies: bool

    def apply(self, config: ModelConfig) -> ModelConfig:
        return dataclasses.replace(
            config,
            use_text_pool=self.use_text_pool,
            use_visual=self.use_visual,
            use_positional=self.use_positional,
            training_strategies=self.training_strategies,
        )


ABLATION_PRESETS: dict[str, AblationPreset] = {
    p.row: p
    for p in (
        AblationPreset("#1", "skeleton", "off", False, False, False),
        AblationPreset("#2a", "first sub-token", "first", False, False, False),
        AblationPreset("#2b", "sub-token pooling", "mean", False, False, False),
        AblationPreset("#2c", "visual features", "off", True, False, False),
        AblationPreset("#2d", "positional embedding", "off", False, True, False),
        AblationPreset("#2e", "training strategies", "off", False, False, True),
        AblationPreset("#3", "pooling + visual", "mean", True, False, False),
        AblationPreset("#4", "pooling + visual + positional", "mean", True, True, False),
        AblationPreset("#5", "full model", "mean", True, True, True),
    )
}

# names accepted by --ablate besides the row ids
ABLATION_ALIASES = {
    "skeleton": "#1",
    "first-token": "#2a",
    "pooling": "#2b",
    "visual": "#2c",
    "positional": "#2d",
    "strategies": "#2e",
    "no-positional": "#3",
    "no-strategies": "#4",
    "full": "#5",
}

DEFAULT_ABLATION_ROWS = ("#1", "#2b", "#2c", "#2d", "#5")


def resolve_preset(name: str) -> AblationPreset:
    """Preset by row id ("#2d", "2d") or alias ("no-positional").

    Raises:
        ConfigError: unknown preset
    """
    key = ABLATION_ALIASES.get(name, name)
    if not key.startswith("#"):
        key = f"#{key}"
    if key not in ABLATION_PRESETS:
        known = ", ".join([*ABLATION_PRESETS, *ABLATION_ALIASES])
        raise ConfigError(f"unknown ablation preset {name!r}; known: {known}")
    return ABLATION_PRESETS[key]
