"""Run configuration: model + training settings addressed by flat dotted keys.

Config files are JSON or YAML objects such as::

    {"model.d_node": 64, "model.use_visual": false, "train.epochs": 300}

Nested objects are flattened, so ``{"train": {"epochs": 300}}`` is the same
file. Unknown keys are rejected. The resolved configuration is written back
to each run directory.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any

import yaml

from fsdag.model.config import ConfigError
from fsdag.model.config import ModelConfig
from fsdag.model.config import resolve_preset
from fsdag.training.trainer import TrainConfig

logger = logging.getLogger(__name__)

THREADS_ENV = "FSDAG_THREADS"

__all__ = [
    "ConfigError",
    "RunConfig",
    "apply_override",
    "apply_text_override",
    "flatten",
    "load_config_file",
    "resolve_run_config",
    "worker_count",
    "write_resolved_config",
]


@dataclass
class RunConfig:
    """Everything a run depends on."""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablate: str | None = None


def flatten(obj: Any, prefix: str = "") -> dict[str, Any]:
    """Dotted key -> value for every leaf field of a dataclass tree; tuples become lists."""
    out: dict[str, Any] = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            out.update(flatten(value, f"{key}."))
        else:
            out[key] = list(value) if isinstance(value, tuple) else value
    return out


def _flatten_mapping(data: dict[str, Any], prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in data.items():
        if isinstance(value, dict):
            out.update(_flatten_mapping(value, f"{prefix}{key}."))
        else:
            out[f"{prefix}{key}"] = value
    return out


def _coerce(key: str, current: Any, value: Any) -> Any:
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key} expects true/false, got {value!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{key} expects an integer, got {value!r}")
        return int(value)
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} expects a number, got {value!r}")
        return float(value)
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} expects a list, got {value!r}")
        return tuple(value)
    if value is None or isinstance(value, str):
        return value
    if isinstance(current, str) and isinstance(value, bool):
        # YAML reads a bare off/on as a boolean
        return "on" if value else "off"
    return str(value)


def _resolve(run: RunConfig, key: str) -> tuple[Any, str]:
    parts = key.split(".")
    target: Any = run
    for part in parts:
        if not dataclasses.is_dataclass(target) or part not in {f.name for f in dataclasses.fields(target)}:
            raise ConfigError(f"unknown config key {key!r}")
        parent, target = target, getattr(target, part)
    if dataclasses.is_dataclass(target):
        raise ConfigError(f"config key {key!r} names a section, not a value")
    return parent, parts[-1]


def _lookup(run: RunConfig, key: str) -> Any:
    parent, leaf = _resolve(run, key)
    return getattr(parent, leaf)


def apply_override(run: RunConfig, key: str, value: Any) -> None:
    """Set one dotted key, converting value to the field's type.

    Raises:
        ConfigError: unknown key or a value of the wrong type
    """
    parent, leaf = _resolve(run, key)
    setattr(parent, leaf, _coerce(key, getattr(parent, leaf), value))


def parse_override(text: str) -> tuple[str, str]:
    """Split ``key=value`` into the key and the raw value text.

    Raises:
        ConfigError: no '=' in text
    """
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    return key.strip(), raw.strip()


def apply_text_override(run: RunConfig, key: str, raw: str) -> None:
    """Apply a command-line override; non-string fields parse raw as YAML (3, 0.5, true, [2, 3])."""
    value: Any = raw
    current = _lookup(run, key)
    if not isinstance(current, str) and current is not None:
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse value for {key}: {raw!r}") from e
    apply_override(run, key, value)


def load_config_file(path: Path | str) -> dict[str, Any]:
    """Read a JSON or YAML config file into flat dotted keys.

    Raises:
        ConfigError: unreadable file, bad syntax or a non-object document
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        data = yaml.safe_load(text) if path.suffix in (".yaml", ".yml") else json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"malformed config {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must contain an object")
    return _flatten_mapping(data)


def resolve_run_config(
    config_path: Path | str | None = None,
    overrides: list[str] | tuple[str, ...] = (),
    *,
    seed: int | None = None,
    epochs: int | None = None,
    lr: float | None = None,
    ablate: str | None = None,
) -> RunConfig:
    """Defaults, then the config file, then the ablation preset, then flags, then ``--set`` pairs."""
    run = RunConfig()
    if config_path is not None:
        for key, value in load_config_file(config_path).items():
            apply_override(run, key, value)

    ablate = ablate or run.ablate
    if ablate:
        preset = resolve_preset(ablate)
        run.model = preset.apply(run.model)
        run.ablate = preset.row
        logger.info(f"Ablation preset {preset.row} ({preset.description})")

    for key, value in (("train.seed", seed), ("train.epochs", epochs), ("train.lr", lr)):
        if value is not None:
            apply_override(run, key, value)
    for text in overrides:
        apply_text_override(run, *parse_override(text))

    run.model.validate()
    run.train.validate()
    return run


def write_resolved_config(run: RunConfig, out_dir: Path | str) -> Path:
    """Write every resolved key to ``<out_dir>/config.json``."""
    path = Path(out_dir) / "config.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(flatten(run), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def worker_count() -> int:
    """Thread cap from FSDAG_THREADS, else the CPU count.

    Raises:
        ConfigError: FSDAG_THREADS is not a positive integer
    """
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return value
