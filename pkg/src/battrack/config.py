"""Run configuration.

A config file is a flat YAML mapping; every key names a field of
:class:`TrackerConfig` or :class:`TrainConfig`.  Unknown keys are errors.

Dataclass defaults are the full-scale published settings.  ``DESK_PRESET``
shrinks point counts and widths so that a run fits one CPU core in minutes;
a config file may name it with ``preset: desk``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    pass


class TemplateStrategy(str, Enum):
    FIRST_GT = "first_gt"
    PREVIOUS = "previous"
    FIRST_AND_PREVIOUS = "first_and_previous"
    ALL_PREVIOUS = "all_previous"


class SearchMode(str, Enum):
    LONG = "long"
    SHORT = "short"


class Fusion(str, Enum):
    BAFF = "baff"
    VANILLA = "vanilla"
    FEATURE = "feature"  # BAFF grouping driven by feature distances


@dataclass
class TrackerConfig:
    k: int = 4
    template_strategy: TemplateStrategy = TemplateStrategy.FIRST_AND_PREVIOUS
    search_mode: SearchMode = SearchMode.LONG
    search_margin: float = 2.0
    n_template_points: int = 512
    n_search_points: int = 1024
    fusion: Fusion = Fusion.BAFF
    use_template_boxcloud: bool = True
    boxcloud_variant: str = "euclidean"
    feature_dim: int = 256
    template_seeds: int = 64
    search_seeds: int = 128
    radii: tuple = (0.3, 0.5)
    group_sizes: tuple = (16, 16)
    use_abs_xyz: bool = False
    n_proposals: int = 64
    proposal_radius: float = 0.3
    proposal_group: int = 16
    model_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        self.template_strategy = TemplateStrategy(self.template_strategy)
        self.search_mode = SearchMode(self.search_mode)
        self.fusion = Fusion(self.fusion)
        self.radii = tuple(float(r) for r in self.radii)
        self.group_sizes = tuple(int(g) for g in self.group_sizes)
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.search_margin <= 0:
            raise ConfigError(f"search_margin must be > 0, got {self.search_margin}")
        if self.boxcloud_variant not in ("euclidean", "offset"):
            raise ConfigError(f"boxcloud_variant must be euclidean or offset, got {self.boxcloud_variant!r}")

    @property
    def boxcloud_width(self) -> int:
        return 9 if self.boxcloud_variant == "euclidean" else 27


@dataclass
class TrainConfig:
    lam: float = 1.0
    lr: float = 0.001
    lr_decay: float = 5.0
    lr_step: int = 12
    epochs: int = 60
    batch_size: int = 96
    shift_xy: float = 0.3
    shift_heading_deg: float = 10.0
    loss_weights: tuple = (1.0, 1.0, 1.0, 1.0)
    checkpoint_every: int = 10
    seed: int = 0

    def __post_init__(self):
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")


DESK_PRESET: dict[str, Any] = {
    "n_template_points": 128,
    "n_search_points": 256,
    "feature_dim": 64,
    "template_seeds": 32,
    "search_seeds": 64,
    "radii": (0.6, 1.2),
    "use_abs_xyz": True,
    "n_proposals": 16,
    "batch_size": 8,
    "lr": 0.003,
    "lr_step": 25,
}
PRESETS = {"paper": {}, "desk": DESK_PRESET}


def _coerce(value: Any, default: Any):
    if isinstance(default, Enum):
        return type(default)(value)
    if isinstance(default, bool):
        if isinstance(value, str):
            return value.strip().lower() in ("1", "true", "yes", "on")
        return bool(value)
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split() if v]
        return tuple(value)
    return value


def split_overrides(values: dict[str, Any]) -> tuple[dict, dict]:
    track_keys = {f.name: f for f in fields(TrackerConfig)}
    train_keys = {f.name: f for f in fields(TrainConfig)}
    track, train = {}, {}
    tdef, rdef = TrackerConfig(), TrainConfig()
    for key, value in values.items():
        if key == "seed":
            track["seed"] = train["seed"] = int(value)
        elif key in track_keys:
            track[key] = _coerce(value, getattr(tdef, key))
        elif key in train_keys:
            train[key] = _coerce(value, getattr(rdef, key))
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return track, train


def resolve_preset(values: dict[str, Any]) -> dict[str, Any]:
    """Expand an optional ``preset`` key; explicit keys win over the preset."""
    values = dict(values)
    name = values.pop("preset", None)
    if name is None:
        return values
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return {**PRESETS[name], **values}


def build_configs(values: dict[str, Any] | None = None) -> tuple[TrackerConfig, TrainConfig]:
    try:
        track, train = split_overrides(resolve_preset(values or {}))
        return TrackerConfig(**track), TrainConfig(**train)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, overrides: dict[str, Any] | None = None) -> tuple[TrackerConfig, TrainConfig]:
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a flat key-value mapping")
    for key, value in raw.items():
        if isinstance(value, dict):
            raise ConfigError(f"{path}: key {key!r} is nested; the config must be flat")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_configs(raw)


def config_to_dict(*configs) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for cfg in configs:
        for key, value in dataclasses.asdict(cfg).items():
            if isinstance(value, Enum):
                value = value.value
            elif isinstance(value, tuple):
                value = list(value)
            out[key] = value
    return out
