"""Training configuration documents (UTF-8 JSON) and their resolved form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional

from mmvp.errors import ConfigError, ConfigInvariantError, ConfigTypeError, UnknownKeyError
from mmvp.model import ModelConfig
from mmvp.storage import load_json


# Document key -> ModelConfig field.
MODEL_KEYS = {
    "H": "height",
    "W": "width",
    "C_in": "channels",
    "T": "t_observed",
    "T_prime": "t_future",
    "C_img": "c_img",
    "C_motion": "c_motion",
    "S": "downsample",
    "scales": "scales",
    "include_image": "include_image",
    "average_composition": "average_composition",
    "use_filter": "use_filter",
    "keep_full_scale": "keep_full_scale",
}

DEFAULTS = {
    "H": 64,
    "W": 64,
    "C_in": 1,
    "T": 10,
    "T_prime": 10,
    "C_img": 16,
    "C_motion": 32,
    "S": 4,
    "scales": [1, 0.5, 0.25, 0.125],
    "include_image": True,
    "average_composition": False,
    "use_filter": True,
    "keep_full_scale": False,
    "lr_max": 1e-3,
    "lr_min": 1e-6,
    "restart_period": 30,
    "batch_size": 4,
    "total_epochs": 30,
    "weight_decay": 1e-4,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
    "seed": 0,
    "checkpoint_every": 5,
    "train_data": None,
    "val_data": None,
}

_FLOAT_KEYS = {"lr_max", "lr_min", "weight_decay", "beta1", "beta2", "eps"}
_BOOL_KEYS = {"include_image", "average_composition", "use_filter", "keep_full_scale"}
_PATH_KEYS = {"train_data", "val_data"}


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lr_max: float = 1e-3
    lr_min: float = 1e-6
    restart_period: int = 30
    batch_size: int = 4
    total_epochs: int = 30
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 5
    train_data: Optional[str] = None
    val_data: Optional[str] = None

    def __post_init__(self):
        if not 0.0 <= self.lr_min < self.lr_max:
            raise ConfigInvariantError(f"need 0 <= lr_min < lr_max, got {self.lr_min} / {self.lr_max}")
        if self.restart_period < 1:
            raise ConfigInvariantError(f"restart_period must be >= 1, got {self.restart_period}")
        if self.batch_size < 1:
            raise ConfigInvariantError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.total_epochs < 0:
            raise ConfigInvariantError(f"total_epochs must be >= 0, got {self.total_epochs}")
        if self.checkpoint_every < 1:
            raise ConfigInvariantError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigInvariantError(f"betas must lie in [0, 1), got {self.beta1} / {self.beta2}")
        if self.eps <= 0 or self.weight_decay < 0:
            raise ConfigInvariantError("eps must be positive and weight_decay non-negative")
        if self.seed < 0:
            raise ConfigInvariantError(f"seed must be a non-negative integer, got {self.seed}")

    def to_document(self) -> dict:
        doc = {key: getattr(self.model, attr) for key, attr in MODEL_KEYS.items()}
        doc["scales"] = [1.0 / d for d in self.model.scales]
        for key in DEFAULTS:
            if key not in MODEL_KEYS:
                doc[key] = getattr(self, key)
        return doc


def _parse_scale(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ConfigTypeError("scales", "fractions such as 0.5 or \"1/2\"", value)
    try:
        frac = Fraction(value) if isinstance(value, str) else Fraction(value).limit_denominator(1 << 16)
    except (ValueError, ZeroDivisionError):
        raise ConfigTypeError("scales", "fractions such as 0.5 or \"1/2\"", value) from None
    if frac.numerator != 1:
        raise ConfigTypeError("scales", "unit fractions 1/d", value)
    return frac.denominator


def _check(key: str, value: Any) -> Any:
    if key == "scales":
        if not isinstance(value, list) or not value:
            raise ConfigTypeError(key, "a non-empty list", value)
        return tuple(_parse_scale(v) for v in value)
    if key in _BOOL_KEYS:
        if not isinstance(value, bool):
            raise ConfigTypeError(key, "a boolean", value)
        return value
    if key in _PATH_KEYS:
        if value is not None and not isinstance(value, str):
            raise ConfigTypeError(key, "a path string or null", value)
        return value
    if key in _FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigTypeError(key, "a number", value)
        return float(value)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigTypeError(key, "an integer", value)
    return value


def parse_config(doc: dict) -> TrainConfig:
    """Resolve a config document over DEFAULTS."""
    if not isinstance(doc, dict):
        raise ConfigTypeError("<document>", "a key-value object", doc)
    for key in doc:
        if key not in DEFAULTS:
            raise UnknownKeyError(key)

    merged = dict(DEFAULTS)
    merged.update(doc)
    values = {key: _check(key, value) for key, value in merged.items()}

    model = ModelConfig(**{attr: values[key] for key, attr in MODEL_KEYS.items()})
    rest = {key: value for key, value in values.items() if key not in MODEL_KEYS}
    return TrainConfig(model=model, **rest)


def load_config(path) -> TrainConfig:
    """Read a UTF-8 JSON config; an empty file yields the defaults."""
    if not Path(path).is_file():
        raise ConfigError(f"{path}: no such config file")
    try:
        doc = load_json(path, {})
    except json.JSONDecodeError as exc:
        raise ConfigTypeError("<document>", "valid JSON", f"{path}: {exc}") from exc
    return parse_config(doc)
