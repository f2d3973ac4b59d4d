"""Run configuration: defaults, JSON files, dotted-key overrides, echoing.

The effective configuration of every command is serialized into the output
directory before any work happens, so a run can be reproduced from its own
artifacts. Unknown keys, in files or flags, are rejected by name.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .losses import LossConfig
from .scenes import SceneConfig
from .training import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    patch_size: int = 128
    forest_cover_min: float = 0.2
    test_fraction: float = 0.5
    val_fraction: float = 0.1
    labeled_fraction: float = 1.0
    augment_multiplier: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


_SECTIONS = {"scene": SceneConfig, "data": DataConfig, "train": TrainConfig}


def _build_dataclass(cls, values: dict, prefix: str):
    field_types = {f.name: f for f in dataclasses.fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, value in values.items():
        if key not in field_types:
            raise ConfigError(f"unknown config field {prefix}{key!r}")
        if key == "loss":
            if not isinstance(value, dict):
                raise ConfigError(f"{prefix}loss must be an object")
            value = _build_dataclass(LossConfig, value, prefix=f"{prefix}loss.")
        elif key == "height_range":
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config near {prefix or 'top level'}: {exc}") from exc


def config_from_dict(payload: dict) -> RunConfig:
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a JSON object")
    sections: dict[str, Any] = {}
    for key, value in payload.items():
        if key not in _SECTIONS:
            raise ConfigError(f"unknown config section {key!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"config section {key!r} must be an object")
        sections[key] = _build_dataclass(_SECTIONS[key], value, prefix=f"{key}.")
    return RunConfig(**sections)


def config_to_dict(config: RunConfig) -> dict:
    payload = dataclasses.asdict(config)
    payload["scene"]["height_range"] = list(payload["scene"]["height_range"])
    return payload


def apply_override(payload: dict, dotted_key: str, raw_value: str) -> None:
    """Set ``payload['a']['b']... = parsed(raw_value)`` for key ``a.b....``."""
    parts = dotted_key.split(".")
    node = payload
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config field {dotted_key!r}")
        node = node[part]
    leaf = parts[-1]
    if leaf not in node:
        raise ConfigError(f"unknown config field {dotted_key!r}")
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    node[leaf] = value


def load_run_config(
    path: str | Path | None = None,
    overrides: list[tuple[str, str]] | None = None,
) -> RunConfig:
    payload = config_to_dict(RunConfig())
    if path is not None:
        try:
            file_payload = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if isinstance(file_payload, dict):
            file_payload.pop("invocation", None)  # echoed configs are reloadable
        config_from_dict(file_payload)  # validate names before merging
        _deep_merge(payload, file_payload)
    for key, value in overrides or []:
        apply_override(payload, key, value)
    return config_from_dict(payload)


def _deep_merge(base: dict, update: dict) -> None:
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_merge(base[key], value)
        else:
            base[key] = value


def config_hash(config: RunConfig) -> str:
    canon = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def echo_config(config: RunConfig, out_dir: str | Path, invocation: dict | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = config_to_dict(config)
    if invocation:
        payload["invocation"] = invocation
    path = out_dir / "config.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path
