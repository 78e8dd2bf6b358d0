"""Experiment configuration: one JSON document plus ``key=value`` overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

from .raster import RasterConfig
from .world import SCENARIO_KINDS


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key path."""


def _mix(n: int) -> dict[str, int]:
    return {k: n for k in SCENARIO_KINDS}


@dataclass
class RasterSection:
    size: int = 64
    resolution: float = 0.25
    history_steps: int = 1

    def build(self) -> RasterConfig:
        return RasterConfig(self.size, self.resolution, self.history_steps)


@dataclass
class TrainingSection:
    epochs: int = 4
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "adaptive-moments"
    max_steps: int | None = None
    sample_stride: int = 10
    sample_offset: int = 0
    position_weight: float = 1.0
    yaw_weight: float = 1.0
    dataset: str | None = None


@dataclass
class EvalSection:
    scenarios: dict = field(default_factory=lambda: _mix(10))
    seed: int = 1
    policy: str = "model"
    checkpoint: str | None = None
    dataset: str | None = None
    method: str | None = None


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/default"
    raster: RasterSection = field(default_factory=RasterSection)
    model: dict = field(default_factory=lambda: {"kind": "ssn"})
    training: TrainingSection = field(default_factory=TrainingSection)
    scenarios: dict = field(default_factory=lambda: _mix(8))
    eval: EvalSection = field(default_factory=EvalSection)
    report_inputs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def model_dict(self) -> dict:
        """Model section with raster-derived defaults filled in."""
        d = dict(self.model)
        d.setdefault("kind", "ssn")
        d.setdefault("raster_size", self.raster.size)
        return d


def _check_type(path: str, value, default, annotation: str):
    if value is None and "None" in annotation:
        return value
    if isinstance(default, bool) or annotation == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
    elif annotation.startswith("int") or isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
    elif annotation.startswith("float") or isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        value = float(value)
    elif annotation.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
    elif annotation == "dict":
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object, got {value!r}")
    elif annotation == "list":
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
    return value


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or '<root>'}: expected an object, got {data!r}")
    obj = cls()
    known = {f.name: f for f in fields(cls)}
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in known:
            raise ConfigError(f"{path}: unknown key")
        default = getattr(obj, key)
        if is_dataclass(default):
            setattr(obj, key, _build(type(default), value, path + "."))
        else:
            setattr(obj, key, _check_type(path, value, default, str(known[key].type)))
    return obj


def _validate(cfg: ExperimentConfig) -> None:
    from .zoo import model_config_from_dict

    try:
        cfg.raster.build()
    except ValueError as exc:
        raise ConfigError(f"raster: {exc}") from exc
    try:
        model_config_from_dict(cfg.model_dict())
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from exc
    for section, mix in (("scenarios", cfg.scenarios), ("eval.scenarios", cfg.eval.scenarios)):
        for kind, count in mix.items():
            if kind not in SCENARIO_KINDS:
                raise ConfigError(f"{section}.{kind}: unknown scenario kind")
            if isinstance(count, bool) or not isinstance(count, int) or count < 0:
                raise ConfigError(f"{section}.{kind}: expected a non-negative integer, got {count!r}")
    if cfg.eval.policy not in ("model", "replay", "constant-velocity", "stationary"):
        raise ConfigError(f"eval.policy: unknown policy {cfg.eval.policy!r}")
    if cfg.training.optimizer not in ("sgd-momentum", "adaptive-moments"):
        raise ConfigError(f"training.optimizer: unknown optimizer {cfg.training.optimizer!r}")
    if cfg.training.batch_size < 1 or cfg.training.sample_stride < 1:
        raise ConfigError("training: batch_size and sample_stride must be >= 1")


def config_from_dict(data: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data, "")
    _validate(cfg)
    return cfg


def parse_override(text: str) -> tuple[list[str], Any]:
    if "=" not in text:
        raise ConfigError(f"{text}: override must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    data = copy.deepcopy(data)
    for text in overrides:
        path, value = parse_override(text)
        node = data
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"{'.'.join(path)}: {part} is not an object")
            node = child
        node[path[-1]] = value
    return data


def load_config(path: str | None = None, overrides: list[str] | None = None) -> ExperimentConfig:
    data: dict = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"<file>: cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"<file>: {path} is not valid JSON: {exc}") from exc
    return config_from_dict(apply_overrides(data, overrides or []))
