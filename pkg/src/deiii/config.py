"""Run configuration: a JSON document with model/train/data/output sections.

Every section rejects unknown keys.  Defaults::

    model   see ModelConfig (desk scale: dim 64, 4 heads, blocks 3/3/2, kernel 3)
    train   lr 1e-3, weight_decay 0.0, epochs 20, batch_size 32, patience 5,
            min_delta 1e-3 (validation-loss tie-break margin), seed 0, precision "f64", monitor "best" (or a head name)
    data    root null, synth null (a SynthSpec dict)
    output  "runs/default"
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data.synth import SynthSpec
from .model import HEADS, ModelConfig


class ConfigError(ValueError):
    pass


def _strict(cls, d: dict, section: str):
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    return cls(**d)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.0
    epochs: int = 20
    batch_size: int = 32
    patience: int = 5
    min_delta: float = 1e-3
    seed: int = 0
    precision: str = "f64"
    monitor: str = "best"

    def validate(self) -> None:
        if self.lr < 0 or self.weight_decay < 0 or self.min_delta < 0:
            raise ConfigError("lr, weight_decay and min_delta must be non-negative")
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1 and patience >= 1 are required")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.monitor != "best" and self.monitor not in HEADS:
            raise ConfigError(f"monitor must be 'best' or one of {HEADS}")


@dataclass
class DataConfig:
    root: str | None = None
    synth: dict | None = None


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output: str = "runs/default"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {"model", "train", "data", "output"}
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        try:
            model = ModelConfig.from_dict(d.get("model", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        cfg = cls(
            model=model,
            train=_strict(TrainConfig, d.get("train", {}), "train"),
            data=_strict(DataConfig, d.get("data", {}), "data"),
            output=d.get("output", "runs/default"),
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw)

    def synth_spec(self) -> SynthSpec | None:
        if self.data.synth is None:
            return None
        try:
            return SynthSpec.from_dict(self.data.synth)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def validate(self) -> None:
        try:
            self.model.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.train.validate()
        spec = self.synth_spec()
        if spec is not None:
            try:
                spec.validate()
            except ValueError as exc:
                raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        spec = self.synth_spec()
        return {
            "model": self.model.to_dict(),
            "train": asdict(self.train),
            "data": {"root": self.data.root, "synth": None if spec is None else spec.to_dict()},
            "output": self.output,
        }

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
