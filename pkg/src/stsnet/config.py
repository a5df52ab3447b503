"""Run configuration files.

A run config is one JSON object with four optional sections::

    {
      "synth": {"n_classes": 10, "per_class": 60, "length": 32, "delta": 2.0, "seed": 0},
      "model": {"lfe_c": 16, "mfe_c": 32, "enable_gating": true, ...},
      "train": {"epochs": 30, "batch_size": 32, "length": 32, ...},
      "paths": {"dataset": "data/synth.jsonl", "out": "runs/default"}
    }

Unknown keys are rejected. Model input dimensions (``m``, ``length``,
``n_features``, ``n_classes``) default to ``null`` and are filled in from
the dataset; if given they must agree with it.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import InputError, ParseError
from .model import ModelConfig
from .synth import SynthConfig
from .trainer import TrainConfig

DATA_DIMS = ("m", "length", "n_features", "n_classes")


@dataclass
class PathsConfig:
    dataset: str | None = None
    out: str = "runs"
    report: str | None = None
    metrics: str | None = None
    checkpoint: str | None = None

    def dataset_path(self) -> Path:
        return Path(self.dataset) if self.dataset else Path(self.out) / "dataset.jsonl"

    def resolve(self, key: str, default_name: str) -> Path:
        explicit = getattr(self, key)
        return Path(explicit) if explicit else Path(self.out) / default_name


def _model_defaults() -> dict[str, Any]:
    defaults = {}
    for f in fields(ModelConfig):
        if f.name in DATA_DIMS:
            defaults[f.name] = None
        else:
            value = f.default
            defaults[f.name] = list(value) if isinstance(value, tuple) else value
    return defaults


@dataclass
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: dict[str, Any] = field(default_factory=_model_defaults)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ParseError("run config must be a JSON object")
        unknown = set(doc) - {"synth", "model", "train", "paths"}
        if unknown:
            raise ParseError(f"unknown config sections: {sorted(unknown)}")
        model = _model_defaults()
        _reject_unknown("model", doc.get("model", {}), model)
        model.update(doc.get("model", {}))
        train = _build("train", TrainConfig, doc.get("train", {}))
        # validate now with stand-ins for dimensions the dataset will supply
        stand_in = {"length": train.length, "n_classes": 2}
        probe = {k: (stand_in.get(k) if v is None else v) for k, v in model.items()}
        _build("model", ModelConfig, {k: v for k, v in probe.items() if v is not None})
        return cls(
            synth=_build("synth", SynthConfig, doc.get("synth", {})),
            model=model,
            train=train,
            paths=_build("paths", PathsConfig, doc.get("paths", {})),
        )

    @classmethod
    def load(cls, path: str | os.PathLike | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}", exc.lineno) from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict[str, Any]:
        return {
            "synth": dataclasses.asdict(self.synth),
            "model": dict(self.model),
            "train": dataclasses.asdict(self.train),
            "paths": dataclasses.asdict(self.paths),
        }

    def model_config(self, m: int, length: int, n_features: int, n_classes: int, **overrides: Any) -> ModelConfig:
        """Combine the model section with dimensions taken from the data."""
        actual = {"m": m, "length": length, "n_features": n_features, "n_classes": n_classes}
        for key, value in actual.items():
            if self.model.get(key) is not None and self.model[key] != value:
                raise InputError(f"config model.{key}={self.model[key]} does not match the dataset ({value})")
        merged = {**self.model, **actual, **overrides}
        return ModelConfig(**merged)


def _reject_unknown(section: str, values: Any, allowed) -> None:
    if not isinstance(values, dict):
        raise ParseError(f"config section {section!r} must be an object")
    unknown = set(values) - set(allowed)
    if unknown:
        raise ParseError(f"unknown keys in {section!r}: {sorted(unknown)}")


def _build(section: str, cls, values: dict[str, Any]):
    _reject_unknown(section, values, {f.name for f in fields(cls)})
    try:
        return cls(**values)
    except TypeError as exc:
        raise ParseError(f"bad {section!r} section: {exc}") from None
