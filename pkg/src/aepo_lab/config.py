"""Experiment configuration: one YAML document, all defaults in the dataclasses.

See ``configs/default.yaml`` for a complete example.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .env import EnvConfig
from .policy import PolicyParams
from .trainer import TrainConfig


class ConfigSchemaError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    n: int = 2000
    seed: int = 0


@dataclass(frozen=True)
class InitConfig:
    w_scale: float = 1.0
    count_decay: float = 1.0


@dataclass(frozen=True)
class EvalConfig:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    temperature: float = 1.0
    pass_k_values: tuple[int, ...] = (1, 2, 4)
    n_test: int = 1000
    label_trials: int = 16


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    init: InitConfig = field(default_factory=InitConfig)
    output_dir: str = "out"

    def validate(self) -> "ExperimentConfig":
        self.env.validate()
        self.train.validate()
        if not self.eval.seeds:
            raise ConfigSchemaError("eval.seeds must be nonempty")
        if self.dataset.n < 1:
            raise ConfigSchemaError("dataset.n must be >= 1")
        return self

    def with_seed(self, seed: Optional[int]) -> "ExperimentConfig":
        if seed is None:
            return self
        return replace(self, train=replace(self.train, seed=seed), dataset=replace(self.dataset, seed=seed))

    def init_policy(self) -> PolicyParams:
        return PolicyParams.init(self.env.feature_dim, self.train.n_max, self.init.w_scale, self.init.count_decay)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, data: Optional[Mapping[str, Any]], where: str):
    data = dict(data or {})
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigSchemaError(f"unknown keys in {where}: {sorted(unknown)}")
    for name, value in list(data.items()):
        if isinstance(value, list):
            data[name] = tuple(value)
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigSchemaError(f"{where}: {exc}") from None


def from_mapping(doc: Optional[Mapping[str, Any]]) -> ExperimentConfig:
    doc = dict(doc or {})
    sections = {"env": EnvConfig, "train": TrainConfig, "eval": EvalConfig, "dataset": DatasetConfig, "init": InitConfig}
    unknown = set(doc) - set(sections) - {"output_dir"}
    if unknown:
        raise ConfigSchemaError(f"unknown top-level keys: {sorted(unknown)}")
    kwargs = {name: _build(cls, doc.get(name), name) for name, cls in sections.items()}
    if "output_dir" in doc:
        kwargs["output_dir"] = str(doc["output_dir"])
    cfg = ExperimentConfig(**kwargs)
    try:
        return cfg.validate()
    except ValueError as exc:
        raise ConfigSchemaError(str(exc)) from None


def load_config(path: Optional[str | Path]) -> ExperimentConfig:
    if path is None:
        return from_mapping({})
    with open(path) as fh:
        return from_mapping(yaml.safe_load(fh))
