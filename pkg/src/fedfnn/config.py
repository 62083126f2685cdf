"""Experiment configuration: dataclasses, YAML loading, validation and hashing."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .items import SCHEMES
from .strategies import CLIENT_STRATEGIES

RUNNABLE_STRATEGIES = CLIENT_STRATEGIES + ("gmf",)


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class DatasetConfig:
    path: str | None = None
    format: str = "tsv_uirt"
    # synthetic alternative to ``path``
    synthetic: dict | None = None


@dataclass
class GmfConfig:
    dim: int = 16
    negatives: int = 4
    epochs: int = 2
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 0
    emb_std: float = 0.01
    layer_std: float = 0.1


@dataclass
class GridConfig:
    hidden: list = field(default_factory=lambda: [[32], [64], [64, 32]])
    lr: list = field(default_factory=lambda: [1e-2, 1e-3])
    dropout: list = field(default_factory=lambda: [0.0, 0.2])


@dataclass
class FnnConfig:
    gamma: float = 0.1
    patience: int = 10
    epsilon: float = 0.01
    grid: GridConfig = field(default_factory=GridConfig)
    cv_folds: int = 5
    cross_validate: bool = True
    predictor_epochs: int = 50
    batch_size: int = 0
    standardize: bool = True
    output: str = "state"


@dataclass
class AvailabilityGroup:
    name: str
    fraction: float
    prob: float


@dataclass
class FedFastConfig:
    k: int = 10
    max_iters: int = 50


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    client_strategy: str = "fedfnn"
    item_strategy: str = "w1"
    sample_rate: float = 0.10
    rounds: int = 500
    eval_interval: int = 10
    checkpoints: list = field(default_factory=list)
    k: int = 10
    seeds: list = field(default_factory=lambda: [0])
    gmf: GmfConfig = field(default_factory=GmfConfig)
    fnn: FnnConfig = field(default_factory=FnnConfig)
    fedfast: FedFastConfig = field(default_factory=FedFastConfig)
    availability: list = field(default_factory=list)  # of AvailabilityGroup

    def validate(self) -> "ExperimentConfig":
        if self.client_strategy not in RUNNABLE_STRATEGIES:
            raise ConfigError("client_strategy", f"unknown strategy {self.client_strategy!r}; expected one of {RUNNABLE_STRATEGIES}")
        if self.item_strategy not in SCHEMES:
            raise ConfigError("item_strategy", f"unknown item strategy {self.item_strategy!r}; expected one of {SCHEMES}")
        if not 0.0 < self.sample_rate <= 1.0:
            raise ConfigError("sample_rate", f"must be in (0, 1], got {self.sample_rate}")
        if self.rounds < 0:
            raise ConfigError("rounds", "must be >= 0")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval", "must be >= 1")
        if self.k < 1:
            raise ConfigError("k", "must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds", "at least one seed is required")
        if (self.dataset.path is None) == (self.dataset.synthetic is None):
            raise ConfigError("dataset", "give exactly one of 'path' or 'synthetic'")
        if self.gmf.dim < 1:
            raise ConfigError("gmf.dim", "must be >= 1")
        if self.gmf.epochs < 0 or self.gmf.negatives < 0:
            raise ConfigError("gmf", "epochs and negatives must be >= 0")
        if self.gmf.lr <= 0:
            raise ConfigError("gmf.lr", "must be > 0")
        if self.fnn.patience < 1:
            raise ConfigError("fnn.patience", "must be >= 1")
        if self.fnn.gamma < 0:
            raise ConfigError("fnn.gamma", "must be >= 0")
        if self.fnn.output not in ("state", "delta"):
            raise ConfigError("fnn.output", "must be 'state' or 'delta'")
        if self.fnn.cv_folds < 2:
            raise ConfigError("fnn.cv_folds", "must be >= 2")
        if not (self.fnn.grid.hidden and self.fnn.grid.lr and self.fnn.grid.dropout):
            raise ConfigError("fnn.grid", "every grid axis needs at least one value")
        if self.fedfast.k < 1:
            raise ConfigError("fedfast.k", "must be >= 1")
        if self.availability:
            total = sum(g.fraction for g in self.availability)
            if abs(total - 1.0) > 1e-9:
                raise ConfigError("availability", f"group fractions must sum to 1, got {total}")
            for g in self.availability:
                if not 0.0 < g.prob <= 1.0:
                    raise ConfigError("availability", f"group {g.name!r} probability must be in (0, 1]")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes).validate()


_NESTED = {
    "dataset": DatasetConfig,
    "gmf": GmfConfig,
    "fnn": FnnConfig,
    "fedfast": FedFastConfig,
    "grid": GridConfig,
}


def _build(cls, data: dict, prefix: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(prefix or "config", "expected a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        where = f"{prefix}{key}"
        if key not in known:
            raise ConfigError(where, "unknown key")
        if key in _NESTED:
            kwargs[key] = _build(_NESTED[key], value or {}, f"{where}.")
        elif key == "availability":
            try:
                kwargs[key] = [AvailabilityGroup(**g) for g in (value or [])]
            except TypeError as exc:
                raise ConfigError(where, str(exc)) from None
        else:
            kwargs[key] = _coerce(known[key].type, value, where)
    return cls(**kwargs)


def _coerce(type_name: str, value, where: str):
    # YAML 1.1 reads "1e-3" as a string
    casts = {"float": float, "int": int}
    if type_name in casts and value is not None:
        if isinstance(value, bool):
            raise ConfigError(where, f"expected {type_name}, got {value!r}")
        try:
            cast = casts[type_name](value)
        except (TypeError, ValueError):
            raise ConfigError(where, f"expected {type_name}, got {value!r}") from None
        if type_name == "int" and cast != float(value):
            raise ConfigError(where, f"expected int, got {value!r}")
        return cast
    if type_name == "bool" and not isinstance(value, bool):
        raise ConfigError(where, f"expected true/false, got {value!r}")
    if type_name == "str" and not isinstance(value, str):
        raise ConfigError(where, f"expected a string, got {value!r}")
    return value


def config_from_dict(data: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data or {})
    try:
        cfg.seeds = [int(s) for s in cfg.seeds]
        cfg.checkpoints = [int(c) for c in cfg.checkpoints]
        cfg.fnn.grid.lr = [float(x) for x in cfg.fnn.grid.lr]
        cfg.fnn.grid.dropout = [float(x) for x in cfg.fnn.grid.dropout]
        cfg.fnn.grid.hidden = [[int(h) for h in (shape if isinstance(shape, list) else [shape])] for shape in cfg.fnn.grid.hidden]
    except (TypeError, ValueError) as exc:
        raise ConfigError("config", f"bad list value: {exc}") from None
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"not valid YAML: {exc}") from None
    except OSError as exc:
        raise ConfigError("config", str(exc)) from None
    return config_from_dict(data)
