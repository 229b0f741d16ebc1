"""Experiment configuration: defaults, JSON file loading and validation."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import SubsetSpec
from .errors import ConfigError, InputError
from .network import DEFAULT_BATCH_SIZE, DEFAULT_DIMS, LossConfig
from .numerics import ACTIVATION_NAMES, Activation
from .pruner import PruneSchedule
from .scoring import Contribution, ImportanceConfig, Magnitude, Random, Wanda

METHODS = ("contribution", "magnitude", "wanda", "random")
DEFAULT_DATA_DIR = os.environ.get("BLINDPRUNE_DATA_DIR", "data/mnist")
# used when pruning-aware training is switched on without a value
DEFAULT_LAMBDA_RL1 = 1e-4


@dataclass
class ExperimentConfig:
    activation: str = "relu"
    leaky_slope: float = 0.01
    dims: tuple = DEFAULT_DIMS
    epochs: int = 10
    lr: float = 1e-3
    fine_tune_lr: float = 1e-4
    fine_tune_epochs: int = 1
    lambda_rl1: float = 0.0
    method: str = "contribution"
    alpha: float = 1.0
    beta: float = 1e-7
    eps: float = 1e-4  # much smaller and beta/eps swamps the mean for zero-variance weights
    layer_factor: bool = True
    layer_factor_base: float = 2.0
    layer_order: str = "input"
    data_fraction: float = 0.5
    target: float = 0.5
    per_iter: float = 0.25
    batch_size: int = DEFAULT_BATCH_SIZE
    seed: int = 0
    resample_subset: bool = False
    data_dir: str = DEFAULT_DATA_DIR
    out_dir: str = "runs/default"
    cache_dir: str = None  # baseline checkpoints; defaults to <out_dir>/../baselines
    checkpoint: str = None  # start from this trained model instead of training

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.validate()

    def validate(self):
        def check(key, ok, message):
            if not ok:
                raise ConfigError(key, message)

        check("activation", self.activation.replace("-", "_") in ACTIVATION_NAMES[1:],
              f"unknown activation {self.activation!r}")
        check("method", self.method in METHODS, f"must be one of {', '.join(METHODS)}")
        for key in ("lr", "fine_tune_lr"):
            check(key, getattr(self, key) > 0, "must be > 0")
        for key in ("epochs", "fine_tune_epochs"):
            check(key, getattr(self, key) >= 0, "must be >= 0")
        check("batch_size", self.batch_size >= 1, "must be >= 1")
        check("lambda_rl1", self.lambda_rl1 >= 0, "must be >= 0")
        check("data_fraction", 0 < self.data_fraction <= 1, "must be in (0, 1]")
        check("target", 0 < self.target < 1, "must be in (0, 1)")
        check("per_iter", 0 < self.per_iter <= 1, "must be in (0, 1]")
        check("eps", self.eps > 0, "must be > 0")
        check("layer_order", self.layer_order in ("input", "output"), "must be input or output")
        check("dims", len(self.dims) >= 2 and min(self.dims) > 0, "need >= 2 positive sizes")
        try:
            self.hidden_activation()
        except InputError as exc:
            raise ConfigError("leaky_slope", str(exc)) from exc

    def hidden_activation(self):
        name = self.activation.replace("-", "_")
        if name == "leaky_relu":
            return Activation(name, self.leaky_slope)
        return Activation(name)

    def loss(self):
        return LossConfig(self.lambda_rl1)

    def schedule(self):
        return PruneSchedule(self.target, self.per_iter)

    def importance(self):
        return ImportanceConfig(self.alpha, self.beta, self.eps, self.layer_factor,
                                self.layer_factor_base, self.layer_order)

    def scorer(self):
        subset = SubsetSpec(self.data_fraction, self.seed)
        if self.method == "contribution":
            return Contribution(self.importance(), subset)
        if self.method == "wanda":
            return Wanda(subset)
        if self.method == "magnitude":
            return Magnitude()
        return Random(self.seed)

    def method_label(self):
        names = {"contribution": "Ours", "wanda": "Wanda", "magnitude": "Magnitude",
                 "random": "Random"}
        label = names[self.method]
        if self.method in ("contribution", "wanda"):
            label += f" ({self.data_fraction * 100:g}%)"
        return label

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["dims"] = list(self.dims)
        return d

    def write(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def config_fields():
    return {f.name for f in dataclasses.fields(ExperimentConfig)}


def from_dict(values: dict, base: ExperimentConfig = None) -> ExperimentConfig:
    known = config_fields()
    for key in values:
        if key not in known:
            raise ConfigError(key, "unknown configuration key")
    merged = (base or ExperimentConfig()).to_dict()
    merged.update(values)
    try:
        return ExperimentConfig(**merged)
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from exc


def load_config(path, overrides: dict = None) -> ExperimentConfig:
    """Read a JSON config file; ``overrides`` (e.g. CLI flags) win over file values."""
    try:
        values = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    if not isinstance(values, dict):
        raise ConfigError("config", "top level must be an object")
    values.update(overrides or {})
    return from_dict(values)
