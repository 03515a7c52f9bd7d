"""Experiment configuration: YAML file -> validated dataclasses.

Schema (every block optional except ``experiment``)::

    experiment: trajectory            # see EXPERIMENTS
    dataset:  {source, root, P, chunk, noise_sigmas, test, cache}
    model:    {hidden, activation, slope, init_scheme, init_scale, layer}
    optimizer: {variant, learning_rate, momentum, weight_decay, decay_biases,
                batch_size, betas, eps, reduction}
    run:      {seeds, seed_root, max_epochs, zero_error_patience, min_prominence, output_dir}
    params:   experiment-specific settings (see README)
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .dataio import SOURCES
from .network import ACTIVATIONS, INIT_SCHEMES
from .optim import VARIANTS, OptimizerConfig
from .runner import RunSpec

EXPERIMENTS = (
    "trajectory", "optimizer-sweep", "subsample-sweep", "random-labels", "prune-retrain",
    "zscore", "noisy-test", "phi-scaling", "arch-sweep", "activation-sweep",
)


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class DatasetBlock:
    source: str = "mnist"
    root: str = "data/mnist"
    P: int = 8192
    chunk: int = 0
    noise_sigmas: list = field(default_factory=lambda: [0.0])
    test: bool = True
    cache: str | None = None


@dataclass
class ModelBlock:
    hidden: list = field(default_factory=lambda: [20])
    activation: str = "tanh"
    slope: float = 0.1
    init_scheme: str = "uniform_fanin"
    init_scale: float = 1.0
    layer: int = 1


@dataclass
class RunBlock:
    seeds: int = 20
    seed_root: int = 0
    max_epochs: int = 300
    zero_error_patience: int | None = 50
    min_prominence: float = 0.02
    output_dir: str = "runs"


@dataclass
class ExperimentConfig:
    experiment: str
    dataset: DatasetBlock = field(default_factory=DatasetBlock)
    model: ModelBlock = field(default_factory=ModelBlock)
    optimizer: dict = field(default_factory=dict)
    run: RunBlock = field(default_factory=RunBlock)
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def optimizer_config(self, overrides: dict | None = None) -> OptimizerConfig:
        return build_optimizer({**self.optimizer, **(overrides or {})}, "optimizer")

    def run_spec(self, **overrides) -> RunSpec:
        m, r = self.model, self.run
        kw = dict(
            hidden=tuple(m.hidden), activation=m.activation, slope=m.slope,
            init_scheme=m.init_scheme, init_scale=m.init_scale, layer=m.layer,
            optimizer=self.optimizer_config(), max_epochs=r.max_epochs,
            zero_error_patience=r.zero_error_patience, min_prominence=r.min_prominence,
        )
        kw.update(overrides)
        return RunSpec(**kw)

    @property
    def seeds(self) -> list[int]:
        return list(range(self.run.seed_root, self.run.seed_root + self.run.seeds))


def _block(cls, data, path: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(path, "expected a mapping")
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}", "unknown field")
    return cls(**data)


def build_optimizer(data: dict, path: str) -> OptimizerConfig:
    known = {f.name for f in fields(OptimizerConfig)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}", "unknown field")
    variant = data.get("variant", "gd")
    if variant not in VARIANTS:
        raise ConfigError(f"{path}.variant", f"unknown variant {variant!r}; choose from {VARIANTS}")
    try:
        return OptimizerConfig(**data)
    except (ValueError, TypeError) as exc:
        raise ConfigError(path, str(exc)) from None


def _check(cond: bool, path: str, msg: str):
    if not cond:
        raise ConfigError(path, msg)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    _check(cfg.experiment in EXPERIMENTS, "experiment",
           f"unknown experiment {cfg.experiment!r}; choose from {EXPERIMENTS}")
    d, m, r = cfg.dataset, cfg.model, cfg.run
    _check(d.source in SOURCES, "dataset.source", f"unknown source {d.source!r}")
    _check(isinstance(d.P, int) and d.P >= 2, "dataset.P", "must be an integer >= 2")
    _check(isinstance(d.chunk, int) and d.chunk >= 0, "dataset.chunk", "must be >= 0")
    _check(all(float(s) >= 0 for s in d.noise_sigmas), "dataset.noise_sigmas", "must be >= 0")
    _check(m.activation in ACTIVATIONS, "model.activation",
           f"unknown activation {m.activation!r}; choose from {ACTIVATIONS}")
    _check(m.init_scheme in INIT_SCHEMES, "model.init_scheme", f"unknown scheme {m.init_scheme!r}")
    _check(bool(m.hidden) and all(int(h) >= 1 for h in m.hidden), "model.hidden",
           "need at least one positive width")
    _check(1 <= m.layer <= len(m.hidden), "model.layer", "must index a hidden layer")
    _check(m.init_scale >= 0, "model.init_scale", "must be >= 0")
    _check(r.seeds >= 1, "run.seeds", "must be >= 1")
    _check(r.max_epochs >= 1, "run.max_epochs", "must be >= 1")
    build_optimizer(cfg.optimizer, "optimizer")
    return cfg


def from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a mapping")
    known = {f.name for f in fields(ExperimentConfig)}
    for key in data:
        if key not in known:
            raise ConfigError(key, "unknown field")
    if "experiment" not in data:
        raise ConfigError("experiment", "missing")
    try:
        cfg = ExperimentConfig(
            experiment=data["experiment"],
            dataset=_block(DatasetBlock, data.get("dataset"), "dataset"),
            model=_block(ModelBlock, data.get("model"), "model"),
            optimizer=dict(data.get("optimizer") or {}),
            run=_block(RunBlock, data.get("run"), "run"),
            params=dict(data.get("params") or {}),
        )
    except TypeError as exc:
        raise ConfigError("<root>", str(exc)) from None
    return validate(cfg)


def load(path) -> ExperimentConfig:
    with open(path) as fh:
        return from_dict(yaml.safe_load(fh))


def dump(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def save(cfg: ExperimentConfig, path) -> None:
    from .artifacts import atomic_write

    atomic_write(path, dump(cfg))
