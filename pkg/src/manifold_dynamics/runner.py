"""Single seeded training runs and the parameters that define them."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

from . import dynamics, network, optim
from .dataio import Dataset


@dataclass
class RunSpec:
    """Everything but the data and the seed needed to reproduce one training run."""

    hidden: tuple[int, ...] = (20,)
    activation: str = "tanh"
    slope: float = 0.1
    init_scheme: str = "uniform_fanin"
    init_scale: float = 1.0
    optimizer: optim.OptimizerConfig = field(default_factory=optim.OptimizerConfig)
    max_epochs: int = 300
    zero_error_patience: int | None = 50
    layer: int = 1
    min_prominence: float = 0.02

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("need at least one hidden layer of positive width")
        if self.activation not in network.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 1 <= self.layer <= len(self.hidden):
            raise ValueError(f"layer {self.layer} outside 1..{len(self.hidden)}")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")

    def sizes(self, n_inputs: int) -> list[int]:
        return [n_inputs, *self.hidden, 2]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["optimizer"]["betas"] = list(self.optimizer.betas)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def init_model(spec: RunSpec, n_inputs: int, seed: int) -> network.MLP:
    cfg = network.InitConfig(spec.init_scheme, spec.init_scale, seed)
    return network.init(spec.sizes(n_inputs), cfg, spec.activation, spec.slope)


def run_single(train_set: Dataset, spec: RunSpec, seed: int, test_set: Dataset | None = None):
    """Train one freshly initialised model; returns ``(model, log)``.

    SGD shuffles derive from the same seed unless the RunSpec optimizer fixes ``shuffle_seed``.
    """
    opt = spec.optimizer
    if opt.variant == "sgd" and opt.shuffle_seed == 0:
        opt = optim.OptimizerConfig(**{**asdict(opt), "shuffle_seed": seed})
    model = init_model(spec, train_set.n_features, seed)
    meta = {"seed": seed, "spec_digest": spec.digest(), "data_digest": train_set.digest()}
    return dynamics.train(
        model, train_set, test_set, opt, spec.max_epochs,
        dynamics.StopRule(spec.zero_error_patience), spec.layer, meta,
    )


def seeds_from_root(root: int, n: int) -> list[int]:
    """Sequential seeds starting at ``root``."""
    return list(range(root, root + n))


def run_many(train_set: Dataset, spec: RunSpec, seeds: Sequence[int], test_set: Dataset | None = None,
             threads: int = 1):
    """Independent runs, optionally spread over a process pool; order follows ``seeds``."""
    if threads <= 1 or len(seeds) <= 1:
        return [run_single(train_set, spec, s, test_set) for s in seeds]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(run_single, train_set, spec, s, test_set) for s in seeds]
        return [f.result() for f in futures]
