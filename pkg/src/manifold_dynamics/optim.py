"""Update rules: plain GD, momentum, weight decay, minibatch SGD and Adam."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import MLP, backward, forward_pass

VARIANTS = ("gd", "gd_momentum", "gd_weight_decay", "sgd", "adam")


@dataclass
class OptimizerConfig:
    variant: str = "gd"
    learning_rate: float = 0.2
    momentum: float = 0.0
    weight_decay: float = 0.0
    decay_biases: bool = True
    batch_size: int | None = None  # sgd only
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    shuffle_seed: int = 0
    reduction: str = "mean"

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown optimizer variant {self.variant!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.variant == "sgd" and (self.batch_size is None or self.batch_size < 1):
            raise ValueError("sgd needs batch_size >= 1")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"unknown reduction {self.reduction!r}")

    @property
    def stateful(self) -> bool:
        return self.variant in ("gd_momentum", "adam")


@dataclass
class OptimizerState:
    velocity: list | None = None
    m: list | None = None
    v: list | None = None
    step: int = 0


def init_state(model: MLP, cfg: OptimizerConfig) -> OptimizerState:
    zeros = lambda: [np.zeros_like(p) for p in model.params()]
    if cfg.variant == "gd_momentum":
        return OptimizerState(velocity=zeros())
    if cfg.variant == "adam":
        return OptimizerState(m=zeros(), v=zeros())
    return OptimizerState()


def step(model: MLP, grads, state: OptimizerState, cfg: OptimizerConfig):
    """One parameter update; returns new (model, state) without touching the inputs."""
    params = model.params()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ValueError("gradient shapes do not match the model")
    lr = cfg.learning_rate
    if cfg.variant in ("gd", "sgd"):
        new = [p - lr * g for p, g in zip(params, grads)]
        return model.with_params(new), OptimizerState(step=state.step + 1)

    if cfg.variant == "gd_weight_decay":
        new = []
        for k, (p, g) in enumerate(zip(params, grads)):
            decay = cfg.weight_decay if (k % 2 == 0 or cfg.decay_biases) else 0.0
            new.append(p - lr * (g + decay * p))
        return model.with_params(new), OptimizerState(step=state.step + 1)

    if cfg.variant == "gd_momentum":
        if state.velocity is None:
            raise ValueError("momentum state is not initialised")
        vel = [cfg.momentum * v + g for v, g in zip(state.velocity, grads)]
        new = [p - lr * v for p, v in zip(params, vel)]
        return model.with_params(new), OptimizerState(velocity=vel, step=state.step + 1)

    # adam
    if state.m is None or state.v is None:
        raise ValueError("adam state is not initialised")
    b1, b2 = cfg.betas
    t = state.step + 1
    m1 = [b1 * m + (1 - b1) * g for m, g in zip(state.m, grads)]
    m2 = [b2 * v + (1 - b2) * g * g for v, g in zip(state.v, grads)]
    c1, c2 = 1 - b1**t, 1 - b2**t
    new = [p - lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps) for p, m, v in zip(params, m1, m2)]
    return model.with_params(new), OptimizerState(m=m1, v=m2, step=t)


def _scale(cfg: OptimizerConfig, n: int) -> float:
    return 1.0 / n if cfg.reduction == "mean" else 1.0


def epoch_order(cfg: OptimizerConfig, n: int, epoch_index: int) -> np.ndarray:
    """Example order for one SGD pass, derived from (shuffle_seed, epoch)."""
    rng = np.random.default_rng([cfg.shuffle_seed, epoch_index])
    return rng.permutation(n)


def epoch(model: MLP, inputs: np.ndarray, labels: np.ndarray, state: OptimizerState,
          cfg: OptimizerConfig, epoch_index: int = 0, fp=None):
    """One full pass over the data.

    Full-batch variants take a single step; ``fp`` may carry a forward pass of
    ``model`` on ``inputs`` already computed by the caller. Returns
    ``(model, state, stats)``.
    """
    n = len(labels)
    if n == 0:
        raise ValueError("empty dataset")
    if cfg.variant != "sgd":
        fp = fp if fp is not None else forward_pass(model, inputs)
        grads = backward(model, inputs, fp, labels, _scale(cfg, n))
        model, state = step(model, grads, state, cfg)
        return model, state, {"steps": 1}

    bs = min(cfg.batch_size, n)
    order = epoch_order(cfg, n, epoch_index) if bs < n else np.arange(n)
    steps = 0
    for lo in range(0, n, bs):
        idx = order[lo:lo + bs]
        xb, yb = inputs[idx], labels[idx]
        grads = backward(model, xb, forward_pass(model, xb), yb, _scale(cfg, len(idx)))
        model, state = step(model, grads, state, cfg)
        steps += 1
    return model, state, {"steps": steps}
