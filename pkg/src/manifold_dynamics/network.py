"""Fully connected classifier with hand-written backpropagation.

Two output units; unit 0 stands for label +1 and unit 1 for label -1. Hidden
layers share one activation, the read-out layer is affine. Everything runs in
float64.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

ACTIVATIONS = ("tanh", "relu", "leaky_relu", "silu", "identity")
INIT_SCHEMES = ("uniform_fanin", "he", "xavier")
CHECKPOINT_FORMAT = "manifold-dynamics-mlp/1"


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def activate(kind: str, a: np.ndarray, slope: float = 0.1) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(a)
    if kind == "relu":
        return np.maximum(a, 0.0)
    if kind == "leaky_relu":
        return np.where(a > 0, a, slope * a)
    if kind == "silu":
        return a * _sigmoid(a)
    if kind == "identity":
        return a
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(kind: str, a: np.ndarray, out: np.ndarray, slope: float = 0.1) -> np.ndarray:
    """Derivative of the activation at pre-activation ``a`` (``out`` = f(a))."""
    if kind == "tanh":
        return 1.0 - out * out
    if kind == "relu":
        return (a > 0).astype(np.float64)
    if kind == "leaky_relu":
        return np.where(a > 0, 1.0, slope)
    if kind == "silu":
        s = _sigmoid(a)
        return s * (1.0 + a * (1.0 - s))
    if kind == "identity":
        return np.ones_like(a)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class InitConfig:
    scheme: str = "uniform_fanin"
    variance_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in INIT_SCHEMES:
            raise ValueError(f"unknown init scheme {self.scheme!r}")
        if self.variance_scale < 0:
            raise ValueError("variance_scale must be >= 0")


@dataclass
class MLP:
    weights: list[np.ndarray]  # each (fan_out, fan_in)
    biases: list[np.ndarray]
    activation: str = "tanh"
    slope: float = 0.1

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {i}: weight {w.shape} vs bias {b.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i} does not chain onto layer {i - 1}")
        if self.weights[-1].shape[0] != 2:
            raise ValueError("the read-out layer must have 2 outputs")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_hidden_layers(self) -> int:
        return len(self.weights) - 1

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in the fixed order W1, c1, W2, c2, ..., V, b."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "MLP":
        return MLP(list(params[0::2]), list(params[1::2]), self.activation, self.slope)

    def copy(self) -> "MLP":
        return self.with_params([p.copy() for p in self.params()])


def init(sizes: Sequence[int], cfg: InitConfig | None = None, activation: str = "tanh",
         slope: float = 0.1) -> MLP:
    """Random model for layer sizes ``(N, H1, ..., 2)``.

    ``uniform_fanin`` draws every weight and bias of a layer from
    U(-g/sqrt(n), g/sqrt(n)), n being the layer's fan-in and g the variance scale.
    """
    cfg = cfg or InitConfig()
    sizes = list(sizes)
    if len(sizes) < 2:
        raise ValueError("architecture needs at least an input and an output size")
    if any(s < 1 for s in sizes):
        raise ValueError("layer sizes must be positive")
    if sizes[-1] != 2:
        raise ValueError("output size must be 2")
    rng = np.random.default_rng(cfg.seed)
    g = cfg.variance_scale
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        if cfg.scheme == "uniform_fanin":
            w = rng.uniform(-bound, bound, (fan_out, fan_in))
        elif cfg.scheme == "he":
            w = rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
        else:
            a = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-a, a, (fan_out, fan_in))
        b = rng.uniform(-bound, bound, fan_out)
        weights.append(g * w)
        biases.append(g * b)
    return MLP(weights, biases, activation, slope)


class ForwardPass(NamedTuple):
    logits: np.ndarray  # (P, 2)
    hidden: list  # post-activations per hidden layer, (P, H_l)
    pre: list  # pre-activations per hidden layer


def forward_pass(m: MLP, x: np.ndarray) -> ForwardPass:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != m.sizes[0]:
        raise ValueError(f"expected inputs of dimension {m.sizes[0]}, got shape {x.shape}")
    a_prev, hidden, pre = x, [], []
    for w, b in zip(m.weights[:-1], m.biases[:-1]):
        a = a_prev @ w.T + b
        a_prev = activate(m.activation, a, m.slope)
        pre.append(a)
        hidden.append(a_prev)
    logits = a_prev @ m.weights[-1].T + m.biases[-1]
    return ForwardPass(logits, hidden, pre)


def forward(m: MLP, x: np.ndarray):
    """Logits and per-layer hidden activations for one input or a batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        fp = forward_pass(m, x[None, :])
        return fp.logits[0], [h[0] for h in fp.hidden]
    fp = forward_pass(m, x)
    return fp.logits, fp.hidden


def labels_to_class(labels) -> np.ndarray:
    return (1 - np.asarray(labels, dtype=np.int64)) // 2


def predict_logits(logits: np.ndarray) -> np.ndarray:
    # np.argmax keeps the first maximum, so ties go to unit 0, i.e. label +1
    return 1 - 2 * np.argmax(np.atleast_2d(logits), axis=1)


def predict(m: MLP, x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    out = predict_logits(forward_pass(m, np.atleast_2d(x)).logits)
    return int(out[0]) if x.ndim == 1 else out


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_from_logits(logits: np.ndarray, labels) -> float:
    cls = labels_to_class(labels)
    return float(-log_softmax(logits)[np.arange(len(cls)), cls].sum())


def loss(m: MLP, x: np.ndarray, labels) -> float:
    """Summed cross-entropy over the batch."""
    x = np.atleast_2d(x)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    return loss_from_logits(forward_pass(m, x).logits, labels)


def backward(m: MLP, x: np.ndarray, fp: ForwardPass, labels, scale: float = 1.0) -> list[np.ndarray]:
    """Gradient of ``scale`` times the summed loss, reusing a forward pass."""
    cls = labels_to_class(labels)
    logp = log_softmax(fp.logits)
    delta = np.exp(logp)
    delta[np.arange(len(cls)), cls] -= 1.0
    if scale != 1.0:
        delta *= scale
    grads: list[np.ndarray] = []
    n_layers = len(m.weights)
    for layer in range(n_layers - 1, -1, -1):
        below = fp.hidden[layer - 1] if layer > 0 else x
        grads.append(delta.sum(axis=0))
        grads.append(delta.T @ below)
        if layer > 0:
            delta = (delta @ m.weights[layer]) * activation_grad(
                m.activation, fp.pre[layer - 1], fp.hidden[layer - 1], m.slope
            )
    grads.reverse()
    return grads


def gradients(m: MLP, x: np.ndarray, labels, reduction: str = "sum") -> list[np.ndarray]:
    """Exact loss gradient, ordered like ``m.params()``.

    ``reduction="mean"`` divides by the batch size.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")
    scale = 1.0 / x.shape[0] if reduction == "mean" else 1.0
    return backward(m, x, forward_pass(m, x), labels, scale)


def hidden_representation(m: MLP, x: np.ndarray, layer: int = 1) -> np.ndarray:
    """Activations of hidden layer ``layer`` (1-based)."""
    if not 1 <= layer <= m.n_hidden_layers:
        raise IndexError(f"layer {layer} outside 1..{m.n_hidden_layers}")
    x = np.asarray(x, dtype=np.float64)
    fp = forward_pass(m, np.atleast_2d(x))
    h = fp.hidden[layer - 1]
    return h[0] if x.ndim == 1 else h


def save_model(m: MLP, path) -> None:
    meta = {"format": CHECKPOINT_FORMAT, "sizes": m.sizes,
            "activation": m.activation, "slope": m.slope}
    arrays = {f"p{i}": p for i, p in enumerate(m.params())}
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)
    tmp.replace(path)


def load_model(path) -> MLP:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {meta.get('format')!r}")
        n = 2 * (len(meta["sizes"]) - 1)
        params = [z[f"p{i}"] for i in range(n)]
    return MLP(params[0::2], params[1::2], meta["activation"], meta["slope"])
