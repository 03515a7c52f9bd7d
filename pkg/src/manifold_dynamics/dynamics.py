"""Instrumented training, trajectory logs and detection of the inversion epoch."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import optim
from .dataio import Dataset
from .geometry import MetricTriple, ZeroNormError, triple_from_hidden
from .network import MLP, forward_pass, loss_from_logits, predict_logits

METRICS = ("r_plus", "r_minus", "d")
# attainable span of each metric on the unit sphere: R^2 = 1 - |centroid|^2, |D| <= 2
METRIC_SPAN = {"r_plus": 1.0, "r_minus": 1.0, "d": 2.0}


class DivergenceError(FloatingPointError):
    pass


class ErrorLevelNotReached(LookupError):
    pass


@dataclass
class StopRule:
    """Stop once the training error has been zero for ``zero_error_patience`` epochs."""

    zero_error_patience: int | None = 50

    def should_stop(self, eps_tr: np.ndarray) -> bool:
        k = self.zero_error_patience
        if k is None or len(eps_tr) < k:
            return False
        return bool(np.all(eps_tr[-k:] == 0))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    eps_tr: float
    eps_test: float
    metrics: MetricTriple
    misclassified: np.ndarray  # sorted source indices


@dataclass
class TrajectoryLog:
    epochs: np.ndarray
    eps_tr: np.ndarray
    eps_test: np.ndarray
    r_plus: np.ndarray
    r_minus: np.ndarray
    d: np.ndarray
    loss: np.ndarray
    packed_misclassified: np.ndarray  # (n_records, ceil(P/8)) packbits rows
    source_index: np.ndarray  # (P,) the training set's source indices
    meta: dict = field(default_factory=dict)

    @property
    def n_train(self) -> int:
        return len(self.source_index)

    def __len__(self) -> int:
        return len(self.epochs)

    def metric(self, name: str) -> np.ndarray:
        if name not in METRICS:
            raise KeyError(name)
        return getattr(self, name)

    def position(self, epoch: int) -> int:
        pos = int(np.searchsorted(self.epochs, epoch))
        if pos >= len(self.epochs) or self.epochs[pos] != epoch:
            raise KeyError(f"epoch {epoch} not in log")
        return pos

    def misclassified_mask(self, epoch: int) -> np.ndarray:
        row = self.packed_misclassified[self.position(epoch)]
        return np.unpackbits(row, count=self.n_train).astype(bool)

    def misclassified(self, epoch: int) -> np.ndarray:
        """Sorted source indices misclassified at ``epoch``."""
        return np.sort(self.source_index[self.misclassified_mask(epoch)])

    def record(self, epoch: int) -> EpochRecord:
        i = self.position(epoch)
        return EpochRecord(
            int(self.epochs[i]), float(self.eps_tr[i]), float(self.eps_test[i]),
            MetricTriple(float(self.r_plus[i]), float(self.r_minus[i]), float(self.d[i])),
            self.misclassified(epoch),
        )

    @property
    def records(self) -> list[EpochRecord]:
        return [self.record(int(t)) for t in self.epochs]

    def reversed(self) -> "TrajectoryLog":
        """Time-reversed copy (epoch t becomes T - t); for testing symmetry."""
        T = int(self.epochs[-1])
        r = slice(None, None, -1)
        return TrajectoryLog(
            T - self.epochs[r], self.eps_tr[r], self.eps_test[r], self.r_plus[r],
            self.r_minus[r], self.d[r], self.loss[r], self.packed_misclassified[r],
            self.source_index, dict(self.meta),
        )

    @classmethod
    def from_arrays(cls, eps_tr, r_plus, r_minus, d, eps_test=None, misclassified=None,
                    source_index=None, epochs=None, meta=None) -> "TrajectoryLog":
        """Build a log from plain arrays; misclassified is a (T, P) bool matrix."""
        n = len(eps_tr)
        if misclassified is None:
            misclassified = np.zeros((n, 1 if source_index is None else len(source_index)), bool)
        misclassified = np.asarray(misclassified, dtype=bool)
        if source_index is None:
            source_index = np.arange(misclassified.shape[1])
        nan = np.full(n, np.nan)
        return cls(
            np.arange(n) if epochs is None else np.asarray(epochs),
            np.asarray(eps_tr, float), nan if eps_test is None else np.asarray(eps_test, float),
            np.asarray(r_plus, float), np.asarray(r_minus, float), np.asarray(d, float),
            nan.copy(), np.packbits(misclassified, axis=1), np.asarray(source_index), meta or {},
        )


def error_rate(pred: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(pred != labels)) if len(labels) else math.nan


def evaluate_error(model: MLP, ds: Dataset) -> float:
    return error_rate(predict_logits(forward_pass(model, ds.inputs).logits), ds.labels)


def train(model: MLP, train_set: Dataset, test_set: Dataset | None, opt_cfg: optim.OptimizerConfig,
          max_epochs: int, stop_rule: StopRule | None = None, layer: int = 1,
          meta: dict | None = None):
    """Train while logging errors, metrics and misclassified sets.

    A record is taken before the first update (epoch 0) and after every epoch.
    Returns ``(final_model, TrajectoryLog)``.
    """
    if max_epochs < 1:
        raise ValueError("max_epochs must be >= 1")
    if train_set.is_empty:
        raise ValueError("empty training set")
    if model.sizes[0] != train_set.n_features:
        raise ValueError(f"model expects {model.sizes[0]} inputs, data has {train_set.n_features}")
    stop_rule = stop_rule or StopRule()
    x, y = train_set.inputs, train_set.labels
    state = optim.init_state(model, opt_cfg)
    cols = {k: [] for k in ("eps_tr", "eps_test", "r_plus", "r_minus", "d", "loss")}
    packed, zero_norm_epochs = [], []

    for t in range(max_epochs + 1):
        fp = forward_pass(model, x)
        lval = loss_from_logits(fp.logits, y)
        if not np.isfinite(lval):
            raise DivergenceError(f"non-finite loss at epoch {t}")
        wrong = predict_logits(fp.logits) != y
        cols["eps_tr"].append(float(wrong.mean()))
        cols["loss"].append(lval)
        cols["eps_test"].append(evaluate_error(model, test_set) if test_set is not None else math.nan)
        try:
            tri = triple_from_hidden(fp.hidden[layer - 1], y)
            vals = (tri.r_plus, tri.r_minus, tri.d)
        except ZeroNormError:
            zero_norm_epochs.append(t)
            vals = (math.nan,) * 3
        except ValueError:  # one class absent
            vals = (math.nan,) * 3
        for k, v in zip(METRICS, vals):
            cols[k].append(v)
        packed.append(np.packbits(wrong))

        if t == max_epochs or stop_rule.should_stop(np.asarray(cols["eps_tr"])):
            break
        model, state, _ = optim.epoch(model, x, y, state, opt_cfg, epoch_index=t, fp=fp)

    info = dict(meta or {})
    info.update({"layer": layer, "zero_norm_epochs": zero_norm_epochs,
                 "stopped_at": t, "max_epochs": max_epochs})
    log = TrajectoryLog(
        np.arange(len(cols["eps_tr"])),
        *(np.asarray(cols[k]) for k in ("eps_tr", "eps_test", "r_plus", "r_minus", "d", "loss")),
        np.vstack(packed), train_set.source_index.copy(), info,
    )
    return model, log


def epoch_at_error(log: TrajectoryLog, eps: float) -> int:
    """First epoch whose training error is <= ``eps``."""
    hits = np.nonzero(log.eps_tr <= eps)[0]
    if len(hits) == 0:
        raise ErrorLevelNotReached(f"training error never reached {eps}")
    return int(log.epochs[hits[0]])


def prominence(series: np.ndarray, pos: int, kind: str) -> float:
    """Depth of a global minimum (or height of a maximum) below its lower flank.

    Zero when the extremum sits at either end of the series.
    """
    s = np.asarray(series, dtype=float)
    if kind == "max":
        s = -s
    if pos == 0 or pos == len(s) - 1:
        return 0.0
    left, right = np.nanmax(s[:pos]), np.nanmax(s[pos + 1:])
    return float(min(left, right) - s[pos])


@dataclass
class InversionReport:
    t_star_rplus: int
    t_star_rminus: int
    t_star_d: int
    eps_at: dict  # metric -> eps_tr at its t*
    phi: float
    stragglers: np.ndarray  # sorted source indices misclassified at t*(R+)
    prominence: dict  # metric -> prominence as a fraction of METRIC_SPAN
    interior: dict  # metric -> extremum strictly inside (0, T)
    relative_prominence: dict = field(default_factory=dict)  # fraction of the observed span
    min_prominence: float = 0.02

    @property
    def t_star(self) -> dict:
        return {"r_plus": self.t_star_rplus, "r_minus": self.t_star_rminus, "d": self.t_star_d}

    def qualified(self, metric: str, min_prominence: float | None = None) -> bool:
        thr = self.min_prominence if min_prominence is None else min_prominence
        return bool(self.interior[metric] and self.prominence[metric] >= thr)

    def all_qualified(self, min_prominence: float | None = None) -> bool:
        return all(self.qualified(m, min_prominence) for m in METRICS)

    @property
    def unconverged(self) -> bool:
        """True when any extremum sits on the boundary or fails the prominence guard."""
        return not self.all_qualified()

    @property
    def t_star_mean(self) -> float:
        return float(np.mean(list(self.t_star.values())))


def detect_inversion(log: TrajectoryLog, min_prominence: float = 0.02) -> InversionReport:
    """Global argmin of the radii and argmax of the distance; phi averages eps_tr there.

    An extremum counts as an inversion only if it is interior and its
    prominence reaches ``min_prominence`` of the metric's attainable span.
    """
    t_star, eps_at, prom, interior, rel = {}, {}, {}, {}, {}
    last = len(log) - 1
    for name in METRICS:
        s = log.metric(name)
        kind = "max" if name == "d" else "min"
        if np.all(np.isnan(s)):
            # e.g. zero-norm representations at every epoch: nothing to detect
            t_star[name], eps_at[name], interior[name] = 0, math.nan, False
            prom[name] = rel[name] = 0.0
            continue
        pos = int(np.nanargmax(s) if kind == "max" else np.nanargmin(s))
        span = float(np.nanmax(s) - np.nanmin(s))
        depth = prominence(s, pos, kind)
        t_star[name] = int(log.epochs[pos])
        eps_at[name] = float(log.eps_tr[pos])
        interior[name] = 0 < pos < last
        prom[name] = depth / METRIC_SPAN[name]
        rel[name] = depth / span if span > 0 else 0.0
    return InversionReport(
        t_star["r_plus"], t_star["r_minus"], t_star["d"], eps_at,
        float(np.mean(list(eps_at.values()))), log.misclassified(t_star["r_plus"]),
        prom, interior, rel, min_prominence,
    )


@dataclass
class ErrorCurve:
    eps_tr: np.ndarray
    epoch: np.ndarray
    r_plus: np.ndarray
    r_minus: np.ndarray
    d: np.ndarray


def reparameterize(log: TrajectoryLog) -> ErrorCurve:
    """Metrics as a step function of the training error.

    One point per distinct achieved error level, in decreasing order, each
    taken at the first epoch the error fell to that level or below.
    """
    levels = np.unique(log.eps_tr)[::-1]
    # running minimum: first epoch with eps_tr <= level
    running = np.minimum.accumulate(log.eps_tr)
    pos = np.array([int(np.argmax(running <= lv)) for lv in levels], dtype=int)
    return ErrorCurve(levels, log.epochs[pos], log.r_plus[pos], log.r_minus[pos], log.d[pos])
