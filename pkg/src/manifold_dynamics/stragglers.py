"""Straggler sets, their conservation across runs, and pruned retraining."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import dataio, dynamics
from .dataio import Dataset
from .dynamics import InversionReport, TrajectoryLog
from .geometry import MetricTriple
from .runner import RunSpec, run_single

AT_TSTAR = "t*"


def resolve_epoch(log: TrajectoryLog, at, report: InversionReport | None = None) -> int:
    """Epoch designated by ``at``: ``"t*"``, ``("epoch", t)`` or an error level."""
    if isinstance(at, str):
        if at != AT_TSTAR:
            raise ValueError(f"unknown position {at!r}")
        report = report or dynamics.detect_inversion(log)
        return report.t_star_rplus
    if isinstance(at, tuple):
        kind, value = at
        if kind != "epoch":
            raise ValueError(f"unknown position kind {kind!r}")
        log.position(int(value))
        return int(value)
    return dynamics.epoch_at_error(log, float(at))


def straggler_set(log: TrajectoryLog, at=AT_TSTAR, report: InversionReport | None = None) -> np.ndarray:
    """Misclassified source indices at an epoch, error level or the inversion epoch."""
    return log.misclassified(resolve_epoch(log, at, report))


def overlap(a, b) -> int:
    return len(np.intersect1d(np.asarray(a), np.asarray(b), assume_unique=True))


def null_overlaps(size0: int, size1: int, population: int, n_draws: int, rng) -> np.ndarray:
    """Overlaps of pairs of uniformly random subsets of the given sizes."""
    rng = np.random.default_rng(rng)
    out = np.empty(n_draws, dtype=np.int64)
    for i in range(n_draws):
        a = rng.choice(population, size0, replace=False)
        b = rng.choice(population, size1, replace=False)
        out[i] = len(np.intersect1d(a, b, assume_unique=True))
    return out


@dataclass
class OverlapStats:
    m_samples: np.ndarray  # one overlap per run pair
    null_samples: np.ndarray
    sizes: np.ndarray  # (n_pairs, 2) straggler-set sizes
    population: int

    @property
    def mean_m(self) -> float:
        return float(np.mean(self.m_samples))

    @property
    def sigma_m(self) -> float:
        return float(np.std(self.m_samples, ddof=1)) if len(self.m_samples) > 1 else math.nan

    @property
    def mean_null(self) -> float:
        return float(np.mean(self.null_samples))

    @property
    def sigma_null(self) -> float:
        return float(np.std(self.null_samples, ddof=1))

    @property
    def analytic_null_mean(self) -> float:
        """Hypergeometric mean |S0||S1|/P averaged over the pairs."""
        return float(np.mean(self.sizes[:, 0] * self.sizes[:, 1]) / self.population)

    @property
    def mean_size(self) -> float:
        return float(np.mean(self.sizes))

    @property
    def degenerate(self) -> bool:
        return not self.sigma_m > 0

    @property
    def z(self) -> float:
        """(<M> - <M_null>) / sigma_M; infinite when sigma_M vanishes."""
        gap = self.mean_m - self.mean_null
        if self.degenerate:
            return math.copysign(math.inf, gap) if gap else math.nan
        return gap / self.sigma_m


def overlap_stats(pairs: Sequence[tuple], population: int, n_null: int = 10_000, seed=0) -> OverlapStats:
    """Observed overlaps of set pairs plus a size-matched hypergeometric null.

    Null draws are spread evenly over the pairs so each pair's sizes are matched.
    """
    if len(pairs) < 1:
        raise ValueError("need at least one pair")
    rng = np.random.default_rng(seed)
    sizes = np.array([(len(a), len(b)) for a, b in pairs], dtype=np.int64)
    m = np.array([overlap(a, b) for a, b in pairs], dtype=np.int64)
    per_pair = np.full(len(pairs), n_null // len(pairs))
    per_pair[: n_null % len(pairs)] += 1
    null = np.concatenate([
        null_overlaps(int(s0), int(s1), population, int(k), rng)
        for (s0, s1), k in zip(sizes, per_pair)
    ])
    return OverlapStats(m, null, sizes, population)


def pair_logs(logs: Sequence[TrajectoryLog]) -> list[tuple[TrajectoryLog, TrajectoryLog]]:
    """Consecutive runs (0,1), (2,3), ... form the pairs."""
    return [(logs[i], logs[i + 1]) for i in range(0, len(logs) - 1, 2)]


def overlap_from_logs(logs: Sequence[TrajectoryLog], at=AT_TSTAR, n_null: int = 10_000,
                      seed=0) -> OverlapStats:
    if len(logs) < 4:
        raise ValueError("need at least two run pairs")
    pairs = [(straggler_set(a, at), straggler_set(b, at)) for a, b in pair_logs(logs)]
    population = logs[0].n_train
    st = overlap_stats(pairs, population, n_null, seed)
    if st.degenerate:
        warnings.warn("overlap standard deviation is zero; z is not finite", RuntimeWarning,
                      stacklevel=2)
    return st


def overlap_experiment(dataset: Dataset, spec: RunSpec, n_pairs: int, at=AT_TSTAR,
                       seeds: Sequence[int] | None = None, n_null: int = 10_000):
    """Train ``n_pairs`` independent run pairs and compare their straggler sets."""
    if n_pairs < 2:
        raise ValueError("n_pairs must be >= 2")
    seeds = list(seeds) if seeds is not None else list(range(2 * n_pairs))
    logs = [run_single(dataset, spec, s)[1] for s in seeds[: 2 * n_pairs]]
    return overlap_from_logs(logs, at, n_null, seed=seeds[0]), logs


@dataclass
class ZPoint:
    eps_tr: float | str
    stats: OverlapStats

    @property
    def z(self) -> float:
        return self.stats.z


def zscore_curve(logs: Sequence[TrajectoryLog], error_grid: Sequence[float], n_null: int = 10_000,
                 include_tstar: bool = True, seed=0) -> list[ZPoint]:
    """z at each error level (and at each run's own inversion epoch)."""
    grid: list = list(error_grid)
    if include_tstar:
        grid = [AT_TSTAR] + grid
    return [ZPoint(g, overlap_from_logs(logs, g, n_null, seed)) for g in grid]


# ----------------------------------------------------------------------------
# pruned retraining


@dataclass
class PruneCurvePoint:
    eps_tr_target: float | str
    mode: str
    removed_count: list  # per retraining run
    final_metrics: list  # MetricTriple at the last epoch, per run
    eps_test: dict  # noise sigma -> list of test errors at convergence, per run
    reports: list  # InversionReport per run
    flags: list = field(default_factory=list)

    @property
    def metrics(self) -> MetricTriple:
        arr = np.array([(m.r_plus, m.r_minus, m.d) for m in self.final_metrics])
        return MetricTriple(*arr.mean(axis=0))

    def mean_test(self, sigma: float = 0.0) -> float:
        return float(np.mean(self.eps_test[sigma]))

    def std_test(self, sigma: float = 0.0) -> float:
        return float(np.std(self.eps_test[sigma], ddof=1))


def noisy_test_sets(test_set: Dataset, sigmas: Sequence[float], seed=0) -> dict:
    return {float(s): dataio.add_noise(test_set, s, [int(seed), i]) for i, s in enumerate(sigmas)}


def removal_set(base: TrajectoryLog, target, mode: str, rng) -> np.ndarray:
    stragglers = straggler_set(base, target)
    if mode == "straggler":
        return stragglers
    if mode == "random":
        return np.sort(rng.choice(base.source_index, len(stragglers), replace=False))
    raise ValueError(f"unknown prune mode {mode!r}")


def prune_retrain(dataset: Dataset, spec: RunSpec, base_logs: Sequence[TrajectoryLog],
                  error_grid: Sequence, mode: str, seeds: Sequence[int],
                  test_sets: dict | None = None, rng_seed=0) -> list[PruneCurvePoint]:
    """Retrain on ``T \\ S(t(eps))`` (or a size-matched random subset) for each grid value.

    Retraining run ``k`` prunes the set found by ``base_logs[k % len(base_logs)]``
    and starts from the fresh seed ``seeds[k]``. ``test_sets`` maps a noise level
    to a test set; test errors are taken with the final model.
    """
    test_sets = test_sets or {}
    rng = np.random.default_rng(rng_seed)
    points = []
    for target in error_grid:
        removed_counts, finals, reports, flags = [], [], [], []
        errs = {s: [] for s in test_sets}
        for k, seed in enumerate(seeds):
            base = base_logs[k % len(base_logs)]
            removed = removal_set(base, target, mode, rng)
            if len(removed) == 0:
                flags.append(f"run {k}: nothing to remove at {target}")
            pruned = dataio.prune(dataset, removed)
            model, log = run_single(pruned, spec, seed)
            removed_counts.append(len(removed))
            finals.append(MetricTriple(float(log.r_plus[-1]), float(log.r_minus[-1]), float(log.d[-1])))
            reports.append(dynamics.detect_inversion(log, spec.min_prominence))
            for s, ts in test_sets.items():
                errs[s].append(dynamics.evaluate_error(model, ts))
        points.append(PruneCurvePoint(target, mode, removed_counts, finals, errs, reports, flags))
    return points


# ----------------------------------------------------------------------------
# position relative to the 10-class centroids


@dataclass
class CenterOffsets:
    straggler_distances: np.ndarray
    rest_distances: np.ndarray
    p_value: float  # one-sided rank-sum, stragglers further out

    @property
    def straggler_mean(self) -> float:
        return float(np.mean(self.straggler_distances)) if len(self.straggler_distances) else math.nan

    @property
    def rest_mean(self) -> float:
        return float(np.mean(self.rest_distances))


def class_center_offsets(dataset: Dataset, stragglers) -> CenterOffsets:
    """Input-space distance of each example to the centroid of its original class."""
    x, cls = dataset.inputs, dataset.class_ids
    dist = np.empty(len(dataset))
    for c in np.unique(cls):
        sel = cls == c
        dist[sel] = np.linalg.norm(x[sel] - x[sel].mean(axis=0), axis=1)
    mask = np.isin(dataset.source_index, np.asarray(list(stragglers), dtype=np.int64))
    s_d, r_d = dist[mask], dist[~mask]
    if len(s_d) and len(r_d):
        p = float(stats.mannwhitneyu(s_d, r_d, alternative="greater").pvalue)
    else:
        p = math.nan
    return CenterOffsets(s_d, r_d, p)
