"""Large-P extrapolation of the straggler fraction.

Model: ``phi(P) = phi_inf * (1 - (P / p0) ** -gamma)``.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from . import dataio, dynamics
from .runner import RunSpec, run_single


class FitError(RuntimeError):
    pass


class DegenerateFitWarning(UserWarning):
    pass


def phi_model(P, phi_inf: float, p0: float, gamma: float):
    return phi_inf * (1.0 - (np.asarray(P, dtype=float) / p0) ** (-gamma))


@dataclass
class ScalingFit:
    phi_inf: float
    p0: float
    gamma: float
    sum_sq_residual: float
    weighted: bool
    restarts: int
    degenerate: bool = False

    def predict(self, P):
        return phi_model(P, self.phi_inf, self.p0, self.gamma)


def _objective(theta, P, phi, w):
    phi_inf, log_p0, log_gamma = theta
    r = (phi_model(P, phi_inf, math.exp(log_p0), math.exp(log_gamma)) - phi) * w
    return float(r @ r)


def fit_phi(points: Sequence[tuple], restarts: int = 10, seed: int = 0) -> ScalingFit:
    """Least-squares fit by Nelder-Mead simplex, best of ``restarts`` perturbed starts.

    ``points`` are ``(P, phi, sigma_phi)``; the residuals are divided by sigma
    when every sigma is a positive finite number, otherwise unweighted.
    """
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        raise ValueError("need at least 3 distinct sizes for a 3-parameter fit")
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise ValueError("points must be (P, phi[, sigma]) rows")
    P, phi = arr[:, 0], arr[:, 1]
    if len(np.unique(P)) < 3:
        raise ValueError("need at least 3 distinct sizes for a 3-parameter fit")
    sigma = arr[:, 2] if arr.shape[1] == 3 else np.full(len(P), np.nan)
    weighted = bool(np.all(np.isfinite(sigma)) and np.all(sigma > 0))
    w = 1.0 / sigma if weighted else np.ones(len(P))
    degenerate = bool(np.ptp(phi) == 0)
    if degenerate:
        warnings.warn("all phi values equal: gamma is not identifiable", DegenerateFitWarning,
                      stacklevel=2)

    start = np.array([1.05 * phi.max(), math.log(P.min()), 0.0])
    rng = np.random.default_rng(seed)
    opts = {"xatol": 1e-13, "fatol": 1e-20, "maxiter": 20_000, "maxfev": 40_000}
    # phi_inf is a fraction; gamma and p0 get a wide box so sloppy directions cannot run away
    lo_p, hi_p = math.log(P.min()), math.log(P.max())
    bounds = [(1e-9, 1.0), (lo_p - 25.0, hi_p + 10.0), (math.log(1e-3), math.log(1e2))]
    best = None
    for k in range(restarts + 1):
        x0 = start if k == 0 else start + rng.normal(0.0, [0.1 * start[0], 1.0, 0.5])
        x0 = np.clip(x0, [b[0] for b in bounds], [b[1] for b in bounds])
        res = minimize(_objective, x0, args=(P, phi, w), method="Nelder-Mead", bounds=bounds,
                       options=opts)
        # restart from the optimum while that still lowers the residual
        for _ in range(5):
            again = minimize(_objective, res.x, args=(P, phi, w), method="Nelder-Mead",
                             bounds=bounds, options=opts)
            improved = again.fun < res.fun * (1 - 1e-9)
            moved = np.max(np.abs(again.x - res.x))
            res = again if again.fun <= res.fun else res
            if not improved or moved < 1e-12:
                break
        if not np.isfinite(res.fun):
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise FitError("no restart produced a finite residual")
    phi_inf, log_p0, log_gamma = best.x
    return ScalingFit(float(phi_inf), math.exp(log_p0), math.exp(log_gamma), float(best.fun),
                      weighted, restarts, degenerate)


@dataclass
class SizePoint:
    P: int
    phi: float
    sigma: float
    samples: list
    excluded: int = 0

    def as_tuple(self) -> tuple:
        return (self.P, self.phi, self.sigma)


def aggregate(samples: dict) -> list[SizePoint]:
    out = []
    for P in sorted(samples):
        vals = samples[P]
        sigma = float(np.std(vals, ddof=1)) if len(vals) > 1 else math.nan
        out.append(SizePoint(int(P), float(np.mean(vals)) if vals else math.nan, sigma, list(vals)))
    return out


def phi_vs_size(raw_train: dataio.RawDataset, sizes: Sequence[int], spec: RunSpec,
                seeds: Sequence[int], min_prominence: float | None = None) -> list[SizePoint]:
    """phi per training-set size, pooled over seeds; unconverged runs are excluded."""
    samples: dict = {}
    excluded: dict = {}
    for P in sizes:
        ds = dataio.standardize(dataio.subsample(raw_train, int(P), 0))
        for seed in seeds:
            _, log = run_single(ds, spec, seed)
            rep = dynamics.detect_inversion(log, spec.min_prominence)
            if not rep.all_qualified(min_prominence):
                excluded[P] = excluded.get(P, 0) + 1
                continue
            samples.setdefault(int(P), []).append(rep.phi)
    for P in sizes:
        samples.setdefault(int(P), [])
    points = aggregate(samples)
    for pt in points:
        pt.excluded = excluded.get(pt.P, 0)
    return points


def fit_report(fit: ScalingFit, points: Sequence[tuple]) -> dict:
    table = json.dumps([list(map(float, p)) for p in points]).encode()
    return {**asdict(fit), "input_digest": hashlib.sha256(table).hexdigest()[:16],
            "weighting": "1/sigma" if fit.weighted else "none",
            "points": [list(map(float, p)) for p in points]}
