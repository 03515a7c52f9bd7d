"""Gyration radii and centroid distance of unit-sphere-projected class manifolds."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import MLP, hidden_representation


class ZeroNormError(ArithmeticError):
    """A hidden representation has zero norm and cannot be projected."""


@dataclass(frozen=True)
class MetricTriple:
    r_plus: float
    r_minus: float
    d: float


@dataclass(frozen=True)
class ClassManifolds:
    plus: np.ndarray  # (n+, H) unit rows
    minus: np.ndarray  # (n-, H) unit rows
    epoch: int = 0

    @property
    def size(self) -> int:
        return len(self.plus) + len(self.minus)


def project_unit(h: np.ndarray) -> np.ndarray:
    """Scale a vector (or each row of a matrix) to unit Euclidean norm."""
    h = np.asarray(h, dtype=np.float64)
    norms = np.linalg.norm(h, axis=-1, keepdims=True)
    bad = norms == 0
    if bad.any():
        n_bad = int(bad.sum())
        raise ZeroNormError(f"{n_bad} representation(s) with zero norm")
    return h / norms


def manifolds_from_hidden(h: np.ndarray, labels, epoch: int = 0) -> ClassManifolds:
    labels = np.asarray(labels)
    u = project_unit(h)
    return ClassManifolds(u[labels == 1], u[labels == -1], epoch)


def manifolds(model: MLP, inputs: np.ndarray, labels, layer: int = 1, epoch: int = 0) -> ClassManifolds:
    if len(labels) == 0:
        raise ValueError("empty dataset")
    return manifolds_from_hidden(hidden_representation(model, inputs, layer), labels, epoch)


def gyration_radius(points: np.ndarray) -> float:
    """Root-mean-square distance of the points from their centroid.

    Equal to the square root of ``(1/2n^2) sum_{x,y} |x-y|^2``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] == 0:
        raise ValueError("gyration radius of an empty set")
    centred = points - points.mean(axis=0)
    return float(np.sqrt(np.einsum("ij,ij->", centred, centred) / points.shape[0]))


def gyration_radius_pairwise(points: np.ndarray) -> float:
    """O(n^2) double-sum evaluation; reference for ``gyration_radius``."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = points.shape[0]
    if n == 0:
        raise ValueError("gyration radius of an empty set")
    total = 0.0
    for x in points:
        diff = points - x
        total += np.einsum("ij,ij->", diff, diff)
    return float(np.sqrt(total / (2.0 * n * n)))


def centroid_distance(plus: np.ndarray, minus: np.ndarray) -> float:
    plus, minus = np.atleast_2d(plus), np.atleast_2d(minus)
    if plus.shape[0] == 0 or minus.shape[0] == 0:
        raise ValueError("centroid distance needs two non-empty sets")
    return float(np.linalg.norm(plus.mean(axis=0) - minus.mean(axis=0)))


def triple_from_manifolds(cm: ClassManifolds) -> MetricTriple:
    return MetricTriple(gyration_radius(cm.plus), gyration_radius(cm.minus),
                        centroid_distance(cm.plus, cm.minus))


def triple_from_hidden(h: np.ndarray, labels) -> MetricTriple:
    return triple_from_manifolds(manifolds_from_hidden(h, labels))


def metric_triple(model: MLP, inputs: np.ndarray, labels, layer: int = 1) -> MetricTriple:
    return triple_from_manifolds(manifolds(model, inputs, labels, layer))
