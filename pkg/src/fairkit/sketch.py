"""Projection-cost preserving dimensionality reduction for k-means.

Projecting onto the top m = ceil(k / eps) right singular directions
preserves the cost of every k-clustering up to a (1 + 3 eps) factor and one
additive constant (the dropped Frobenius mass), so the whole pipeline can
run in m dimensions and lift back at the end. The reduction does not apply
to the median objective, whose costs do not factor through projections.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import Assignment, Dataset, EuclideanMetric, Objective, WeightedSet
from .milp import restore_assignment

__all__ = ["Sketch", "KMeansReduction", "truncated_svd_sketch", "kmeans_reduce", "lift_solution"]


@dataclass(eq=False)
class Sketch:
    """Column-orthonormal basis Z (d x m) and the projected points A Z.

    ``residual`` is the dropped squared Frobenius mass ||A - A Z Z^T||_F^2,
    the additive constant in the projection-cost sandwich. The SVD is exact,
    so the residual equals the tail singular-value mass.
    """

    z: np.ndarray
    reduced: np.ndarray
    residual: float

    @property
    def m(self) -> int:
        return self.z.shape[1]


def truncated_svd_sketch(a: np.ndarray, m: int) -> Sketch:
    """Project onto the top-m right singular directions (exact SVD).

    When m is at least the rank, the basis is padded with an orthonormal
    completion and the residual is zero.
    """
    a = np.asarray(a, dtype=float)
    if m < 1:
        raise ValueError("target dimension must be at least 1")
    n, d = a.shape
    if m > d:
        raise ValueError("target dimension cannot exceed the input dimension")
    full = m > min(n, d)
    _, s, vt = np.linalg.svd(a, full_matrices=full)
    z = vt[:m].T.copy()
    tail = s[m:] if m < s.size else s[:0]
    residual = float((tail**2).sum())
    return Sketch(z, a @ z, residual)


@dataclass(eq=False)
class KMeansReduction:
    """Sketched dataset plus the coreset of the sketched instance."""

    dataset: Dataset
    coreset: WeightedSet
    sketch: Sketch
    lift: "object"


def kmeans_reduce(ds: Dataset, k: int, epsilon: float, seed: int = 0) -> KMeansReduction:
    """Sketch to m = ceil(k / eps0) dimensions, then compress to a coreset.

    Group structure carries over point-by-point. With d <= m the sketch is
    an isometric rotation and the pipeline matches the unsketched one.
    """
    from .approx import reduce_instance

    if not isinstance(ds.metric, EuclideanMetric):
        raise ValueError("dimensionality reduction needs coordinate input")
    eps0 = epsilon / 3.0
    m = min(ds.metric.coords.shape[1], max(1, math.ceil(k / eps0)))
    sk = truncated_svd_sketch(ds.metric.coords, m)
    sketched = ds.with_metric(EuclideanMetric(sk.reduced))
    w, lift = reduce_instance(sketched, k, eps0, Objective.MEANS, seed=seed)
    return KMeansReduction(sketched, w, sk, lift)


def lift_solution(solution, ds: Dataset, objective: Objective = Objective.MEANS):
    """Pull a sketched-space solution back to the original space.

    Clusters transfer by point identity; every lifted center is the mean of
    its cluster in the original coordinates and the cost is recomputed
    there. Empty clusters drop their center (flagged in ``meta``).
    """
    from .approx import Solution

    coords = ds.metric.coords
    members: dict[int, list[tuple[int, int]]] = {}
    for (pid, j), w in solution.assignment.weights.items():
        if w > 0:
            members.setdefault(j, []).append((pid, w))
    kept = sorted(members)
    centers = []
    for j in kept:
        pts = np.array([coords[pid] for pid, _ in members[j]], dtype=float)
        wts = np.array([w for _, w in members[j]], dtype=float)
        centers.append((pts * wts[:, None]).sum(axis=0) / wts.sum())
    reindex = {j: i for i, j in enumerate(kept)}
    weights = {
        (pid, reindex[j]): w for (pid, j), w in solution.assignment.weights.items() if w > 0
    }
    asg = Assignment(tuple(centers), weights, objective)
    from .core import clustering_cost

    cost = clustering_cost(ds, asg)
    meta = dict(solution.meta)
    meta["dropped_centers"] = solution.assignment.k - len(kept)
    return Solution(tuple(centers), asg, cost, meta)
