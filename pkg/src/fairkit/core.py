"""Shared domain types: metrics, datasets with group structure, fairness
specifications, constraint matrices, weighted point sets and assignments.

All types are immutable after construction and safe to share across workers.
Weights are non-negative integers everywhere; fractional values appear only
inside LP relaxations. Group, class and center indices are 0-based.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence, Union

import numpy as np

__all__ = [
    "Objective",
    "MetricSpace",
    "EuclideanMetric",
    "MatrixMetric",
    "ModifiedMetric",
    "Dataset",
    "FairnessSpec",
    "ConstraintMatrix",
    "WeightedSet",
    "Assignment",
    "InfeasibleError",
    "BudgetExceededError",
    "build_equivalence_classes",
    "clustering_cost",
    "constraint_matrix_of",
    "fairness_check",
    "matrix_fairness_violations",
]

Center = Union[int, np.ndarray]

TRIANGLE_SLACK = 1e-9


class InfeasibleError(Exception):
    """No assignment satisfies the requested constraint."""


class BudgetExceededError(Exception):
    """An enumeration or search exceeded its configured budget."""


class Objective(str, Enum):
    MEDIAN = "median"
    MEANS = "means"

    @property
    def power(self) -> int:
        return 1 if self is Objective.MEDIAN else 2


class MetricSpace:
    """Distance oracle over an indexed point set.

    Centers are either point indices (any metric) or coordinate vectors
    (Euclidean only). ``candidate_centers`` is the finite center pool for
    metric instances; it defaults to all points.
    """

    kind: str = "abstract"
    n: int = 0

    def dist(self, i: int, j: int) -> float:
        raise NotImplementedError

    def center_dist(self, i: int, center: Center) -> float:
        raise NotImplementedError

    def center_dists(self, center: Center) -> np.ndarray:
        """Distances from every point to one center."""
        return np.array([self.center_dist(i, center) for i in range(self.n)])

    def candidate_centers(self) -> list[int]:
        return list(range(self.n))


class EuclideanMetric(MetricSpace):
    kind = "euclidean"

    def __init__(self, coords: np.ndarray):
        coords = np.asarray(coords, dtype=float)
        if coords.ndim != 2 or coords.shape[0] == 0:
            raise ValueError("coords must be a non-empty (n, d) array")
        coords.setflags(write=False)
        self.coords = coords
        self.n, self.d = coords.shape

    def dist(self, i: int, j: int) -> float:
        return float(np.linalg.norm(self.coords[i] - self.coords[j]))

    def center_dist(self, i: int, center: Center) -> float:
        loc = self.coords[center] if isinstance(center, (int, np.integer)) else center
        return float(np.linalg.norm(self.coords[i] - loc))

    def center_dists(self, center: Center) -> np.ndarray:
        loc = self.coords[center] if isinstance(center, (int, np.integer)) else np.asarray(center, dtype=float)
        return np.linalg.norm(self.coords - loc, axis=1)


class MatrixMetric(MetricSpace):
    kind = "matrix"

    def __init__(self, matrix: np.ndarray, validate: bool = True):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("distance matrix must be square")
        if validate:
            _validate_distance_matrix(matrix)
        matrix.setflags(write=False)
        self.matrix = matrix
        self.n = matrix.shape[0]

    def dist(self, i: int, j: int) -> float:
        return float(self.matrix[i, j])

    def center_dist(self, i: int, center: Center) -> float:
        if not isinstance(center, (int, np.integer)):
            raise TypeError("matrix metrics only support point indices as centers")
        return float(self.matrix[i, center])

    def center_dists(self, center: Center) -> np.ndarray:
        if not isinstance(center, (int, np.integer)):
            raise TypeError("matrix metrics only support point indices as centers")
        return self.matrix[:, center].copy()


def _validate_distance_matrix(matrix: np.ndarray) -> None:
    n = matrix.shape[0]
    if np.any(np.isnan(matrix)) or np.any(matrix < 0):
        raise ValueError("distances must be finite and non-negative")
    if np.any(np.abs(np.diag(matrix)) > TRIANGLE_SLACK):
        raise ValueError("distance matrix must have a zero diagonal")
    if np.any(np.abs(matrix - matrix.T) > TRIANGLE_SLACK):
        raise ValueError("distance matrix must be symmetric")
    for b in range(n):
        # d(a,c) <= d(a,b) + d(b,c) with additive slack for rounded inputs
        through = matrix[:, b][:, None] + matrix[b, :][None, :]
        if np.any(matrix > through + TRIANGLE_SLACK):
            raise ValueError(f"triangle inequality violated through point {b}")


class ModifiedMetric(MetricSpace):
    """Clip-and-shift wrapper: distances above ``d_max`` are clipped, then
    every positive-index pair is shifted up by ``d_min``.

    Clipping and shifting both preserve the triangle inequality, so the
    wrapper is again a metric with aspect ratio at most (d_max + d_min)/d_min.
    """

    def __init__(self, base: MetricSpace, d_max: float, d_min: float):
        self.base = base
        self.kind = base.kind
        self.n = base.n
        self.d_max = float(d_max)
        self.d_min = float(d_min)
        if isinstance(base, EuclideanMetric):
            self.coords = base.coords

    def _mod(self, raw):
        return np.minimum(raw, self.d_max) + self.d_min

    def dist(self, i: int, j: int) -> float:
        if i == j:
            return 0.0
        return float(self._mod(self.base.dist(i, j)))

    def center_dist(self, i: int, center: Center) -> float:
        return float(self._mod(self.base.center_dist(i, center)))

    def center_dists(self, center: Center) -> np.ndarray:
        return self._mod(self.base.center_dists(center))

    def candidate_centers(self) -> list[int]:
        return self.base.candidate_centers()


@dataclass(frozen=True, eq=False)
class Dataset:
    """Point set with group memberships and derived equivalence classes.

    Two points share a class id iff their group-index sets are identical.
    ``class_groups[t]`` is the set of group indices shared by class ``t``.
    """

    metric: MetricSpace
    groups: tuple[frozenset[int], ...]
    class_index: np.ndarray
    class_groups: tuple[frozenset[int], ...]

    @property
    def n(self) -> int:
        return self.metric.n

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def n_classes(self) -> int:
        return len(self.class_groups)

    def class_members(self, t: int) -> np.ndarray:
        return np.nonzero(self.class_index == t)[0]

    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.class_index, minlength=self.n_classes)

    def point_groups(self, i: int) -> frozenset[int]:
        return self.class_groups[int(self.class_index[i])]

    def with_metric(self, metric: MetricSpace) -> "Dataset":
        return Dataset(metric, self.groups, self.class_index, self.class_groups)


def build_equivalence_classes(
    metric: MetricSpace, groups: Sequence[Iterable[int]]
) -> Dataset:
    """Partition points into equivalence classes by group-membership set.

    Every point must belong to at least one group; class ids are assigned in
    order of first occurrence, so they are deterministic in the point order.
    """
    n = metric.n
    group_sets = tuple(frozenset(int(i) for i in g) for g in groups)
    for gi, g in enumerate(group_sets):
        for p in g:
            if p < 0 or p >= n:
                raise ValueError(f"group {gi} references unknown point {p}")
    membership: list[set[int]] = [set() for _ in range(n)]
    for gi, g in enumerate(group_sets):
        for p in g:
            membership[p].add(gi)
    seen: dict[frozenset[int], int] = {}
    class_index = np.empty(n, dtype=np.int64)
    class_groups: list[frozenset[int]] = []
    for p in range(n):
        key = frozenset(membership[p])
        if not key:
            raise ValueError(f"point {p} belongs to no group")
        if key not in seen:
            seen[key] = len(class_groups)
            class_groups.append(key)
        class_index[p] = seen[key]
    class_index.setflags(write=False)
    return Dataset(metric, group_sets, class_index, tuple(class_groups))


@dataclass(frozen=True)
class FairnessSpec:
    """Per-group balance bounds: group i's share of every cluster must lie
    in [beta[i], alpha[i]]. Bounds are exact rationals so that boundary
    cases like alpha = 1/2 are decided without float noise.
    """

    alpha: tuple[Fraction, ...]
    beta: tuple[Fraction, ...]

    def __post_init__(self):
        if len(self.alpha) != len(self.beta):
            raise ValueError("alpha and beta must have equal length")
        for a, b in zip(self.alpha, self.beta):
            if not (0 <= b <= a <= 1):
                raise ValueError("need 0 <= beta_i <= alpha_i <= 1")

    @classmethod
    def from_values(cls, alpha: Sequence, beta: Sequence) -> "FairnessSpec":
        return cls(tuple(_as_fraction(a) for a in alpha), tuple(_as_fraction(b) for b in beta))

    @property
    def n_groups(self) -> int:
        return len(self.alpha)


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, float):
        # round-trip through the decimal literal so 0.1 means 1/10
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True, eq=False)
class ConstraintMatrix:
    """k x Gamma non-negative integer matrix; entry (j, t) prescribes how much
    weight from class t cluster j receives."""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.int64)
        if entries.ndim != 2:
            raise ValueError("constraint matrix must be two-dimensional")
        if np.any(entries < 0):
            raise ValueError("constraint matrix entries must be non-negative")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    @property
    def n_classes(self) -> int:
        return self.entries.shape[1]

    def column_sums(self) -> np.ndarray:
        return self.entries.sum(axis=0)

    def __eq__(self, other) -> bool:
        return isinstance(other, ConstraintMatrix) and np.array_equal(self.entries, other.entries)


@dataclass(frozen=True, eq=False)
class WeightedSet:
    """Weighted points with class labels. Weights are positive integers; a
    coreset conserves per-class total weight exactly."""

    point_ids: np.ndarray
    class_ids: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pid = np.asarray(self.point_ids, dtype=np.int64)
        cid = np.asarray(self.class_ids, dtype=np.int64)
        w = np.asarray(self.weights, dtype=np.int64)
        if not (pid.shape == cid.shape == w.shape) or pid.ndim != 1:
            raise ValueError("point_ids, class_ids and weights must be parallel 1-d arrays")
        if pid.size and np.any(w < 1):
            raise ValueError("weights must be positive integers")
        for arr, name in ((pid, "point_ids"), (cid, "class_ids"), (w, "weights")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "WeightedSet":
        n = ds.n
        return cls(np.arange(n), ds.class_index.copy(), np.ones(n, dtype=np.int64))

    @property
    def size(self) -> int:
        return int(self.point_ids.size)

    def total_weight(self) -> int:
        return int(self.weights.sum())

    def class_weight(self, t: int) -> int:
        return int(self.weights[self.class_ids == t].sum())

    def class_weights(self, n_classes: int) -> np.ndarray:
        return np.bincount(self.class_ids, weights=self.weights, minlength=n_classes).astype(np.int64)


@dataclass(eq=False)
class Assignment:
    """Sparse integral assignment: (point id, center index) -> weight.

    ``centers`` is the ordered center list the indices refer to; a point may
    split its weight across several centers, but every stored weight is a
    non-negative integer.
    """

    centers: tuple
    weights: dict
    objective: Objective

    @property
    def k(self) -> int:
        return len(self.centers)

    def point_mass(self, pid: int) -> int:
        return sum(w for (p, _), w in self.weights.items() if p == pid)

    def cluster_masses(self) -> np.ndarray:
        out = np.zeros(self.k, dtype=np.int64)
        for (_, j), w in self.weights.items():
            out[j] += w
        return out

    def items(self):
        return self.weights.items()


def clustering_cost(source, asg: Assignment) -> float:
    """Total assignment cost: sum of weight * distance (median) or
    weight * squared distance (means)."""
    metric = source.metric if isinstance(source, Dataset) else source
    power = asg.objective.power
    total = 0.0
    for (pid, j), w in asg.weights.items():
        if w == 0:
            continue
        d = metric.center_dist(pid, asg.centers[j])
        total += w * d**power
    return total


def constraint_matrix_of(asg: Assignment, ds: Dataset) -> ConstraintMatrix:
    """Matrix M with M[j][t] = total weight of class t assigned to center j."""
    m = np.zeros((asg.k, ds.n_classes), dtype=np.int64)
    for (pid, j), w in asg.weights.items():
        m[j, int(ds.class_index[pid])] += w
    return ConstraintMatrix(m)


@dataclass(frozen=True)
class FairnessViolation:
    center: int
    group: int
    kind: str  # "lower" or "upper"
    group_mass: int
    cluster_mass: int


def fairness_check(asg: Assignment, ds: Dataset, spec: FairnessSpec) -> list[FairnessViolation]:
    """All (center, group) balance violations of an integral assignment.

    Empty clusters are vacuously fair. Comparisons are exact: masses are
    integers and the bounds rationals.
    """
    if spec.n_groups != ds.n_groups:
        raise ValueError("fairness spec does not match the dataset's group count")
    return matrix_fairness_violations(constraint_matrix_of(asg, ds), ds, spec)


def matrix_fairness_violations(
    m: ConstraintMatrix, ds: Dataset, spec: FairnessSpec
) -> list[FairnessViolation]:
    """Fairness violations read off a constraint matrix via class sums.

    Group q's mass in cluster j is the sum of M[j][t] over classes t whose
    group set contains q, so fairness is decided by the matrix alone.
    """
    violations = []
    cluster_mass = m.entries.sum(axis=1)
    for j in range(m.k):
        cm = int(cluster_mass[j])
        if cm == 0:
            continue
        for q in range(ds.n_groups):
            gm = int(sum(m.entries[j, t] for t in range(ds.n_classes) if q in ds.class_groups[t]))
            if gm < spec.beta[q] * cm:
                violations.append(FairnessViolation(j, q, "lower", gm, cm))
            if gm > spec.alpha[q] * cm:
                violations.append(FairnessViolation(j, q, "upper", gm, cm))
    return violations
