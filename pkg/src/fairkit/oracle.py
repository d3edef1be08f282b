"""Brute-force exact solvers used as ground truth in tests and acceptance.

Two enumeration routes exist. The assignment route enumerates every k^n
assignment and is the obviously-correct baseline for tiny instances. The
composition route enumerates, per equivalence class, every way to split the
class across the k clusters, which stays exhaustive while reaching the
medium sizes (k = 2) the statistical checks need; its per-split transport
uses a sort-and-prefix argument for k = 2 and per-class enumeration
otherwise, never the production flow solver. Budgets abort loudly, never
truncate silently.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    Assignment,
    BudgetExceededError,
    ConstraintMatrix,
    Dataset,
    FairnessSpec,
    Objective,
    WeightedSet,
)

__all__ = [
    "OracleBudget",
    "OracleSolution",
    "exact_constrained_cost",
    "exact_fair_optimum",
    "exact_variant_optimum",
]


@dataclass(frozen=True)
class OracleBudget:
    max_points: int = 8
    max_k: int = 3
    max_candidates: int = 2_000_000


@dataclass
class OracleSolution:
    centers: Optional[tuple]
    cost: Optional[float]
    status: str  # "optimal" | "infeasible"
    assignment: Optional[np.ndarray] = None  # per-point center index (unit weights)


def _distances(ds: Dataset, centers, power: int) -> np.ndarray:
    return np.column_stack([ds.metric.center_dists(c) for c in centers]) ** power


def exact_constrained_cost(
    ds: Dataset,
    m: ConstraintMatrix,
    centers: Sequence,
    objective: Objective,
    weights: Optional[WeightedSet] = None,
) -> float:
    """Minimum transport cost meeting the quota matrix exactly, inf if the
    quotas are unmeetable.

    This quantity is flow-exact at any size (each class is an independent
    transport); the brute-force cross-check against assignment enumeration
    lives in the test suite.
    """
    from .core import InfeasibleError
    from .flow import class_transport

    w = weights if weights is not None else WeightedSet.from_dataset(ds)
    class_weights = w.class_weights(ds.n_classes)
    if not np.array_equal(m.column_sums(), class_weights):
        return math.inf
    total = 0.0
    for t in range(ds.n_classes):
        members = np.nonzero(w.class_ids == t)[0]
        try:
            _, cost = class_transport(
                ds, w.point_ids[members], w.weights[members], centers, m.entries[:, t], objective
            )
        except InfeasibleError:
            return math.inf
        total += cost
    return total


def _enumerate_assignments(n: int, k: int) -> np.ndarray:
    """(k^n, n) array of all center-index assignments, lexicographic order."""
    grids = np.meshgrid(*([np.arange(k)] * n), indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1)


def _fairness_mask(assignments: np.ndarray, ds: Dataset, spec: FairnessSpec, k: int) -> np.ndarray:
    """Exact vectorized fairness filter over enumerated unit assignments."""
    n_assign, n = assignments.shape
    ok = np.ones(n_assign, dtype=bool)
    onehot = assignments[:, :, None] == np.arange(k)[None, None, :]
    cluster = onehot.sum(axis=1).astype(np.int64)  # (n_assign, k)
    for q, group in enumerate(ds.groups):
        members = sorted(group)
        gmass = onehot[:, members, :].sum(axis=1).astype(np.int64)
        a_num, a_den = spec.alpha[q].numerator, spec.alpha[q].denominator
        b_num, b_den = spec.beta[q].numerator, spec.beta[q].denominator
        ok &= np.all(gmass * a_den <= a_num * cluster, axis=1)
        ok &= np.all(gmass * b_den >= b_num * cluster, axis=1)
    return ok


def _center_pools(ds: Dataset, k: int, pool) -> list[tuple]:
    pool = list(pool) if pool is not None else ds.metric.candidate_centers()
    return [tuple(c) for c in itertools.combinations(pool, k)]


def exact_fair_optimum(
    ds: Dataset,
    k: int,
    spec: FairnessSpec,
    objective: Objective,
    pool=None,
    budget: OracleBudget = OracleBudget(),
) -> OracleSolution:
    """Global fair optimum over all k-subsets of the center pool.

    Chooses the assignment route when k^n fits the budget, otherwise the
    composition route (restricted to the budget's limits). Unit weights.
    """
    n = ds.n
    if k > budget.max_k:
        raise BudgetExceededError(f"k={k} exceeds the oracle budget {budget.max_k}")
    if n <= budget.max_points and k**n <= budget.max_candidates:
        return _fair_by_assignments(ds, k, spec, objective, pool, budget)
    return _fair_by_compositions(ds, k, spec, objective, pool, budget)


def _fair_by_assignments(ds, k, spec, objective, pool, budget) -> OracleSolution:
    n = ds.n
    assignments = _enumerate_assignments(n, k)
    fair = _fairness_mask(assignments, ds, spec, k)
    if not np.any(fair):
        return OracleSolution(None, None, "infeasible")
    assignments = assignments[fair]
    rows = np.arange(assignments.shape[0])[:, None]
    best_cost = math.inf
    best = None
    for centers in _center_pools(ds, k, pool):
        d = _distances(ds, centers, objective.power)
        costs = d[np.arange(n)[None, :], assignments].sum(axis=1)
        i = int(np.argmin(costs))
        if costs[i] < best_cost:
            best_cost = float(costs[i])
            best = (centers, assignments[i].copy())
    centers, asg = best
    return OracleSolution(centers, best_cost, "optimal", asg)


def _fair_by_compositions(ds, k, spec, objective, pool, budget) -> OracleSolution:
    """Exhaustive search over per-class cluster compositions.

    Fairness depends only on how much of each class lands in each cluster,
    so enumerating all class splits with the cheapest transport realizing
    each split is exhaustive. The k = 2 transport is a classic exchange
    argument: send to the first center the points with the smallest cost
    difference. For k > 2 each class must be small enough to enumerate.
    """
    n = ds.n
    sizes = ds.class_sizes()
    grid_size = 1
    for m_t in sizes:
        grid_size *= math.comb(int(m_t) + k - 1, k - 1)
        if grid_size > budget.max_candidates:
            raise BudgetExceededError("composition grid exceeds the oracle budget")
    if k > 2 and any(k ** int(m_t) > budget.max_candidates for m_t in sizes):
        raise BudgetExceededError("per-class enumeration exceeds the oracle budget")

    compositions = [_class_compositions(int(m_t), k) for m_t in sizes]
    fair_index = _fair_split_filter(compositions, ds, spec, k)
    if fair_index is None:
        return OracleSolution(None, None, "infeasible")

    best_cost = math.inf
    best_centers = None
    for centers in _center_pools(ds, k, pool):
        d = _distances(ds, centers, objective.power)
        total = np.zeros(fair_index.shape[0])
        for t in range(ds.n_classes):
            table = _class_transport_table(d[ds.class_members(t)], compositions[t])
            total += table[fair_index[:, t]]
        i = int(np.argmin(total))
        if total[i] < best_cost:
            best_cost = float(total[i])
            best_centers = centers
    if best_centers is None:
        return OracleSolution(None, None, "infeasible")
    return OracleSolution(best_centers, best_cost, "optimal")


def _class_compositions(m_t: int, k: int) -> np.ndarray:
    """All ways to split m_t unit points over k clusters, as (count, k)."""
    out = []
    for bars in itertools.combinations_with_replacement(range(m_t + 1), k - 1):
        cuts = (0,) + bars + (m_t,)
        out.append([cuts[i + 1] - cuts[i] for i in range(k)])
    return np.array(out, dtype=np.int64)


def _fair_split_filter(compositions, ds, spec, k):
    """Cartesian product of per-class compositions, filtered exactly by the
    balance inequalities. Returns the surviving index matrix or None."""
    counts = [c.shape[0] for c in compositions]
    grids = np.meshgrid(*[np.arange(c) for c in counts], indexing="ij")
    index = np.stack([g.reshape(-1) for g in grids], axis=1)  # (prod, Gamma)
    cluster = np.zeros((index.shape[0], k), dtype=np.int64)
    per_class = []
    for t, comp in enumerate(compositions):
        chosen = comp[index[:, t]]
        per_class.append(chosen)
        cluster += chosen
    ok = np.ones(index.shape[0], dtype=bool)
    for q in range(ds.n_groups):
        gmass = np.zeros_like(cluster)
        for t in range(ds.n_classes):
            if q in ds.class_groups[t]:
                gmass += per_class[t]
        a_num, a_den = spec.alpha[q].numerator, spec.alpha[q].denominator
        b_num, b_den = spec.beta[q].numerator, spec.beta[q].denominator
        ok &= np.all(gmass * a_den <= a_num * cluster, axis=1)
        ok &= np.all(gmass * b_den >= b_num * cluster, axis=1)
    if not np.any(ok):
        return None
    return index[ok]


def _class_transport_table(d: np.ndarray, compositions: np.ndarray) -> np.ndarray:
    """Cheapest transport cost for one class under every composition.

    d is (m_t, k). For k = 2 the optimum sends to center 0 the x points
    with smallest d0 - d1 (prefix sums after sorting); otherwise all k^m_t
    per-class assignments are enumerated and reduced per composition.
    """
    m_t, k = d.shape
    if m_t == 0:
        return np.zeros(compositions.shape[0])
    if k == 2:
        delta = d[:, 0] - d[:, 1]
        order = np.argsort(delta, kind="stable")
        prefix = np.concatenate([[0.0], np.cumsum(delta[order])])
        base = d[:, 1].sum()
        return base + prefix[compositions[:, 0]]
    assignments = _enumerate_assignments(m_t, k)
    costs = d[np.arange(m_t)[None, :], assignments].sum(axis=1)
    onehot = assignments[:, :, None] == np.arange(k)[None, None, :]
    realized = onehot.sum(axis=1)
    table = np.full(compositions.shape[0], np.inf)
    keys = {tuple(row): i for i, row in enumerate(compositions.tolist())}
    for a in range(assignments.shape[0]):
        idx = keys[tuple(realized[a].tolist())]
        if costs[a] < table[idx]:
            table[idx] = costs[a]
    return table


def exact_variant_optimum(
    ds: Dataset,
    k: int,
    constraint,
    objective: Objective,
    pool=None,
    budget: OracleBudget = OracleBudget(),
) -> OracleSolution:
    """Ground truth for the size-bounded, diversity and chromatic variants.

    Enumerates every assignment and filters by the variant's predicate:
    cluster sizes at least L / at most U, at most one point per color per
    cluster, or color share at most 1/l. The constraint is the same object
    the pipeline consumes (see approx.ClusterConstraint).
    """
    from .approx import Capacity, Chromatic, Diversity, LowerBound

    n = ds.n
    if k > budget.max_k:
        raise BudgetExceededError(f"k={k} exceeds the oracle budget {budget.max_k}")
    if n > budget.max_points or k**n > budget.max_candidates:
        raise BudgetExceededError("instance exceeds the oracle budget")
    assignments = _enumerate_assignments(n, k)
    onehot = assignments[:, :, None] == np.arange(k)[None, None, :]
    cluster = onehot.sum(axis=1).astype(np.int64)
    if isinstance(constraint, LowerBound):
        ok = np.all(cluster >= constraint.lower, axis=1)
    elif isinstance(constraint, Capacity):
        ok = np.all(cluster <= constraint.capacity, axis=1)
    elif isinstance(constraint, Chromatic):
        ok = np.ones(assignments.shape[0], dtype=bool)
        for group in ds.groups:
            members = sorted(group)
            gmass = onehot[:, members, :].sum(axis=1)
            ok &= np.all(gmass <= 1, axis=1)
    elif isinstance(constraint, Diversity):
        ok = np.ones(assignments.shape[0], dtype=bool)
        for group in ds.groups:
            members = sorted(group)
            gmass = onehot[:, members, :].sum(axis=1)
            ok &= np.all(gmass * constraint.l <= cluster, axis=1)
    else:
        raise TypeError(f"unsupported constraint {constraint!r}")
    if not np.any(ok):
        return OracleSolution(None, None, "infeasible")
    assignments = assignments[ok]
    best_cost = math.inf
    best = None
    for centers in _center_pools(ds, k, pool):
        d = _distances(ds, centers, objective.power)
        costs = d[np.arange(n)[None, :], assignments].sum(axis=1)
        i = int(np.argmin(costs))
        if costs[i] < best_cost:
            best_cost = float(costs[i])
            best = (centers, assignments[i].copy())
    centers, asg = best
    return OracleSolution(centers, best_cost, "optimal", asg)
