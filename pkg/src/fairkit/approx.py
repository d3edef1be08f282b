"""End-to-end constrained clustering.

The metric pipeline enumerates (leader, radius) guesses over the coreset:
every cluster of an optimal coreset solution has some member closest to its
center, and picking any pool center at roughly the guessed leader-to-center
distance costs at most 3x (median) or 9x (means) per point. Distinct
guesses often select the same center tuple, so the enumeration is
deduplicated to the realized tuples, which is cost-equivalent and far
smaller. The Euclidean pipeline swaps the guess enumeration for sampled
candidate center sets and reaches (1 + eps) statistically.

Constraints plug in through one object: balance specs solve their quota
program on the coreset and restore per class; size-bounded and chromatic
constraints solve flows directly.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .core import (
    Assignment,
    ConstraintMatrix,
    Dataset,
    EuclideanMetric,
    FairnessSpec,
    InfeasibleError,
    MetricSpace,
    ModifiedMetric,
    Objective,
    WeightedSet,
    clustering_cost,
)
from .coreset import Regime, build_universal_coreset, regime_of
from .flow import capacitated_assign, chromatic_assign, lower_bounded_assign
from .milp import fair_assign_approx, fair_assign_exact, restore_assignment
from .seeding import candidate_centers, cost_upper_bound, gonzalez_kcenter

__all__ = [
    "Fair",
    "LowerBound",
    "Capacity",
    "Diversity",
    "Chromatic",
    "ClusterConstraint",
    "Solution",
    "GuessSpace",
    "reduce_aspect_ratio",
    "fair_cluster_metric",
    "fair_cluster_euclidean",
    "reduce_instance",
    "constrained_cluster",
]

log = logging.getLogger("fairkit")

ASPECT_ALPHA = 0.01
ASPECT_CLIP_POWER = 10
ASPECT_SHIFT_POWER = 3


@dataclass(frozen=True)
class Fair:
    spec: FairnessSpec


@dataclass(frozen=True)
class LowerBound:
    lower: int


@dataclass(frozen=True)
class Capacity:
    capacity: int


@dataclass(frozen=True)
class Diversity:
    l: int


@dataclass(frozen=True)
class Chromatic:
    pass


ClusterConstraint = Union[Fair, LowerBound, Capacity, Diversity, Chromatic]


@dataclass(eq=False)
class Solution:
    centers: tuple
    assignment: Assignment
    cost: float
    meta: dict = field(default_factory=dict)


@dataclass(eq=False)
class GuessSpace:
    """Bookkeeping of one leader/radius enumeration."""

    leaders: np.ndarray
    radii: np.ndarray
    realized_centers: list
    raw_tuples: int
    evaluated_tuples: int
    exhaustive: bool


def reduce_aspect_ratio(
    metric: MetricSpace, estimate: float, n: int, alpha_c: float = ASPECT_ALPHA
) -> MetricSpace:
    """Bound the aspect ratio by clipping huge distances and shifting all up.

    ``estimate`` is an upper estimate of the optimal constrained cost.
    Distances above 2 n^10 estimate clip down (no near-optimal solution uses
    them), then every distinct pair moves up by alpha_c estimate / n^3,
    changing any reasonable solution by at most a (1 + 1/n) factor. A zero
    estimate degenerates to the identity.
    """
    if estimate <= 0:
        return metric
    d_max = 2.0 * float(n) ** ASPECT_CLIP_POWER * estimate
    d_min = alpha_c * estimate / float(n) ** ASPECT_SHIFT_POWER
    return ModifiedMetric(metric, d_max, d_min)


def _pairwise(metric: MetricSpace) -> np.ndarray:
    if isinstance(metric, ModifiedMetric):
        base = _pairwise(metric.base)
        out = metric._mod(base)
        np.fill_diagonal(out, 0.0)
        return out
    if isinstance(metric, EuclideanMetric):
        x = metric.coords
        sq = np.maximum(
            (x**2).sum(1)[:, None] + (x**2).sum(1)[None, :] - 2.0 * x @ x.T, 0.0
        )
        return np.sqrt(sq)
    return metric.matrix.copy()


def _constraint_spec(constraint: ClusterConstraint, ds: Dataset) -> Optional[FairnessSpec]:
    """Balance spec for constraints solved through the quota program."""
    if isinstance(constraint, Fair):
        return constraint.spec
    if isinstance(constraint, Diversity):
        if constraint.l <= 1:
            raise ValueError("diversity parameter must exceed 1")
        counts = np.zeros(ds.n, dtype=np.int64)
        for g in ds.groups:
            for p in g:
                counts[p] += 1
        if np.any(counts > 1):
            raise ValueError("diversity clustering needs disjoint color classes")
        from fractions import Fraction

        ell = ds.n_groups
        return FairnessSpec(
            tuple(Fraction(1, constraint.l) for _ in range(ell)),
            tuple(Fraction(0) for _ in range(ell)),
        )
    return None


def _weight_vector(ds: Dataset, w: WeightedSet) -> np.ndarray:
    vec = np.zeros(ds.n, dtype=np.int64)
    np.add.at(vec, w.point_ids, w.weights)
    return vec


def _check_variant_feasible(ds: Dataset, k: int, constraint: ClusterConstraint) -> None:
    if isinstance(constraint, LowerBound) and ds.n < k * constraint.lower:
        raise InfeasibleError("not enough points for the cluster size lower bound")
    if isinstance(constraint, Capacity) and ds.n > k * constraint.capacity:
        raise InfeasibleError("too many points for the cluster capacity")
    if isinstance(constraint, Chromatic):
        for q, g in enumerate(ds.groups):
            if len(g) > k:
                raise InfeasibleError(f"color {q} has more points than clusters")


def _variant_assign(ds: Dataset, centers, constraint, objective, weights=None) -> Assignment:
    if isinstance(constraint, LowerBound):
        return lower_bounded_assign(ds, centers, constraint.lower, objective, weights=weights)
    if isinstance(constraint, Capacity):
        return capacitated_assign(ds, centers, constraint.capacity, objective, weights=weights)
    if isinstance(constraint, Chromatic):
        return chromatic_assign(ds, centers, objective, weights=weights)
    raise TypeError(f"not a flow-shaped constraint: {constraint!r}")


# ---------------------------------------------------------------------------
# guess enumeration


def _radii_grid(dmat: np.ndarray, eps0: float) -> np.ndarray:
    positive = dmat[dmat > 0]
    if positive.size == 0:
        return np.array([])
    lo, hi = float(positive.min()), float(positive.max())
    count = max(0, math.ceil(math.log(hi / lo) / math.log1p(eps0))) + 1
    return lo * (1.0 + eps0) ** np.arange(count)


def _realized_centers(
    metric: MetricSpace,
    leader_ids: np.ndarray,
    pool: Sequence[int],
    eps0: float,
    grid: np.ndarray,
    raw_grid: bool,
) -> list[int]:
    """Pool centers an annulus guess can select: per (leader, radius), the
    lowest-index pool center with distance inside [R, (1 + eps0) R]. The
    leader's nearest pool center is always included, covering the
    leader-equals-center guess."""
    pool_arr = np.asarray(pool, dtype=np.int64)
    realized: set[int] = set()
    log_base = math.log1p(eps0)
    for l in leader_ids:
        d = metric.center_dists(int(l))[pool_arr]
        realized.add(int(pool_arr[int(np.argmin(d))]))
        if raw_grid:
            inside = (d[None, :] >= grid[:, None] - 1e-12) & (
                d[None, :] <= (1.0 + eps0) * grid[:, None] + 1e-12
            )
            hit = inside.any(axis=1)
            first = inside.argmax(axis=1)
            for r in np.nonzero(hit)[0]:
                realized.add(int(pool_arr[first[r]]))
        else:
            if grid.size == 0:
                continue
            pos = d > 0
            cells = np.full(d.size, -1, dtype=np.int64)
            cells[pos] = np.floor(np.log(d[pos] / grid[0]) / log_base + 1e-12).astype(np.int64)
            for cell in np.unique(cells[pos]):
                members = np.nonzero(cells == cell)[0]
                realized.add(int(pool_arr[members[0]]))
    return sorted(realized)


def _unrank_multiset(rank: int, n: int, k: int) -> list[int]:
    """rank -> k-multiset over range(n) in lexicographic order."""
    out = []
    start = 0
    for pos in range(k):
        for v in range(start, n):
            cnt = math.comb(n - v + k - pos - 2, k - pos - 1)
            if rank < cnt:
                out.append(v)
                start = v
                break
            rank -= cnt
    return out


def _center_tuples(universe: list, k: int, budget: int, seed: int):
    total = math.comb(len(universe) + k - 1, k)
    if total <= budget:
        return [tuple(c) for c in itertools.combinations_with_replacement(universe, k)], True
    rng = np.random.default_rng([seed, 0x6E55])
    ranks = rng.choice(total, size=budget, replace=False)
    tuples = [
        tuple(universe[i] for i in _unrank_multiset(int(r), len(universe), k))
        for r in sorted(ranks)
    ]
    return tuples, False


# ---------------------------------------------------------------------------
# metric pipeline


def _metric_cluster(
    ds: Dataset,
    k: int,
    epsilon: float,
    objective: Objective,
    constraint: ClusterConstraint,
    seed: int,
    guess_budget: int,
    algorithm: str,
) -> Solution:
    eps0 = epsilon / 8.0
    spec = _constraint_spec(constraint, ds)
    chromatic = isinstance(constraint, Chromatic)

    if spec is not None:
        estimate = cost_upper_bound(ds, k, spec, objective, seed=_derive(seed, 1))
    else:
        _check_variant_feasible(ds, k, constraint)
        boot = gonzalez_kcenter(ds, k, objective)
        estimate = clustering_cost(ds, _variant_assign(ds, boot, constraint, objective))

    working = ds
    if not chromatic and estimate > 0:
        working = ds.with_metric(reduce_aspect_ratio(ds.metric, estimate, ds.n))

    w = build_universal_coreset(working, k, eps0, objective, seed=_derive(seed, 2))
    wvec = _weight_vector(working, w)

    dmat = _pairwise(working.metric)
    if chromatic:
        grid = np.unique(dmat[dmat > 0])
    else:
        grid = _radii_grid(dmat, eps0)
    pool = working.metric.candidate_centers()
    leaders = np.unique(w.point_ids)
    universe = _realized_centers(working.metric, leaders, pool, eps0, grid, chromatic)
    tuples, exhaustive = _center_tuples(universe, k, guess_budget, seed)
    if chromatic:
        log.info("chromatic radius grid has %d distinct distances", grid.size)

    # unconstrained nearest-center cost lower-bounds every constrained cost,
    # so evaluating in bound order lets the tail prune away exactly
    dist_pool = np.column_stack(
        [working.metric.center_dists(c)[w.point_ids] for c in universe]
    ) ** objective.power
    col_of = {c: i for i, c in enumerate(universe)}
    bounds = np.array(
        [
            float((w.weights * dist_pool[:, [col_of[c] for c in tup]].min(axis=1)).sum())
            for tup in tuples
        ]
    )
    order = np.argsort(bounds, kind="stable")

    best_cost = math.inf
    best_tuple = None
    best_context = None
    evaluated = 0
    for idx in order:
        if bounds[idx] >= best_cost - 1e-12:
            break
        tup = tuples[int(idx)]
        evaluated += 1
        if spec is not None:
            res = fair_assign_exact(working, w, tup, spec, objective)
            if res.status != "optimal":
                raise InfeasibleError("no assignment satisfies the constraint")
            cost, context = res.cost, res.g
        else:
            asg = _variant_assign(working, tup, constraint, objective, weights=wvec)
            cost, context = clustering_cost(working, asg), None
        if cost < best_cost:
            best_cost = cost
            best_tuple = tup
            best_context = context
    if best_tuple is None:
        raise InfeasibleError("no feasible center tuple found")

    if spec is not None:
        final = restore_assignment(ds, best_context, best_tuple, 3.0 * eps0, objective)
    else:
        final = _variant_assign(ds, best_tuple, constraint, objective)
    out_cost = clustering_cost(ds, final)
    guesses = GuessSpace(
        leaders,
        grid,
        list(universe),
        raw_tuples=len(leaders) ** k * max(1, grid.size) ** k,
        evaluated_tuples=evaluated,
        exhaustive=exhaustive,
    )
    meta = {
        "algorithm": algorithm,
        "seed": seed,
        "epsilon": epsilon,
        "objective": objective.value,
        "guess_space_exhaustive": exhaustive,
        "guess_tuples": len(tuples),
        "guess_evaluated": evaluated,
        "coreset_size": w.size,
        "cost_estimate": estimate,
        "grid_size": int(grid.size),
    }
    sol = Solution(tuple(best_tuple), final, out_cost, meta)
    sol.meta["guess_space"] = guesses
    return sol


def fair_cluster_metric(
    ds: Dataset,
    k: int,
    spec: FairnessSpec,
    epsilon: float,
    objective: Objective,
    seed: int = 0,
    guess_budget: int = 1_000_000,
) -> Solution:
    """Fair clustering in a general metric within 3 + eps (median) or
    9 + eps (means) of the optimum, given an exhausted guess space.

    Pipeline: cost estimate, aspect-ratio reduction, universal coreset,
    leader/radius enumeration with the exact quota program on the coreset,
    then per-class restoration onto the full point set. Beyond
    ``guess_budget`` deduplicated tuples the guesses are sampled and the
    factor only holds statistically; ``meta['guess_space_exhaustive']``
    reports which case happened.
    """
    return _metric_cluster(
        ds, k, epsilon, objective, Fair(spec), seed, guess_budget, "fair-metric"
    )


def fair_cluster_euclidean(
    ds: Dataset,
    k: int,
    spec: FairnessSpec,
    epsilon: float,
    objective: Objective,
    seed: int = 0,
    trials: int = 32,
    max_candidates: int = 20_000,
) -> Solution:
    """Fair clustering in Euclidean space within (1 + eps), statistically.

    Candidate center sets are grown on the reduced instance, scored by the
    exact quota program on the coreset, and the winner's assignment is
    rebuilt on the full point set through a second coreset round trip.
    """
    return _euclidean_cluster(
        ds, k, epsilon, objective, Fair(spec), seed, trials, max_candidates, "fair-euclidean"
    )


def _euclidean_cluster(
    ds: Dataset,
    k: int,
    epsilon: float,
    objective: Objective,
    constraint: ClusterConstraint,
    seed: int,
    trials: int,
    max_candidates: int,
    algorithm: str,
) -> Solution:
    if not isinstance(ds.metric, EuclideanMetric):
        raise ValueError("the Euclidean pipeline needs coordinate input")
    eps0 = epsilon / 8.0
    spec = _constraint_spec(constraint, ds)
    if spec is None:
        _check_variant_feasible(ds, k, constraint)

    w, _ = reduce_instance(ds, k, epsilon, objective, seed=_derive(seed, 3))
    wvec = _weight_vector(ds, w)
    cands = candidate_centers(
        ds,
        w,
        k,
        eps0,
        objective,
        trials=trials,
        seed=_derive(seed, 4),
        max_candidates=max_candidates,
    )
    if not cands.sets:
        raise InfeasibleError("candidate generation produced no center sets")

    coords = ds.metric.coords[w.point_ids]
    weights = w.weights.astype(float)
    power = objective.power

    def bound(cset: np.ndarray) -> float:
        d = np.linalg.norm(coords[:, None, :] - cset[None, :, :], axis=2) ** power
        return float((weights * d.min(axis=1)).sum())

    bounds = np.array([bound(c) for c in cands.sets])
    order = np.argsort(bounds, kind="stable")

    best_cost = math.inf
    best_set = None
    for idx in order:
        if bounds[idx] >= best_cost - 1e-12:
            break
        cset = cands.sets[int(idx)]
        tup = tuple(cset[i] for i in range(k))
        if spec is not None:
            res = fair_assign_exact(ds, w, tup, spec, objective)
            if res.status != "optimal":
                raise InfeasibleError("no assignment satisfies the constraint")
            cost = res.cost
        else:
            asg = _variant_assign(ds, tup, constraint, objective, weights=wvec)
            cost = clustering_cost(ds, asg)
        if cost < best_cost:
            best_cost = cost
            best_set = tup
    if best_set is None:
        raise InfeasibleError("no feasible candidate center set")

    if spec is not None:
        final = fair_assign_approx(ds, best_set, spec, eps0, objective, seed=_derive(seed, 5))
    else:
        final = _variant_assign(ds, best_set, constraint, objective)
    out_cost = clustering_cost(ds, final)
    meta = {
        "algorithm": algorithm,
        "seed": seed,
        "epsilon": epsilon,
        "objective": objective.value,
        "candidates": len(cands.sets),
        "candidates_truncated": cands.truncated,
        "coreset_size": w.size,
        "guess_space_exhaustive": not cands.truncated,
    }
    return Solution(best_set, final, out_cost, meta)


@dataclass
class LiftContext:
    """Rebuilds a full-instance assignment from a coreset solution."""

    ds: Dataset
    epsilon: float
    objective: Objective

    def lift(self, g: ConstraintMatrix, centers, budgets=None) -> Assignment:
        return restore_assignment(
            self.ds, g, centers, self.epsilon, self.objective, budgets=budgets
        )


def reduce_instance(
    ds: Dataset, k: int, epsilon: float, objective: Objective, seed: int = 0
) -> tuple[WeightedSet, LiftContext]:
    """Compress the instance to a coreset plus a lift closure.

    The coreset error eps0 = epsilon / 5 satisfies
    (1 + 3 eps0)(1 + eps0) <= 1 + epsilon for epsilon <= 1, so any
    gamma-approximate solution on the coreset lifts to a
    (1 + epsilon) gamma approximation of the original instance.
    """
    eps0 = epsilon / 5.0
    w = build_universal_coreset(ds, k, eps0, objective, seed=seed)
    return w, LiftContext(ds, 3.0 * eps0, objective)


def constrained_cluster(
    ds: Dataset,
    k: int,
    epsilon: float,
    objective: Objective,
    constraint: ClusterConstraint,
    regime: Optional[Regime] = None,
    seed: int = 0,
    guess_budget: int = 1_000_000,
    trials: int = 32,
) -> Solution:
    """One front door for every supported constraint.

    Balance and diversity constraints run the quota program; size bounds and
    chromatic constraints run their network flows. The chromatic metric
    pipeline cannot pre-bound the aspect ratio, so it enumerates the raw
    distinct-distance grid and reports its size.
    """
    regime = regime or regime_of(ds)
    name = type(constraint).__name__.lower()
    if regime is Regime.EUCLIDEAN and not isinstance(constraint, Chromatic):
        return _euclidean_cluster(
            ds, k, epsilon, objective, constraint, seed, trials, 20_000, f"{name}-euclidean"
        )
    return _metric_cluster(
        ds, k, epsilon, objective, constraint, seed, guess_budget, f"{name}-metric"
    )


def _derive(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])
