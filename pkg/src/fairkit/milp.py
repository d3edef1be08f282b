"""Exact fair assignment on weighted point sets.

The assignment problem with balance constraints is NP-hard, so the exact
solver runs branch-and-bound over the k * Gamma integral per-class cluster
quotas, bounding each node with an LP relaxation solved by a self-contained
primal simplex. Once the quotas are integral the per-point transport is
recovered by min-cost flow, which is automatically integral.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .core import (
    Assignment,
    BudgetExceededError,
    ConstraintMatrix,
    Dataset,
    FairnessSpec,
    InfeasibleError,
    Objective,
    WeightedSet,
    matrix_fairness_violations,
)
from .flow import class_transport, cost_rounding

__all__ = [
    "LinearProgram",
    "SimplexResult",
    "simplex_solve",
    "FairAssignResult",
    "fair_assign_exact",
    "restore_assignment",
    "fair_assign_approx",
]


@dataclass
class LinearProgram:
    """min c.x subject to A_ub.x <= b_ub, A_eq.x = b_eq, x >= 0."""

    c: np.ndarray
    a_ub: np.ndarray
    b_ub: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        nvar = self.c.size
        self.a_ub = np.asarray(self.a_ub, dtype=float).reshape(-1, nvar)
        self.b_ub = np.asarray(self.b_ub, dtype=float).reshape(-1)
        self.a_eq = np.asarray(self.a_eq, dtype=float).reshape(-1, nvar)
        self.b_eq = np.asarray(self.b_eq, dtype=float).reshape(-1)
        if self.a_ub.shape[0] != self.b_ub.size or self.a_eq.shape[0] != self.b_eq.size:
            raise ValueError("constraint matrix and right-hand side sizes disagree")
        for arr in (self.c, self.a_ub, self.b_ub, self.a_eq, self.b_eq):
            if not np.all(np.isfinite(arr)):
                raise ValueError("linear program coefficients must be finite")


@dataclass
class SimplexResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: Optional[np.ndarray]
    value: Optional[float]


_TOL = 1e-9


def simplex_solve(lp: LinearProgram, max_iter: int = 50_000) -> SimplexResult:
    """Two-phase primal simplex on a dense tableau.

    Pivots use Dantzig's rule and fall back to Bland's rule after a stall,
    which guarantees termination on degenerate problems. Phase one drives
    artificial variables out of the basis; a positive phase-one optimum means
    the program is infeasible.
    """
    nvar = lp.c.size
    n_ub = lp.b_ub.size
    a = np.vstack([
        np.hstack([lp.a_ub, np.eye(n_ub)]) if n_ub else np.empty((0, nvar)),
        np.hstack([lp.a_eq, np.zeros((lp.b_eq.size, n_ub))]) if lp.b_eq.size else np.empty((0, nvar + n_ub)),
    ])
    b = np.concatenate([lp.b_ub, lp.b_eq])
    m = b.size
    if m == 0:
        if np.any(lp.c < -_TOL):
            return SimplexResult("unbounded", None, None)
        return SimplexResult("optimal", np.zeros(nvar), 0.0)
    neg = b < 0
    a[neg] *= -1
    b = np.abs(b)
    total = nvar + n_ub
    # artificials complete the identity basis for phase one
    tableau = np.hstack([a, np.eye(m), b[:, None]])
    basis = list(range(total, total + m))

    phase1 = np.zeros(total + m)
    phase1[total:] = 1.0
    value, status = _run_simplex(tableau, basis, phase1, max_iter)
    if status != "optimal":
        return SimplexResult("infeasible", None, None)
    if value > 1e-7:
        return SimplexResult("infeasible", None, None)
    redundant = _evict_artificials(tableau, basis, total)
    if redundant:
        keep_rows = [r for r in range(m) if r not in redundant]
        tableau = tableau[keep_rows]
        basis = [basis[r] for r in keep_rows]
    keep = np.concatenate([np.arange(total), [total + m]])
    tableau = tableau[:, keep]

    phase2 = np.zeros(total)
    phase2[:nvar] = lp.c
    value, status = _run_simplex(tableau, basis, phase2, max_iter)
    if status == "unbounded":
        return SimplexResult("unbounded", None, None)
    x = np.zeros(total)
    for row, col in enumerate(basis):
        if col < total:
            x[col] = tableau[row, -1]
    sol = x[:nvar]
    return SimplexResult("optimal", sol, float(lp.c @ sol))


def _run_simplex(tableau, basis, costs, max_iter):
    m = tableau.shape[0]
    width = tableau.shape[1] - 1
    stall = 0
    last = math.inf
    bland = False
    for _ in range(max_iter):
        cb = costs[basis]
        reduced = costs[:width] - cb @ tableau[:, :width]
        reduced[np.asarray(basis)] = 0.0
        if bland:
            negatives = np.nonzero(reduced < -_TOL)[0]
            if negatives.size == 0:
                return float(cb @ tableau[:, -1]), "optimal"
            enter = int(negatives[0])
        else:
            enter = int(np.argmin(reduced))
            if reduced[enter] >= -_TOL:
                return float(cb @ tableau[:, -1]), "optimal"
        col = tableau[:, enter]
        positive = col > _TOL
        if not np.any(positive):
            return math.inf, "unbounded"
        ratios = np.full(m, np.inf)
        ratios[positive] = tableau[positive, -1] / col[positive]
        best = ratios.min()
        tied = np.nonzero(ratios <= best + 1e-12)[0]
        if bland:
            # anti-cycling: leave by smallest basic-variable index
            leave = int(min(tied, key=lambda r: basis[r]))
        else:
            leave = int(tied[0])
        pivot = tableau[leave, enter]
        tableau[leave] /= pivot
        other = np.arange(m) != leave
        tableau[other] -= np.outer(tableau[other, enter], tableau[leave])
        basis[leave] = enter
        obj = float(costs[basis] @ tableau[:, -1])
        if obj < last - 1e-12:
            last = obj
            stall = 0
        else:
            stall += 1
            if stall > 2 * (m + width):
                bland = True
    raise BudgetExceededError("simplex iteration limit reached")


def _evict_artificials(tableau, basis, total) -> set[int]:
    """Pivot basic artificials out; return the redundant rows that cannot be."""
    m = tableau.shape[0]
    redundant: set[int] = set()
    for row in range(m):
        if basis[row] < total:
            continue
        candidates = np.nonzero(np.abs(tableau[row, :total]) > 1e-9)[0]
        if candidates.size:
            enter = int(candidates[0])
            pivot = tableau[row, enter]
            tableau[row] /= pivot
            other = np.arange(m) != row
            tableau[other] -= np.outer(tableau[other, enter], tableau[row])
            basis[row] = enter
        else:
            # all-zero over real variables: the original row was redundant
            redundant.add(row)
    return redundant


@dataclass
class FairAssignResult:
    g: Optional[ConstraintMatrix]
    assignment: Optional[Assignment]
    cost: Optional[float]
    status: str  # "optimal" | "infeasible"
    nodes_explored: int = 0


def _center_costs(ds: Dataset, w: WeightedSet, centers, objective: Objective) -> np.ndarray:
    idx = w.point_ids
    cols = [ds.metric.center_dists(c)[idx] for c in centers]
    return np.column_stack(cols) ** objective.power


class _FairLP:
    """LP relaxation shared by all branch-and-bound nodes.

    Variables are the per-(point, center) flows followed by the per-(class,
    center) quotas g. Balance rows see only the quotas, so the relaxation is
    exactly the continuous version of the quota program. Balance rows get a
    hair of absolute slack against float rounding; integral candidates are
    re-checked with exact rationals before they may become incumbents.
    """

    def __init__(self, ds: Dataset, w: WeightedSet, dist: np.ndarray, spec: FairnessSpec):
        nw, k = dist.shape
        gamma = ds.n_classes
        self.nw, self.k, self.gamma = nw, k, gamma
        nf = nw * k
        nvar = nf + k * gamma
        self.nvar = nvar

        def gvar(t, j):
            return nf + t * k + j

        a_eq = []
        b_eq = []
        for i in range(nw):
            row = np.zeros(nvar)
            row[i * k : (i + 1) * k] = 1.0
            a_eq.append(row)
            b_eq.append(float(w.weights[i]))
        for t in range(gamma):
            members = np.nonzero(w.class_ids == t)[0]
            for j in range(k):
                row = np.zeros(nvar)
                row[members * k + j] = 1.0
                row[gvar(t, j)] = -1.0
                a_eq.append(row)
                b_eq.append(0.0)

        a_ub = []
        b_ub = []
        slack = 1e-7 * max(1, w.total_weight())
        for j in range(k):
            for q in range(spec.n_groups):
                in_group = [t for t in range(gamma) if q in ds.class_groups[t]]
                lo = np.zeros(nvar)
                hi = np.zeros(nvar)
                for t in range(gamma):
                    lo[gvar(t, j)] = float(spec.beta[q])
                    hi[gvar(t, j)] = -float(spec.alpha[q])
                for t in in_group:
                    lo[gvar(t, j)] -= 1.0
                    hi[gvar(t, j)] += 1.0
                a_ub.append(lo)
                b_ub.append(slack)
                a_ub.append(hi)
                b_ub.append(slack)

        self.base_a_eq = np.array(a_eq)
        self.base_b_eq = np.array(b_eq)
        self.base_a_ub = np.array(a_ub) if a_ub else np.empty((0, nvar))
        self.base_b_ub = np.array(b_ub)
        self.c = np.concatenate([dist.reshape(-1), np.zeros(k * gamma)])
        self.nf = nf

    def solve(self, lower: np.ndarray, upper: np.ndarray) -> SimplexResult:
        rows = []
        rhs = []
        ng = self.k * self.gamma
        for v in range(ng):
            if upper[v] < np.inf:
                row = np.zeros(self.nvar)
                row[self.nf + v] = 1.0
                rows.append(row)
                rhs.append(float(upper[v]))
            if lower[v] > 0:
                row = np.zeros(self.nvar)
                row[self.nf + v] = -1.0
                rows.append(row)
                rhs.append(-float(lower[v]))
        a_ub = np.vstack([self.base_a_ub] + rows) if rows else self.base_a_ub
        b_ub = np.concatenate([self.base_b_ub, np.array(rhs)]) if rhs else self.base_b_ub
        lp = LinearProgram(self.c, a_ub, b_ub, self.base_a_eq, self.base_b_eq)
        return simplex_solve(lp)


def fair_assign_exact(
    ds: Dataset,
    w: WeightedSet,
    centers: Sequence,
    spec: FairnessSpec,
    objective: Objective,
    node_limit: int = 100_000,
) -> FairAssignResult:
    """Optimal fair assignment of a weighted set to fixed centers.

    Branch-and-bound over the integral quotas g[t][j]: each node solves the
    LP relaxation for a bound, branches on the most fractional quota with
    floor/ceil children, and integral quota vectors are evaluated exactly by
    per-class transport. Infeasibility (too strict a balance requirement) is
    a valid outcome, reported in ``status``.
    """
    if w.size == 0:
        raise ValueError("cannot assign an empty weighted set")
    k = len(centers)
    if k < 1:
        raise ValueError("need at least one center")
    dist = _center_costs(ds, w, centers, objective)
    gamma = ds.n_classes
    lp = _FairLP(ds, w, dist, spec)
    class_weights = w.class_weights(gamma)

    ng = k * gamma
    lower0 = np.zeros(ng)
    upper0 = np.repeat(class_weights, k).astype(float)

    best_value = math.inf
    best_g: Optional[np.ndarray] = None
    nodes = 0

    incumbent = _greedy_incumbent(ds, w, dist, spec, class_weights)
    if incumbent is not None:
        best_value, best_g = incumbent

    stack = [(lower0, upper0)]
    while stack:
        lower, upper = stack.pop()
        nodes += 1
        if nodes > node_limit:
            raise BudgetExceededError("branch-and-bound node limit reached")
        res = lp.solve(lower, upper)
        if res.status != "optimal":
            continue
        if res.value >= best_value - 1e-9 * max(1.0, abs(best_value)):
            continue
        gvals = res.x[lp.nf :]
        frac = np.abs(gvals - np.round(gvals))
        branch = int(np.argmax(frac))
        if frac[branch] <= 1e-6:
            g_int = np.round(gvals).astype(np.int64).reshape(gamma, k)
            m = ConstraintMatrix(g_int.T.copy())
            if not np.array_equal(m.column_sums(), class_weights):
                continue
            if matrix_fairness_violations(m, ds, spec):
                continue
            if res.value < best_value:
                best_value = res.value
                best_g = g_int
            continue
        val = gvals[branch]
        lo_child_upper = upper.copy()
        lo_child_upper[branch] = math.floor(val)
        hi_child_lower = lower.copy()
        hi_child_lower[branch] = math.ceil(val)
        children = [(lower, lo_child_upper), (hi_child_lower, upper)]
        if val - math.floor(val) >= 0.5:
            children.reverse()
        # explore the child nearer the LP optimum first
        stack.extend(children[::-1])

    if best_g is None:
        return FairAssignResult(None, None, None, "infeasible", nodes)

    weights_map: dict = {}
    total_cost = 0.0
    for t in range(gamma):
        members = np.nonzero(w.class_ids == t)[0]
        fragment, cost = class_transport(
            ds,
            w.point_ids[members],
            w.weights[members],
            centers,
            best_g[t],
            objective,
        )
        total_cost += cost
        for key, val in fragment.items():
            weights_map[key] = weights_map.get(key, 0) + val
    asg = Assignment(tuple(centers), weights_map, objective)
    g_matrix = ConstraintMatrix(best_g.T.copy())
    return FairAssignResult(g_matrix, asg, total_cost, "optimal", nodes)


def _greedy_incumbent(ds, w, dist, spec, class_weights):
    """Nearest-center quotas as a starting incumbent, if they happen to be fair."""
    nearest = np.argmin(dist, axis=1)
    gamma = class_weights.size
    k = dist.shape[1]
    g = np.zeros((gamma, k), dtype=np.int64)
    cost = 0.0
    for i in range(w.size):
        g[w.class_ids[i], nearest[i]] += w.weights[i]
        cost += w.weights[i] * dist[i, nearest[i]]
    m = ConstraintMatrix(g.T.copy())
    if matrix_fairness_violations(m, ds, spec):
        return None
    return cost, g


def restore_assignment(
    ds: Dataset,
    g: ConstraintMatrix,
    centers: Sequence,
    epsilon: float,
    objective: Objective,
    budgets: Optional[Sequence[float]] = None,
) -> Assignment:
    """Expand per-class quotas on the full point set into an assignment.

    Each class is transported independently onto its quota row through the
    rounding grid with epsilon0 = epsilon / 6, keeping the total cost within
    (1 + epsilon) of the exact per-class optima. ``budgets[t]`` caps the
    grid for class t; it should upper-bound the class's optimal transport
    cost (the coreset pipeline passes its per-class solution costs) and is
    computed exactly when omitted. The result is fair whenever the quota
    matrix satisfies the balance inequalities, because fairness is decided
    by the quotas alone.
    """
    sizes = ds.class_sizes()
    if g.n_classes != ds.n_classes or not np.array_equal(g.column_sums(), sizes):
        raise ValueError("quota column sums must equal the class sizes")
    eps0 = epsilon / 6.0
    weights_map: dict = {}
    for t in range(ds.n_classes):
        members = ds.class_members(t)
        unit = np.ones(members.size, dtype=np.int64)
        if budgets is not None:
            budget = float(budgets[t])
        else:
            _, budget = class_transport(ds, members, unit, centers, g.entries[:, t], objective)
        fragment, _ = class_transport(
            ds,
            members,
            unit,
            centers,
            g.entries[:, t],
            objective,
            rounding=(eps0, budget) if eps0 > 0 else None,
        )
        for key, val in fragment.items():
            weights_map[key] = weights_map.get(key, 0) + val
    return Assignment(tuple(centers), weights_map, objective)


def fair_assign_approx(
    ds: Dataset,
    centers: Sequence,
    spec: FairnessSpec,
    epsilon: float,
    objective: Objective,
    seed: int = 0,
) -> Assignment:
    """Near-optimal fair assignment via a coreset round trip.

    Build a coreset with error eps0 = epsilon / 5, solve the exact quota
    program on it, then restore the quotas on the full point set; the factor
    (1 + 3 eps0)(1 + eps0) <= 1 + epsilon covers both stages for
    epsilon <= 1. Infeasibility propagates.
    """
    from .coreset import build_universal_coreset

    eps0 = epsilon / 5.0
    k = len(centers)
    w = build_universal_coreset(ds, k, eps0, objective, seed=seed)
    res = fair_assign_exact(ds, w, centers, spec, objective)
    if res.status != "optimal":
        raise InfeasibleError("no fair assignment exists for this specification")
    budgets = _per_class_costs(ds, res.assignment, objective)
    return restore_assignment(ds, res.g, centers, 3.0 * eps0, objective, budgets=budgets)


def _per_class_costs(ds: Dataset, asg: Assignment, objective: Objective) -> np.ndarray:
    power = objective.power
    out = np.zeros(ds.n_classes)
    for (pid, j), weight in asg.weights.items():
        d = ds.metric.center_dist(pid, asg.centers[j])
        out[int(ds.class_index[pid])] += weight * d**power
    return out
