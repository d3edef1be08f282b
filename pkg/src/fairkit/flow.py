"""Integral minimum-cost flow and the flow-shaped assignment problems:
per-class transport, lower-bounded, capacitated and chromatic assignment,
plus the geometric cost-rounding grid used to compress cost ranges.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    Assignment,
    Dataset,
    InfeasibleError,
    MetricSpace,
    Objective,
)

__all__ = [
    "FlowNetwork",
    "FlowResult",
    "min_cost_flow",
    "class_transport",
    "cost_rounding",
    "lower_bounded_assign",
    "capacitated_assign",
    "chromatic_assign",
]


class FlowNetwork:
    """Node supplies/demands plus capacitated arcs with non-negative costs.

    Supplies are integers (positive = source, negative = sink) and must sum
    to zero before solving. ``capacity=None`` means unbounded.
    """

    def __init__(self):
        self.supplies: list[int] = []
        self.arc_tail: list[int] = []
        self.arc_head: list[int] = []
        self.arc_cap: list[Optional[int]] = []
        self.arc_cost: list[float] = []

    def add_node(self, supply: int = 0) -> int:
        self.supplies.append(int(supply))
        return len(self.supplies) - 1

    def add_arc(self, u: int, v: int, capacity: Optional[int], cost: float) -> int:
        if cost < 0:
            raise ValueError("arc costs must be non-negative")
        if capacity is not None and capacity < 0:
            raise ValueError("arc capacities must be non-negative")
        self.arc_tail.append(u)
        self.arc_head.append(v)
        self.arc_cap.append(None if capacity is None else int(capacity))
        self.arc_cost.append(float(cost))
        return len(self.arc_tail) - 1

    @property
    def n_nodes(self) -> int:
        return len(self.supplies)

    @property
    def n_arcs(self) -> int:
        return len(self.arc_tail)


@dataclass
class FlowResult:
    arc_flow: np.ndarray
    total_cost: float
    feasible: bool


def min_cost_flow(net: FlowNetwork) -> FlowResult:
    """Optimal integral flow by successive shortest augmenting paths.

    Dijkstra runs on reduced costs kept non-negative by node potentials, so
    float costs are fine as long as the original arcs are non-negative. Arcs
    are relaxed in insertion order and improvements must be strict, which
    breaks equal-length-path ties toward the smallest arc id. Supplies and
    capacities are integral, hence so is the returned flow. ``feasible`` is
    False when some supply cannot reach a deficit.
    """
    if sum(net.supplies) != 0:
        raise ValueError("network is unbalanced: supplies must sum to zero")
    n = net.n_nodes
    m = net.n_arcs
    total_supply = sum(s for s in net.supplies if s > 0)
    # residual arcs: even ids forward, odd ids backward
    res_cap = np.empty(2 * m, dtype=np.int64)
    res_cost = np.empty(2 * m, dtype=float)
    res_head = np.empty(2 * m, dtype=np.int64)
    adj: list[list[int]] = [[] for _ in range(n)]
    for a in range(m):
        cap = net.arc_cap[a]
        res_cap[2 * a] = total_supply if cap is None else cap
        res_cap[2 * a + 1] = 0
        res_cost[2 * a] = net.arc_cost[a]
        res_cost[2 * a + 1] = -net.arc_cost[a]
        res_head[2 * a] = net.arc_head[a]
        res_head[2 * a + 1] = net.arc_tail[a]
        adj[net.arc_tail[a]].append(2 * a)
        adj[net.arc_head[a]].append(2 * a + 1)

    excess = np.array(net.supplies, dtype=np.int64)
    potential = np.zeros(n, dtype=float)
    feasible = True
    while True:
        sources = np.nonzero(excess > 0)[0]
        if sources.size == 0:
            break
        s = int(sources[0])
        dist = np.full(n, np.inf)
        dist[s] = 0.0
        parent_arc = np.full(n, -1, dtype=np.int64)
        done = np.zeros(n, dtype=bool)
        heap = [(0.0, s)]
        target = -1
        while heap:
            d, u = heapq.heappop(heap)
            if done[u]:
                continue
            done[u] = True
            if excess[u] < 0 and target < 0:
                target = u
                break
            for r in adj[u]:
                if res_cap[r] <= 0:
                    continue
                v = int(res_head[r])
                if done[v]:
                    continue
                nd = d + res_cost[r] + potential[u] - potential[v]
                if nd < dist[v] - 1e-15:
                    dist[v] = nd
                    parent_arc[v] = r
                    heapq.heappush(heap, (nd, v))
        if target < 0:
            feasible = False
            break
        d_target = dist[target]
        potential += np.minimum(dist, d_target)
        # bottleneck along the path
        push = min(int(excess[s]), int(-excess[target]))
        v = target
        while v != s:
            r = int(parent_arc[v])
            push = min(push, int(res_cap[r]))
            v = int(res_head[r ^ 1])
        v = target
        while v != s:
            r = int(parent_arc[v])
            res_cap[r] -= push
            res_cap[r ^ 1] += push
            v = int(res_head[r ^ 1])
        excess[s] -= push
        excess[target] += push

    flow = res_cap[1::2].copy()
    total_cost = float(np.dot(flow, np.array(net.arc_cost)))
    return FlowResult(arc_flow=flow, total_cost=total_cost, feasible=feasible)


def cost_rounding(
    costs: np.ndarray, epsilon0: float, budget: float, total_weight: int
) -> np.ndarray:
    """Snap costs onto the geometric grid (1 + epsilon0)^q * d_min.

    Costs above d_max = 2 * budget clamp down to d_max, costs below
    d_min = epsilon0 * budget / (2 * total_weight) clamp up to d_min, and
    everything in between rounds up to the next grid value. With budget at
    least the optimal transport cost this perturbs the optimum by at most a
    (1 + 2 * epsilon0) factor plus an epsilon0 * budget additive term.
    A zero budget (all-zero instance) leaves costs untouched.
    """
    costs = np.asarray(costs, dtype=float)
    if budget <= 0:
        return costs.copy()
    if epsilon0 <= 0:
        raise ValueError("epsilon0 must be positive")
    d_max = 2.0 * budget
    d_min = epsilon0 * budget / (2.0 * max(1, total_weight))
    out = np.empty_like(costs)
    log_base = math.log1p(epsilon0)
    for idx, c in np.ndenumerate(costs):
        if c > d_max:
            out[idx] = d_max
        elif c < d_min:
            out[idx] = d_min
        else:
            q = math.ceil(math.log(c / d_min) / log_base - 1e-12)
            out[idx] = d_min * (1.0 + epsilon0) ** q
    return out


def class_transport(
    metric_source,
    point_ids: Sequence[int],
    point_weights: Sequence[int],
    centers: Sequence,
    demands: Sequence[int],
    objective: Objective,
    rounding: Optional[tuple[float, float]] = None,
) -> tuple[dict, float]:
    """Min-cost integral transport of one class to centers with fixed quotas.

    ``demands[j]`` is the exact weight center j must receive; quotas must sum
    to the class weight. With ``rounding=(epsilon0, budget)`` the arc costs
    pass through :func:`cost_rounding` first, but the reported cost always
    uses true distances. Returns (sparse weight map, cost).
    """
    metric = metric_source.metric if isinstance(metric_source, Dataset) else metric_source
    demands = np.asarray(demands, dtype=np.int64)
    if np.any(demands < 0):
        raise ValueError("negative demand in transport quotas")
    weights = np.asarray(point_weights, dtype=np.int64)
    if int(weights.sum()) != int(demands.sum()):
        raise ValueError("transport quotas do not match the class weight")
    point_ids = [int(p) for p in point_ids]
    k = len(centers)
    power = objective.power
    idx = np.asarray(point_ids, dtype=np.int64)
    dist = np.column_stack([metric.center_dists(c)[idx] for c in centers]) ** power
    costs = dist
    if rounding is not None:
        eps0, budget = rounding
        costs = cost_rounding(dist, eps0, budget, int(weights.sum()))

    net = FlowNetwork()
    p_nodes = [net.add_node(int(w)) for w in weights]
    c_nodes = [net.add_node(-int(g)) for g in demands]
    arc_of = {}
    for a in range(len(point_ids)):
        for j in range(k):
            arc_of[(a, j)] = net.add_arc(p_nodes[a], c_nodes[j], None, costs[a, j])
    result = min_cost_flow(net)
    if not result.feasible:
        raise InfeasibleError("transport quotas are unroutable")
    fragment: dict = {}
    true_cost = 0.0
    for (a, j), arc in arc_of.items():
        f = int(result.arc_flow[arc])
        if f > 0:
            fragment[(point_ids[a], j)] = fragment.get((point_ids[a], j), 0) + f
            true_cost += f * dist[a, j]
    return fragment, true_cost


def _resolve_weights(ds: Dataset, weights):
    if weights is None:
        return np.ones(ds.n, dtype=np.int64)
    w = np.asarray(weights, dtype=np.int64)
    if w.shape != (ds.n,):
        raise ValueError("weights must have one entry per point")
    return w


def lower_bounded_assign(
    ds: Dataset,
    centers: Sequence,
    lower: int,
    objective: Objective = Objective.MEDIAN,
    weights=None,
    epsilon: float = 0.0,
) -> Assignment:
    """Min-cost assignment in which every cluster receives at least ``lower``.

    The network routes exactly ``lower`` units to each center; the remaining
    mass flows through an auxiliary node priced at each point's distance to
    the nearest center, and is afterwards attached to that nearest center
    (lowest index on ties). ``epsilon > 0`` re-solves on the rounding grid
    with the exact optimum as budget, mirroring the cost-scaled variant;
    the default is the exact solve.
    """
    w = _resolve_weights(ds, weights)
    total = int(w.sum())
    k = len(centers)
    if total < k * lower:
        raise InfeasibleError(f"total weight {total} cannot fill {k} clusters of size {lower}")
    power = objective.power
    dist = np.column_stack([ds.metric.center_dists(c) for c in centers]) ** power
    nearest = np.argmin(dist, axis=1)
    near_cost = dist[np.arange(ds.n), nearest]

    def solve(point_center_costs, aux_costs):
        net = FlowNetwork()
        p_nodes = [net.add_node(int(wi)) for wi in w]
        c_nodes = [net.add_node(0) for _ in range(k)]
        w_node = net.add_node(0)
        t_node = net.add_node(-total)
        pc_arcs = {}
        for i in range(ds.n):
            for j in range(k):
                pc_arcs[(i, j)] = net.add_arc(p_nodes[i], c_nodes[j], None, point_center_costs[i, j])
        pw_arcs = [net.add_arc(p_nodes[i], w_node, None, aux_costs[i]) for i in range(ds.n)]
        for j in range(k):
            net.add_arc(c_nodes[j], t_node, lower, 0.0)
        net.add_arc(w_node, t_node, total - k * lower, 0.0)
        res = min_cost_flow(net)
        if not res.feasible:
            raise InfeasibleError("lower-bounded network is unroutable")
        return res, pc_arcs, pw_arcs

    pc_costs, aux_costs = dist, near_cost
    if epsilon > 0:
        exact, _, _ = solve(dist, near_cost)
        budget = exact.total_cost
        eps0 = epsilon / 6.0
        pc_costs = cost_rounding(dist, eps0, budget, total)
        aux_costs = cost_rounding(near_cost, eps0, budget, total)
    res, pc_arcs, pw_arcs = solve(pc_costs, aux_costs)

    weights_map: dict = {}
    for (i, j), arc in pc_arcs.items():
        f = int(res.arc_flow[arc])
        if f > 0:
            weights_map[(i, j)] = weights_map.get((i, j), 0) + f
    for i, arc in enumerate(pw_arcs):
        f = int(res.arc_flow[arc])
        if f > 0:
            j = int(nearest[i])
            weights_map[(i, j)] = weights_map.get((i, j), 0) + f
    return Assignment(tuple(centers), weights_map, objective)


def capacitated_assign(
    ds: Dataset,
    centers: Sequence,
    capacity: int,
    objective: Objective = Objective.MEDIAN,
    weights=None,
) -> Assignment:
    """Min-cost assignment with every cluster holding at most ``capacity``."""
    w = _resolve_weights(ds, weights)
    total = int(w.sum())
    k = len(centers)
    if total > k * capacity:
        raise InfeasibleError(f"total weight {total} exceeds {k} clusters of capacity {capacity}")
    power = objective.power
    dist = np.column_stack([ds.metric.center_dists(c) for c in centers]) ** power
    net = FlowNetwork()
    p_nodes = [net.add_node(int(wi)) for wi in w]
    c_nodes = [net.add_node(0) for _ in range(k)]
    t_node = net.add_node(-total)
    pc_arcs = {}
    for i in range(ds.n):
        for j in range(k):
            pc_arcs[(i, j)] = net.add_arc(p_nodes[i], c_nodes[j], None, dist[i, j])
    for j in range(k):
        net.add_arc(c_nodes[j], t_node, capacity, 0.0)
    res = min_cost_flow(net)
    if not res.feasible:
        raise InfeasibleError("capacitated network is unroutable")
    weights_map = {
        (i, j): int(res.arc_flow[arc])
        for (i, j), arc in pc_arcs.items()
        if res.arc_flow[arc] > 0
    }
    return Assignment(tuple(centers), weights_map, objective)


def chromatic_assign(
    ds: Dataset,
    centers: Sequence,
    objective: Objective = Objective.MEDIAN,
    weights=None,
) -> Assignment:
    """Min-cost assignment with at most one unit of each color per cluster.

    Colors are the dataset's groups, which must be disjoint. Colors do not
    interact, so the global optimum is the sum of independent per-color
    min-cost matchings, realized as one flow per color with unit
    (center, color) capacities.
    """
    counts = np.zeros(ds.n, dtype=np.int64)
    for g in ds.groups:
        for p in g:
            counts[p] += 1
    if np.any(counts > 1):
        raise ValueError("chromatic assignment needs disjoint color classes")
    w = _resolve_weights(ds, weights)
    k = len(centers)
    power = objective.power
    weights_map: dict = {}
    for color, members in enumerate(ds.groups):
        ids = sorted(members)
        if not ids:
            continue
        mass = int(w[ids].sum())
        if mass > k:
            raise InfeasibleError(f"color {color} has weight {mass} > {k} clusters")
        net = FlowNetwork()
        p_nodes = {i: net.add_node(int(w[i])) for i in ids}
        c_nodes = [net.add_node(0) for _ in range(k)]
        t_node = net.add_node(-mass)
        arcs = {}
        for i in ids:
            for j, c in enumerate(centers):
                cost = ds.metric.center_dist(i, c) ** power
                arcs[(i, j)] = net.add_arc(p_nodes[i], c_nodes[j], 1, cost)
        for j in range(k):
            net.add_arc(c_nodes[j], t_node, 1, 0.0)
        res = min_cost_flow(net)
        if not res.feasible:
            raise InfeasibleError(f"color {color} cannot be spread over {k} clusters")
        for (i, j), arc in arcs.items():
            f = int(res.arc_flow[arc])
            if f > 0:
                weights_map[(i, j)] = weights_map.get((i, j), 0) + f
    return Assignment(tuple(centers), weights_map, objective)
