"""Universal coreset construction.

Points are bucketed into geometric rings around the bicriteria scaffold
centers; every (center, ring, class) cell is subsampled uniformly without
replacement and reweighted so that per-class total weight is conserved
exactly. The resulting weighted set preserves, within (1 +- eps), the
optimal assignment cost for every center set and every per-class quota
matrix, which is what the solvers downstream rely on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .core import Dataset, EuclideanMetric, Objective, WeightedSet
from .seeding import BicriteriaSolution, bicriteria_seed

__all__ = [
    "Regime",
    "RingDecomposition",
    "SamplingPlan",
    "ring_decompose",
    "sample_size",
    "sample_ring_class",
    "build_universal_coreset",
]

DEFAULT_C_MED = 4.0
DEFAULT_C_MEAN = 4.0


class Regime(str, Enum):
    METRIC = "metric"
    EUCLIDEAN = "euclidean"


def regime_of(ds: Dataset) -> Regime:
    return Regime.EUCLIDEAN if isinstance(ds.metric, EuclideanMetric) else Regime.METRIC


@dataclass(frozen=True, eq=False)
class RingDecomposition:
    """Ring index per point around its nearest bicriteria center.

    Ring 0 owns distances in [0, mu]; ring j >= 1 owns (2^(j-1) mu, 2^j mu],
    closed above, so the maximal occupied ring is at most ``n_rings``. The
    scaffold cost for the means objective is a sum of squared distances
    while rings partition plain distances, so there mu is the square root
    of the average scaffold cost; this is what keeps every point inside the
    top ring.
    """

    bicriteria: BicriteriaSolution
    mu: float
    n_rings: int
    ring_center: np.ndarray
    ring_index: np.ndarray

    def cells(self, class_index: np.ndarray):
        """Deterministic iteration over occupied (center, ring, class) cells."""
        keys = np.stack([self.ring_center, self.ring_index, class_index])
        order = np.lexsort(keys[::-1])
        sorted_keys = keys[:, order]
        boundaries = np.nonzero(np.any(np.diff(sorted_keys, axis=1) != 0, axis=0))[0] + 1
        for chunk in np.split(order, boundaries):
            i, j, t = (int(v) for v in keys[:, chunk[0]])
            yield (i, j, t), np.sort(chunk)


@dataclass(frozen=True)
class SamplingPlan:
    """Per-cell sample size plus the constants that produced it."""

    s: int
    objective: Objective
    regime: Regime
    c_med: float = DEFAULT_C_MED
    c_mean: float = DEFAULT_C_MEAN
    c_b: float = 1.0

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("sample size must be at least 1")


def sample_size(
    n: float,
    k: int,
    epsilon: float,
    objective: Objective,
    regime: Regime = Regime.METRIC,
    d: Optional[int] = None,
    c_med: float = DEFAULT_C_MED,
    c_mean: float = DEFAULT_C_MEAN,
    c_b: float = 1.0,
    strict_kmeans_rescale: bool = False,
) -> SamplingPlan:
    """Per-(ring, class) sample size.

    Metric median: s = ceil(c_med * k * ln n / eps^3); metric means uses
    eps^5. The Euclidean regime enlarges ln n to ln n + c_b * d * ln(1/eps)
    to absorb the continuum of center choices. ``strict_kmeans_rescale``
    additionally shrinks eps by a k * ln n factor for the means objective;
    at library scale that forces s >= n, so it is off by default and
    empirical quality is the acceptance bar.
    """
    if n < 2:
        raise ValueError("need at least two points")
    if not (0 < epsilon <= 1):
        raise ValueError("epsilon must be in (0, 1]")
    eps = epsilon
    if strict_kmeans_rescale and objective is Objective.MEANS:
        eps = epsilon / max(1.0, k * math.log(n))
    logn = math.log(n)
    if regime is Regime.EUCLIDEAN:
        if d is None:
            raise ValueError("Euclidean regime needs the dimension d")
        if eps < 1:
            logn = logn + c_b * d * math.log(1.0 / eps)
    if objective is Objective.MEDIAN:
        s = math.ceil(c_med * k * logn / eps**3)
    else:
        s = math.ceil(c_mean * k * logn / eps**5)
    return SamplingPlan(max(1, int(s)), objective, regime, c_med, c_mean, c_b)


def ring_decompose(ds: Dataset, bic: BicriteriaSolution, weights=None) -> RingDecomposition:
    """Map every point to its (bicriteria center, ring) cell.

    A degenerate scaffold (cost 0, every point on a center) maps everything
    to ring 0; the coreset builder then just collapses multiplicities.
    """
    w = np.ones(ds.n, dtype=np.int64) if weights is None else np.asarray(weights, dtype=np.int64)
    total = int(w.sum())
    nu = bic.nu
    n_rings = max(1, math.ceil(math.log2(max(2.0, nu * total))))
    if bic.cost <= 0:
        mu = 0.0
        ring_index = np.zeros(ds.n, dtype=np.int64)
    else:
        avg = bic.cost / (nu * total)
        mu = avg if bic.objective is Objective.MEDIAN else math.sqrt(avg)
        ring_index = _ring_of(bic.nearest_dist, mu, n_rings)
    ring_center = bic.nearest_center.astype(np.int64)
    ring_center.setflags(write=False)
    ring_index.setflags(write=False)
    return RingDecomposition(bic, mu, n_rings, ring_center, ring_index)


def _ring_of(dist: np.ndarray, mu: float, n_rings: int) -> np.ndarray:
    out = np.zeros(dist.size, dtype=np.int64)
    positive = dist > mu
    ratio = np.where(positive, dist / mu, 1.0)
    raw = np.ceil(np.log2(ratio)).astype(np.int64)
    # float-proof the closed-above boundary: ring j owns (2^(j-1) mu, 2^j mu]
    for i in np.nonzero(positive)[0]:
        j = max(1, int(raw[i]))
        while j > 1 and dist[i] <= 2.0 ** (j - 1) * mu:
            j -= 1
        while dist[i] > 2.0**j * mu and j < n_rings:
            j += 1
        out[i] = j
    return out


def sample_ring_class(pts, s: int, rng, weights=None):
    """Subsample one (ring, class) cell, conserving total weight exactly.

    When the cell weight is at most ``s`` all points pass through unchanged.
    Otherwise ``s`` copies are drawn uniformly without replacement from the
    implicit multiset of unit copies, and the cell weight is split into
    ``s`` integers differing by at most one (assigned in sampled order), so
    downstream flows stay integral. Returns (point list, weight array).
    """
    pts = list(pts)
    if not pts:
        return [], np.zeros(0, dtype=np.int64)
    w = (
        np.ones(len(pts), dtype=np.int64)
        if weights is None
        else np.asarray(weights, dtype=np.int64)
    )
    total = int(w.sum())
    if total <= s:
        return pts, w.copy()
    remaining = w.astype(float).copy()
    chosen: list[int] = []
    for _ in range(s):
        probs = remaining / remaining.sum()
        pick = int(rng.choice(len(pts), p=probs))
        chosen.append(pick)
        remaining[pick] -= 1.0
    base, extra = divmod(total, s)
    split = np.full(s, base, dtype=np.int64)
    split[:extra] += 1
    out_weights: dict[int, int] = {}
    for slot, pick in enumerate(chosen):
        out_weights[pick] = out_weights.get(pick, 0) + int(split[slot])
    idx = sorted(out_weights)
    return [pts[i] for i in idx], np.array([out_weights[i] for i in idx], dtype=np.int64)


def build_universal_coreset(
    ds: Dataset,
    k: int,
    epsilon: float,
    objective: Objective,
    regime: Optional[Regime] = None,
    seed: int = 0,
    weights=None,
    plan: Optional[SamplingPlan] = None,
    nu: float = 32.0,
    beta_factor: float = 2.0,
    c_med: float = DEFAULT_C_MED,
    c_mean: float = DEFAULT_C_MEAN,
    strict_kmeans_rescale: bool = False,
) -> WeightedSet:
    """Sample a universal coreset of the dataset (optionally pre-weighted).

    Weighted input points count as multiplicities for the scaffold, the ring
    statistics and the sampling probabilities, without materializing copies.
    Every (center, ring, class) cell draws from its own seed-derived stream
    and the cells are merged in deterministic order, so equal seeds give
    identical coresets. Per-class total weight is conserved exactly.
    """
    regime = regime or regime_of(ds)
    w = np.ones(ds.n, dtype=np.int64) if weights is None else np.asarray(weights, dtype=np.int64)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = int(w.sum())
    if plan is None:
        d = ds.metric.coords.shape[1] if regime is Regime.EUCLIDEAN else None
        plan = sample_size(
            max(2, total),
            k,
            epsilon,
            objective,
            regime,
            d=d,
            c_med=c_med,
            c_mean=c_mean,
            strict_kmeans_rescale=strict_kmeans_rescale,
        )
    bic = bicriteria_seed(
        ds, k, objective, beta_factor=beta_factor, seed=_derive(seed, 0xB1C), weights=w, nu=nu
    )

    if bic.cost <= 0:
        return _collapse_degenerate(ds, bic, w)

    rings = ring_decompose(ds, bic, weights=w)
    out_pids: list[int] = []
    out_cids: list[int] = []
    out_w: list[int] = []
    class_index = ds.class_index
    for (i, j, t), members in rings.cells(class_index):
        members = members[w[members] > 0]
        if members.size == 0:
            continue
        rng = np.random.default_rng([seed, i, j, t, 0xC0DE])
        pts, pw = sample_ring_class(members.tolist(), plan.s, rng, weights=w[members])
        out_pids.extend(int(p) for p in pts)
        out_cids.extend(int(class_index[p]) for p in pts)
        out_w.extend(int(x) for x in pw)
    return WeightedSet(
        np.array(out_pids, dtype=np.int64),
        np.array(out_cids, dtype=np.int64),
        np.array(out_w, dtype=np.int64),
    )


def _collapse_degenerate(ds: Dataset, bic: BicriteriaSolution, w: np.ndarray) -> WeightedSet:
    """All points sit on scaffold centers: keep one representative per
    (location, class) with the full multiplicity."""
    reps: dict[tuple[int, int], tuple[int, int]] = {}
    for p in range(ds.n):
        if w[p] == 0:
            continue
        key = (int(bic.nearest_center[p]), int(ds.class_index[p]))
        if key in reps:
            pid, acc = reps[key]
            reps[key] = (pid, acc + int(w[p]))
        else:
            reps[key] = (p, int(w[p]))
    items = sorted(reps.items())
    pids = np.array([pid for _, (pid, _) in items], dtype=np.int64)
    cids = np.array([t for (_, t), _ in items], dtype=np.int64)
    ws = np.array([acc for _, (_, acc) in items], dtype=np.int64)
    return WeightedSet(pids, cids, ws)


def _derive(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])
