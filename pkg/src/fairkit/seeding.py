"""Initial solutions that anchor everything else: distance-sampled bicriteria
seeding for the ring decomposition, farthest-first traversal for the cheap
cost bootstrap, and the candidate-center list generator for the Euclidean
(1 + eps) pipeline.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    Dataset,
    EuclideanMetric,
    FairnessSpec,
    InfeasibleError,
    Objective,
    WeightedSet,
)

__all__ = [
    "BicriteriaSolution",
    "CandidateList",
    "bicriteria_seed",
    "gonzalez_kcenter",
    "cost_upper_bound",
    "candidate_centers",
]

log = logging.getLogger("fairkit")

DEFAULT_NU = 32.0


@dataclass(frozen=True, eq=False)
class BicriteriaSolution:
    """A cheap clustering with extra centers, used only as a scaffold.

    ``cost`` is the weighted clustering cost of all points against
    ``center_ids`` (the objective's power applied); ``nearest_center`` and
    ``nearest_dist`` record each point's closest scaffold center and its
    plain distance.
    """

    center_ids: tuple[int, ...]
    cost: float
    nu: float
    objective: Objective
    nearest_center: np.ndarray
    nearest_dist: np.ndarray

    @property
    def n_centers(self) -> int:
        return len(self.center_ids)


@dataclass
class CandidateList:
    """Candidate k-center sets for the Euclidean pipeline; each entry is a
    (k, d) coordinate array."""

    sets: list[np.ndarray]
    trials: int
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.sets)


def _weighted(ds: Dataset, weights) -> np.ndarray:
    if weights is None:
        return np.ones(ds.n, dtype=np.int64)
    return np.asarray(weights, dtype=np.int64)


def _distance_sample(ds, w, k, power, rng) -> list[int]:
    """Sample k centers with probability proportional to weight times the
    current distance to the chosen prefix (first pick: weight only)."""
    n = ds.n
    centers: list[int] = []
    mind = None
    for _ in range(k):
        if mind is None:
            probs = w.astype(float)
        else:
            probs = w * mind**power
        total = probs.sum()
        if total <= 0:
            # all points coincide with the prefix: fall back to uniform
            probs = np.ones(n)
            total = float(n)
        c = int(rng.choice(n, p=probs / total))
        centers.append(c)
        d = ds.metric.center_dists(c)
        mind = d if mind is None else np.minimum(mind, d)
    return centers


def bicriteria_seed(
    ds: Dataset,
    k: int,
    objective: Objective,
    beta_factor: float = 2.0,
    seed: int = 0,
    weights=None,
    nu: float = DEFAULT_NU,
    repeats: int = 3,
) -> BicriteriaSolution:
    """Distance-sampled scaffold of ceil(beta_factor * k) centers.

    Runs ``repeats`` independent rounds on derived seeds and keeps the lowest
    cost. ``nu`` is the configured approximation constant consumed by the
    ring decomposition; it does not alter the construction itself.
    Deterministic in ``seed``.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if ds.n < k:
        raise ValueError(f"need at least k={k} points, got {ds.n}")
    w = _weighted(ds, weights)
    t = min(ds.n, math.ceil(beta_factor * k))
    power = objective.power
    best: Optional[tuple[float, list[int]]] = None
    for r in range(repeats):
        rng = np.random.default_rng([seed, r, 0xB1C])
        centers = _distance_sample(ds, w, t, power, rng)
        dmat = np.column_stack([ds.metric.center_dists(c) for c in centers])
        cost = float((w * dmat.min(axis=1) ** power).sum())
        if best is None or cost < best[0]:
            best = (cost, centers)
    cost, centers = best
    dmat = np.column_stack([ds.metric.center_dists(c) for c in centers])
    nearest = dmat.argmin(axis=1)
    ndist = dmat[np.arange(ds.n), nearest]
    nearest.setflags(write=False)
    ndist.setflags(write=False)
    return BicriteriaSolution(tuple(centers), cost, nu, objective, nearest, ndist)


def gonzalez_kcenter(ds: Dataset, k: int, objective: Objective = Objective.MEDIAN) -> list[int]:
    """Farthest-first traversal; the first center is point 0.

    The min-max radius of the result is within twice the optimal k-center
    radius. For the means objective the traversal maximizes squared
    distances, which selects the same points but matches the relaxed
    triangle inequality used downstream.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    n = ds.n
    if k >= n:
        return list(range(n))
    power = objective.power
    centers = [0]
    mind = ds.metric.center_dists(0) ** power
    while len(centers) < k:
        far = int(np.argmax(mind))
        centers.append(far)
        mind = np.minimum(mind, ds.metric.center_dists(far) ** power)
    return centers


def cost_upper_bound(
    ds: Dataset,
    k: int,
    spec: FairnessSpec,
    objective: Objective,
    seed: int = 0,
    eps_const: float = 0.5,
) -> float:
    """Cheap upper estimate of the optimal fair clustering cost.

    Farthest-first centers are within a polynomial factor of the optimum for
    any balance constraint, so the fair assignment cost against them bounds
    the optimum from above up to the constant coreset error. Raises
    InfeasibleError when no fair assignment exists at all.
    """
    from .coreset import build_universal_coreset
    from .milp import fair_assign_exact

    centers = gonzalez_kcenter(ds, k, objective)
    w = build_universal_coreset(ds, k, eps_const, objective, seed=_derive(seed, 1))
    res = fair_assign_exact(ds, w, centers, spec, objective)
    if res.status != "optimal":
        raise InfeasibleError("no fair assignment exists for this specification")
    return res.cost


def _derive(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def candidate_centers(
    ds: Dataset,
    points: WeightedSet,
    k: int,
    epsilon: float,
    objective: Objective,
    trials: int = 32,
    seed: int = 0,
    pool_constant: float = 2.0,
    subset_cap: int = 32,
    max_candidates: int = 20_000,
) -> CandidateList:
    """Candidate k-center sets grown by distance-weighted pool sampling.

    Each trial grows partial center sets over k rounds. A round samples, for
    every partial set, a pool of ceil(pool_constant / epsilon) points with
    probability proportional to weight times distance-to-set^power (weight
    only in round one) and extends the set by every pooled point and, for
    the means objective, by the centroid of sampled pooled subsets of size
    ceil(1 / epsilon) (at most ``subset_cap`` per pool). The candidate count
    is capped per trial at max_candidates / trials; hitting the cap
    truncates with a warning and never alters k.
    """
    if not isinstance(ds.metric, EuclideanMetric):
        raise ValueError("candidate generation needs a Euclidean metric")
    if k < 1:
        raise ValueError("k must be at least 1")
    coords = ds.metric.coords[points.point_ids]
    w = points.weights.astype(float)
    npts = coords.shape[0]
    eta = max(1, math.ceil(pool_constant / epsilon))
    subset_size = max(1, math.ceil(1.0 / epsilon))
    power = objective.power
    per_trial_cap = max(1, max_candidates // max(1, trials))

    out: list[np.ndarray] = []
    seen: set = set()
    truncated = False
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial, 0xCA7D])
        partials: list[tuple] = [(np.empty((0, coords.shape[1])), None)]
        for _round in range(k):
            new_partials = []
            for members, mind in partials:
                if mind is None:
                    probs = w / w.sum()
                else:
                    raw = w * mind**power
                    total = raw.sum()
                    probs = raw / total if total > 0 else np.full(npts, 1.0 / npts)
                pool_idx = rng.choice(npts, size=min(eta, npts), replace=True, p=probs)
                extensions = [coords[i] for i in pool_idx]
                if objective is Objective.MEANS and subset_size <= pool_idx.size:
                    total = math.comb(pool_idx.size, subset_size)
                    if total <= subset_cap:
                        combos = list(itertools.combinations(range(pool_idx.size), subset_size))
                    else:
                        combos = [
                            rng.choice(pool_idx.size, size=subset_size, replace=False)
                            for _ in range(subset_cap)
                        ]
                    for combo in combos:
                        extensions.append(coords[pool_idx[list(combo)]].mean(axis=0))
                for ext in extensions:
                    grown = np.vstack([members, ext[None, :]])
                    nd = np.linalg.norm(coords - ext[None, :], axis=1)
                    gmind = nd if mind is None else np.minimum(mind, nd)
                    new_partials.append((grown, gmind))
                    if len(new_partials) >= per_trial_cap:
                        break
                if len(new_partials) >= per_trial_cap:
                    truncated = True
                    break
            partials = new_partials
        for members, _ in partials:
            key = tuple(sorted(map(tuple, members.tolist())))
            if key not in seen:
                seen.add(key)
                out.append(members)
    if truncated:
        log.warning(
            "candidate generation truncated at %d sets per trial; k unchanged",
            per_trial_cap,
        )
    return CandidateList(out, trials, truncated)
