"""Shared instance generators for the test suite."""
from __future__ import annotations

import itertools

import numpy as np

from fairkit.core import (
    Assignment,
    Dataset,
    EuclideanMetric,
    FairnessSpec,
    MatrixMetric,
    Objective,
    build_equivalence_classes,
    fairness_check,
)


def euclidean_dataset(rng, n, d=2, scale=3.0, groups=None) -> Dataset:
    coords = rng.normal(size=(n, d)) * scale
    if groups is None:
        groups = [list(range(n))]
    return build_equivalence_classes(EuclideanMetric(coords), groups)


def matrix_dataset(rng, n, groups=None) -> Dataset:
    """Distance matrix from random embedded points, so the triangle holds."""
    coords = rng.normal(size=(n, 3)) * 2.0
    diff = coords[:, None, :] - coords[None, :, :]
    matrix = np.sqrt((diff**2).sum(axis=2))
    matrix = (matrix + matrix.T) / 2.0
    np.fill_diagonal(matrix, 0.0)
    if groups is None:
        groups = [list(range(n))]
    return build_equivalence_classes(MatrixMetric(matrix), groups)


def split_groups(rng, n, n_groups) -> list[list[int]]:
    """Random disjoint groups covering all points, each non-empty."""
    perm = rng.permutation(n).tolist()
    cuts = sorted(rng.choice(np.arange(1, n), size=n_groups - 1, replace=False).tolist())
    bounds = [0] + cuts + [n]
    return [perm[bounds[i] : bounds[i + 1]] for i in range(n_groups)]


def overlapping_groups(rng, n) -> list[list[int]]:
    """Two overlapping groups producing three equivalence classes."""
    thirds = max(1, n // 3)
    a = list(range(0, 2 * thirds))
    b = list(range(thirds, n))
    return [a, b]


def balanced_bicolor(rng, n, d=2, scale=3.0) -> Dataset:
    assert n % 2 == 0
    coords = rng.normal(size=(n, d)) * scale
    perm = rng.permutation(n).tolist()
    return build_equivalence_classes(
        EuclideanMetric(coords), [perm[: n // 2], perm[n // 2 :]]
    )


def two_cluster_bicolor(rng, m_per, separation=8.0, spread=0.5) -> Dataset:
    """Two well-separated blobs, each holding m_per/2 points of each color."""
    assert m_per % 2 == 0
    a = rng.normal(size=(m_per, 2)) * spread
    b = rng.normal(size=(m_per, 2)) * spread + [separation, 0.0]
    coords = np.vstack([a, b])
    n = 2 * m_per
    red = list(range(0, n, 2))
    blue = list(range(1, n, 2))
    return build_equivalence_classes(EuclideanMetric(coords), [red, blue])


def random_spec(rng, n_groups) -> FairnessSpec:
    alphas = ["1", "3/4", "2/3", "1/2"]
    betas = ["0", "1/4", "1/3", "1/2"]
    alpha, beta = [], []
    for _ in range(n_groups):
        a = alphas[int(rng.integers(len(alphas)))]
        b = betas[int(rng.integers(len(betas)))]
        from fractions import Fraction

        if Fraction(b) > Fraction(a):
            b = "0"
        alpha.append(a)
        beta.append(b)
    return FairnessSpec.from_values(alpha, beta)


def brute_force_fair_cost(ds, centers, spec, objective):
    """Min fair assignment cost for fixed centers by full enumeration."""
    n, k = ds.n, len(centers)
    d = np.column_stack([ds.metric.center_dists(c) for c in centers]) ** objective.power
    best = None
    for tup in itertools.product(range(k), repeat=n):
        asg = Assignment(tuple(centers), {(i, j): 1 for i, j in enumerate(tup)}, objective)
        if fairness_check(asg, ds, spec):
            continue
        cost = float(d[np.arange(n), list(tup)].sum())
        if best is None or cost < best:
            best = cost
    return best
