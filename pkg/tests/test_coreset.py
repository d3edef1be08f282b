import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairkit.core import (
    ConstraintMatrix,
    EuclideanMetric,
    Objective,
    WeightedSet,
    build_equivalence_classes,
)
from fairkit.coreset import (
    Regime,
    build_universal_coreset,
    ring_decompose,
    sample_ring_class,
    sample_size,
)
from fairkit.oracle import exact_constrained_cost
from fairkit.seeding import bicriteria_seed

from util import balanced_bicolor, euclidean_dataset, split_groups, two_cluster_bicolor


class TestSampleSize:
    def test_plugin_example(self):
        plan = sample_size(math.e, 1, 1.0, Objective.MEDIAN, c_med=1.0)
        assert plan.s == 1

    def test_linear_in_k(self):
        s1 = sample_size(math.e, 1, 1.0, Objective.MEDIAN, c_med=1.0).s
        s2 = sample_size(math.e, 2, 1.0, Objective.MEDIAN, c_med=1.0).s
        assert s2 == 2 * s1

    def test_means_at_least_median(self):
        for eps in (0.2, 0.5, 1.0):
            med = sample_size(100, 2, eps, Objective.MEDIAN).s
            mea = sample_size(100, 2, eps, Objective.MEANS).s
            assert mea >= med

    def test_euclidean_enlarges(self):
        metric = sample_size(100, 2, 0.5, Objective.MEDIAN, Regime.METRIC).s
        euclid = sample_size(100, 2, 0.5, Objective.MEDIAN, Regime.EUCLIDEAN, d=4).s
        assert euclid > metric

    def test_strict_rescale_blows_up(self):
        normal = sample_size(100, 2, 0.5, Objective.MEANS).s
        strict = sample_size(100, 2, 0.5, Objective.MEANS, strict_kmeans_rescale=True).s
        assert strict > 50 * normal

    def test_bad_epsilon_rejected(self):
        with pytest.raises(ValueError):
            sample_size(10, 1, 0.0, Objective.MEDIAN)


class TestRingDecompose:
    def test_point_on_center_is_ring_zero(self):
        rng = np.random.default_rng(0)
        ds = euclidean_dataset(rng, 10)
        bic = bicriteria_seed(ds, 2, Objective.MEDIAN, seed=1)
        rings = ring_decompose(ds, bic)
        for c_idx, c in enumerate(bic.center_ids):
            assert rings.ring_index[c] == 0

    def test_ring_predicate_matches_recomputation(self):
        rng = np.random.default_rng(1)
        for objective in (Objective.MEDIAN, Objective.MEANS):
            ds = euclidean_dataset(rng, 40)
            bic = bicriteria_seed(ds, 3, objective, seed=2)
            rings = ring_decompose(ds, bic)
            if rings.mu == 0:
                continue
            for i in range(40):
                r = bic.nearest_dist[i]
                j = rings.ring_index[i]
                if j == 0:
                    assert r <= rings.mu + 1e-12
                else:
                    assert 2.0 ** (j - 1) * rings.mu < r + 1e-12
                    assert r <= 2.0**j * rings.mu + 1e-12
                assert j <= rings.n_rings

    def test_boundary_distance_exactly_power_of_two(self):
        from fairkit.coreset import _ring_of

        mu = 0.75
        dist = np.array([0.0, mu, 2 * mu, 3 * mu, 4 * mu])
        assert _ring_of(dist, mu, 30).tolist() == [0, 0, 1, 2, 2]

    def test_means_mu_covers_all_points(self):
        # squared-cost scaffolds need the square root, or far points overflow
        rng = np.random.default_rng(2)
        coords = np.vstack([rng.normal(size=(20, 2)) * 0.01, [[50.0, 0.0]]])
        ds = build_equivalence_classes(EuclideanMetric(coords), [list(range(21))])
        bic = bicriteria_seed(ds, 1, Objective.MEANS, beta_factor=1.0, seed=3)
        rings = ring_decompose(ds, bic)
        assert np.all(rings.ring_index <= rings.n_rings)
        j = rings.ring_index.max()
        far = bic.nearest_dist.max()
        assert far <= 2.0**j * rings.mu + 1e-9


class TestSampleRingClass:
    def test_small_cell_passthrough(self):
        rng = np.random.default_rng(3)
        pts, w = sample_ring_class([10, 11, 12], 5, rng)
        assert pts == [10, 11, 12]
        assert w.tolist() == [1, 1, 1]

    def test_large_cell_subsamples_conserving_weight(self):
        rng = np.random.default_rng(4)
        pts, w = sample_ring_class(list(range(10)), 5, rng)
        assert len(pts) == 5
        assert w.sum() == 10
        assert np.all(w >= 1)

    def test_empty_cell(self):
        rng = np.random.default_rng(5)
        pts, w = sample_ring_class([], 4, rng)
        assert pts == [] and w.size == 0

    @given(st.integers(0, 2**31 - 1), st.integers(1, 30), st.integers(1, 12))
    @settings(max_examples=40, deadline=None)
    def test_weight_conservation_property(self, seed, m, s):
        rng = np.random.default_rng(seed)
        weights = rng.integers(1, 5, size=m)
        pts, w = sample_ring_class(list(range(m)), s, rng, weights=weights)
        assert int(w.sum()) == int(weights.sum())
        assert np.all(w >= 1)
        assert len(set(pts)) == len(pts)

    def test_split_balanced_within_one(self):
        rng = np.random.default_rng(6)
        pts, w = sample_ring_class(list(range(20)), 6, rng)
        assert w.sum() == 20
        assert w.max() - w.min() <= 1 + (20 % 6 > 0)


class TestBuildUniversalCoreset:
    def test_small_instance_returns_everything(self):
        rng = np.random.default_rng(7)
        ds = balanced_bicolor(rng, 20)
        w = build_universal_coreset(ds, 2, 0.5, Objective.MEDIAN, seed=1)
        assert w.size == 20
        assert np.all(w.weights == 1)

    def test_class_weights_conserved_every_seed(self):
        rng = np.random.default_rng(8)
        ds = balanced_bicolor(rng, 80)
        for seed in range(30):
            w = build_universal_coreset(ds, 2, 0.5, Objective.MEDIAN, seed=seed, c_med=0.05)
            assert w.class_weights(2).tolist() == [40, 40]

    def test_forced_sampling_shrinks(self):
        rng = np.random.default_rng(9)
        ds = balanced_bicolor(rng, 100)
        w = build_universal_coreset(ds, 2, 0.5, Objective.MEDIAN, seed=3, c_med=0.02)
        assert w.size < 100

    def test_ring_locality_of_samples(self):
        rng = np.random.default_rng(10)
        ds = balanced_bicolor(rng, 100)
        seed = 4
        from fairkit.coreset import _derive

        bic = bicriteria_seed(ds, 2, Objective.MEDIAN, seed=_derive(seed, 0xB1C), weights=np.ones(100, dtype=np.int64))
        rings = ring_decompose(ds, bic)
        w = build_universal_coreset(ds, 2, 0.5, Objective.MEDIAN, seed=seed, c_med=0.02)
        # sampled points must sit in occupied cells of the same decomposition
        occupied = set()
        for i in range(100):
            occupied.add((int(rings.ring_center[i]), int(rings.ring_index[i]), int(ds.class_index[i])))
        for p, c in zip(w.point_ids, w.class_ids):
            cell = (int(rings.ring_center[p]), int(rings.ring_index[p]), int(c))
            assert cell in occupied

    def test_degenerate_coincident_points(self):
        coords = np.zeros((9, 2))
        ds = build_equivalence_classes(EuclideanMetric(coords), [[0, 1, 2, 3], [4, 5, 6, 7, 8]])
        w = build_universal_coreset(ds, 2, 0.5, Objective.MEANS, seed=5)
        assert w.total_weight() == 9
        assert w.class_weights(2).tolist() == [4, 5]
        assert w.size <= 4 * 2

    def test_deterministic(self):
        rng = np.random.default_rng(11)
        ds = balanced_bicolor(rng, 60)
        a = build_universal_coreset(ds, 2, 0.4, Objective.MEANS, seed=9, c_mean=0.02)
        b = build_universal_coreset(ds, 2, 0.4, Objective.MEANS, seed=9, c_mean=0.02)
        assert np.array_equal(a.point_ids, b.point_ids)
        assert np.array_equal(a.weights, b.weights)

    def test_monotone_degradation_exact_costs(self):
        # sample size >= n makes the coreset the point set itself, and then
        # constrained costs agree exactly for every quota matrix and centers
        rng = np.random.default_rng(12)
        for n, k in ((6, 2), (8, 2)):
            ds = euclidean_dataset(rng, n, groups=split_groups(rng, n, 2))
            w = build_universal_coreset(ds, k, 0.5, Objective.MEDIAN, seed=1)
            assert w.size == n
            sizes = ds.class_sizes()
            for centers in itertools.combinations(range(n), k):
                for a in range(sizes[0] + 1):
                    for b in range(sizes[1] + 1):
                        m = ConstraintMatrix(np.array([[a, b], [sizes[0] - a, sizes[1] - b]]))
                        cost_p = exact_constrained_cost(ds, m, centers, Objective.MEDIAN)
                        cost_w = exact_constrained_cost(ds, m, centers, Objective.MEDIAN, weights=w)
                        assert cost_w == pytest.approx(cost_p, abs=1e-9)

    def test_statistical_quality_under_forced_sampling(self):
        # a sample size far below the derived one must still keep the cost
        # sandwich on nearly every seed; sizes confirm sampling really ran
        from fairkit.coreset import SamplingPlan

        rng = np.random.default_rng(13)
        ds = two_cluster_bicolor(rng, 60, separation=10.0, spread=0.5)
        sizes = ds.class_sizes()
        center_sets = [
            tuple(int(x) for x in rng.choice(120, size=2, replace=False)) for _ in range(8)
        ]
        m = ConstraintMatrix(np.array([[sizes[0] // 2, sizes[1] // 2],
                                       [sizes[0] - sizes[0] // 2, sizes[1] - sizes[1] // 2]]))
        eps = 0.3
        base = {cs: exact_constrained_cost(ds, m, cs, Objective.MEDIAN) for cs in center_sets}
        violations = 0
        total = 0
        shrunk = 0
        for seed in range(40):
            plan = SamplingPlan(4, Objective.MEDIAN, Regime.EUCLIDEAN)
            w = build_universal_coreset(ds, 2, eps, Objective.MEDIAN, seed=seed, plan=plan)
            shrunk += w.size < 120
            for cs in center_sets:
                got = exact_constrained_cost(ds, m, cs, Objective.MEDIAN, weights=w)
                total += 1
                if not ((1 - eps) * base[cs] - 1e-9 <= got <= (1 + eps) * base[cs] + 1e-9):
                    violations += 1
        assert shrunk == 40
        assert violations / total <= 0.05, f"violation rate {violations}/{total}"
