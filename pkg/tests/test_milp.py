import itertools
import math

import numpy as np
import pytest

from fairkit.core import (
    Assignment,
    ConstraintMatrix,
    EuclideanMetric,
    FairnessSpec,
    InfeasibleError,
    Objective,
    WeightedSet,
    build_equivalence_classes,
    clustering_cost,
    constraint_matrix_of,
    fairness_check,
)
from fairkit.flow import class_transport
from fairkit.milp import (
    LinearProgram,
    fair_assign_approx,
    fair_assign_exact,
    restore_assignment,
    simplex_solve,
)

from util import (
    balanced_bicolor,
    brute_force_fair_cost,
    euclidean_dataset,
    overlapping_groups,
    random_spec,
    split_groups,
)


def no_ub(nvar):
    return np.empty((0, nvar)), np.empty(0)


class TestSimplex:
    def test_min_x_above_three(self):
        a, b = no_ub(1)
        res = simplex_solve(LinearProgram([1.0], [[-1.0]], [-3.0], a, b))
        assert res.status == "optimal"
        assert res.value == pytest.approx(3.0)

    def test_infeasible_pair(self):
        a, b = no_ub(1)
        res = simplex_solve(LinearProgram([1.0], [[1.0], [-1.0]], [0.0, -1.0], a, b))
        assert res.status == "infeasible"

    def test_unbounded(self):
        a, b = no_ub(1)
        res = simplex_solve(LinearProgram([-1.0], np.empty((0, 1)), [], a, b))
        assert res.status == "unbounded"

    def test_degenerate_equalities(self):
        # duplicated equality rows must be recognized as redundant
        res = simplex_solve(
            LinearProgram([1.0, 1.0], np.empty((0, 2)), [], [[1, 1], [1, 1]], [2.0, 2.0])
        )
        assert res.status == "optimal"
        assert res.value == pytest.approx(2.0)

    def enumerate_vertices(self, c, a_ub, b_ub, a_eq, b_eq):
        """Optimal basic feasible solution by enumerating all bases.

        Redundant rows (transport matrices are rank-deficient) are dropped
        first by greedy rank selection so square bases exist.
        """
        rows = np.vstack([a_ub, a_eq])
        rhs = np.concatenate([b_ub, b_eq])
        slack = np.vstack([np.eye(len(b_ub)), np.zeros((len(b_eq), len(b_ub)))])
        full = np.hstack([rows, slack])
        cost = np.concatenate([c, np.zeros(len(b_ub))])
        keep: list[int] = []
        for r in range(full.shape[0]):
            if np.linalg.matrix_rank(full[keep + [r]]) > len(keep):
                keep.append(r)
        full = full[keep]
        rhs = rhs[keep]
        m = full.shape[0]
        best = None
        for basis in itertools.combinations(range(full.shape[1]), m):
            sub = full[:, basis]
            if abs(np.linalg.det(sub)) < 1e-10:
                continue
            x = np.linalg.solve(sub, rhs)
            if np.any(x < -1e-9):
                continue
            point = np.zeros(full.shape[1])
            point[list(basis)] = x
            v = float(cost @ point)
            if best is None or v < best:
                best = v
        return best

    def test_random_transport_lps_match_vertex_enumeration(self):
        rng = np.random.default_rng(17)
        for _ in range(25):
            # 2x2 transport with random supplies/demands and a skew cost row
            s = rng.integers(1, 4, size=2)
            total = int(s.sum())
            d0 = int(rng.integers(0, total + 1))
            demands = [d0, total - d0]
            c = rng.uniform(0, 5, size=4)
            a_eq = [
                [1, 1, 0, 0],
                [0, 0, 1, 1],
                [1, 0, 1, 0],
                [0, 1, 0, 1],
            ]
            b_eq = [float(s[0]), float(s[1]), float(demands[0]), float(demands[1])]
            res = simplex_solve(
                LinearProgram(c, np.empty((0, 4)), [], a_eq, b_eq)
            )
            want = self.enumerate_vertices(c, np.empty((0, 4)), np.empty(0), np.array(a_eq), np.array(b_eq))
            assert res.status == "optimal"
            assert res.value == pytest.approx(want, abs=1e-9)

    def test_random_inequality_lps_match_vertex_enumeration(self):
        rng = np.random.default_rng(23)
        for _ in range(25):
            nvar = int(rng.integers(2, 5))
            n_ub = int(rng.integers(1, 4))
            c = rng.uniform(-2, 3, size=nvar)
            a_ub = rng.uniform(-1, 2, size=(n_ub, nvar))
            b_ub = rng.uniform(0.5, 4, size=n_ub)
            # cap every variable so the program stays bounded
            a_ub = np.vstack([a_ub, np.eye(nvar)])
            b_ub = np.concatenate([b_ub, np.full(nvar, 5.0)])
            res = simplex_solve(LinearProgram(c, a_ub, b_ub, np.empty((0, nvar)), []))
            want = self.enumerate_vertices(c, a_ub, b_ub, np.empty((0, nvar)), np.empty(0))
            assert res.status == "optimal"
            assert res.value == pytest.approx(want, abs=1e-9)


class TestFairAssignExact:
    def test_unconstrained_is_nearest_center(self):
        rng = np.random.default_rng(0)
        ds = euclidean_dataset(rng, 7)
        spec = FairnessSpec.from_values(["1"], ["0"])
        w = WeightedSet.from_dataset(ds)
        res = fair_assign_exact(ds, w, [0, 4], spec, Objective.MEDIAN)
        d = np.column_stack([ds.metric.center_dists(0), ds.metric.center_dists(4)])
        assert res.cost == pytest.approx(d.min(axis=1).sum())

    def test_exact_balance_forces_one_of_each(self):
        coords = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 0.0], [5.1, 0.0]])
        ds = build_equivalence_classes(EuclideanMetric(coords), [[0, 2], [1, 3]])
        spec = FairnessSpec.from_values(["1/2", "1/2"], ["1/2", "1/2"])
        w = WeightedSet.from_dataset(ds)
        res = fair_assign_exact(ds, w, [0, 3], spec, Objective.MEDIAN)
        assert res.status == "optimal"
        m = res.g.entries
        assert np.all(m.sum(axis=1) % 2 == 0)
        for j in range(2):
            assert m[j, 0] == m[j, 1]

    def test_matches_brute_force_grid(self):
        rng = np.random.default_rng(42)
        checked = 0
        for _ in range(25):
            n = int(rng.integers(4, 8))
            k = int(rng.integers(2, 4))
            gamma_choice = int(rng.integers(1, 4))
            if gamma_choice == 1:
                groups = [list(range(n))]
            elif gamma_choice == 2:
                groups = split_groups(rng, n, 2)
            else:
                groups = overlapping_groups(rng, n)
            ds = euclidean_dataset(rng, n, groups=groups)
            spec = random_spec(rng, ds.n_groups)
            centers = [int(c) for c in rng.choice(n, size=k, replace=False)]
            obj = Objective.MEDIAN if checked % 2 == 0 else Objective.MEANS
            res = fair_assign_exact(ds, WeightedSet.from_dataset(ds), centers, spec, obj)
            want = brute_force_fair_cost(ds, centers, spec, obj)
            if want is None:
                assert res.status == "infeasible"
            else:
                assert res.status == "optimal"
                assert res.cost == pytest.approx(want, rel=1e-9, abs=1e-12)
                assert fairness_check(res.assignment, ds, spec) == []
                assert constraint_matrix_of(res.assignment, ds) == res.g
                recomputed = clustering_cost(ds, res.assignment)
                assert recomputed == pytest.approx(res.cost, rel=1e-6)
            checked += 1

    def test_weighted_points(self):
        coords = np.array([[0.0], [1.0], [3.0], [4.0]])
        ds = build_equivalence_classes(EuclideanMetric(coords), [[0, 2], [1, 3]])
        w = WeightedSet(np.arange(4), ds.class_index.copy(), np.array([5, 5, 5, 5]))
        spec = FairnessSpec.from_values(["1/2", "1/2"], ["1/2", "1/2"])
        res = fair_assign_exact(ds, w, [0, 3], spec, Objective.MEDIAN)
        assert res.status == "optimal"
        assert res.g.column_sums().tolist() == [10, 10]

    def test_infeasible_unequal_exact_balance(self):
        rng = np.random.default_rng(1)
        ds = euclidean_dataset(rng, 6, groups=[[0, 1], [2, 3, 4, 5]])
        spec = FairnessSpec.from_values(["1/2", "1/2"], ["1/2", "1/2"])
        res = fair_assign_exact(ds, WeightedSet.from_dataset(ds), [0, 5], spec, Objective.MEDIAN)
        assert res.status == "infeasible"


class TestRestoreAssignment:
    def test_identity_when_quotas_from_full_set(self):
        rng = np.random.default_rng(3)
        ds = euclidean_dataset(rng, 8, groups=split_groups(rng, 8, 2))
        centers = [0, 5]
        nearest = np.argmin(
            np.column_stack([ds.metric.center_dists(c) for c in centers]), axis=1
        )
        asg = Assignment(tuple(centers), {(i, int(nearest[i])): 1 for i in range(8)}, Objective.MEDIAN)
        g = constraint_matrix_of(asg, ds)
        restored = restore_assignment(ds, g, centers, 0.5, Objective.MEDIAN)
        assert constraint_matrix_of(restored, ds) == g
        # exact per-class transports meeting these quotas equal nearest-center cost
        assert clustering_cost(ds, restored) <= (1 + 0.5) * clustering_cost(ds, asg) + 1e-9

    def test_single_class_all_to_one(self):
        rng = np.random.default_rng(4)
        ds = euclidean_dataset(rng, 5)
        g = ConstraintMatrix(np.array([[5], [0]]))
        restored = restore_assignment(ds, g, [2, 4], 0.2, Objective.MEDIAN)
        assert all(j == 0 for (_, j) in restored.weights)

    def test_mismatched_quotas_rejected(self):
        rng = np.random.default_rng(4)
        ds = euclidean_dataset(rng, 5)
        with pytest.raises(ValueError, match="column sums"):
            restore_assignment(ds, ConstraintMatrix(np.array([[4], [0]])), [0, 1], 0.2, Objective.MEDIAN)

    def test_restoration_factor(self):
        rng = np.random.default_rng(7)
        for eps in (0.2, 0.5):
            for _ in range(15):
                n = int(rng.integers(6, 14))
                k = int(rng.integers(2, 4))
                groups = split_groups(rng, n, int(rng.integers(1, 3)))
                ds = euclidean_dataset(rng, n, groups=groups)
                centers = [int(c) for c in rng.choice(n, size=k, replace=False)]
                tup = rng.integers(0, k, size=n)
                asg = Assignment(tuple(centers), {(i, int(tup[i])): 1 for i in range(n)}, Objective.MEDIAN)
                g = constraint_matrix_of(asg, ds)
                restored = restore_assignment(ds, g, centers, eps, Objective.MEDIAN)
                exact_total = 0.0
                for t in range(ds.n_classes):
                    members = ds.class_members(t)
                    _, cost = class_transport(
                        ds, members, [1] * len(members), centers, g.entries[:, t], Objective.MEDIAN
                    )
                    exact_total += cost
                assert clustering_cost(ds, restored) <= (1 + eps) * exact_total + 1e-9
                assert constraint_matrix_of(restored, ds) == g


class TestFairAssignApprox:
    def test_small_instance_is_exact(self):
        rng = np.random.default_rng(11)
        ds = balanced_bicolor(rng, 10)
        spec = FairnessSpec.from_values(["3/4", "3/4"], ["1/4", "1/4"])
        centers = [0, 7]
        asg = fair_assign_approx(ds, centers, spec, 0.5, Objective.MEDIAN, seed=3)
        assert fairness_check(asg, ds, spec) == []
        res = fair_assign_exact(ds, WeightedSet.from_dataset(ds), centers, spec, Objective.MEDIAN)
        # coreset equals the point set at this size, so the round trip is tight
        assert clustering_cost(ds, asg) <= (1 + 0.5) * res.cost + 1e-9

    def test_unconstrained_close_to_nearest(self):
        rng = np.random.default_rng(12)
        ds = euclidean_dataset(rng, 30)
        spec = FairnessSpec.from_values(["1"], ["0"])
        centers = [0, 9]
        asg = fair_assign_approx(ds, centers, spec, 0.5, Objective.MEANS, seed=5)
        d = np.column_stack([ds.metric.center_dists(0), ds.metric.center_dists(9)]) ** 2
        assert clustering_cost(ds, asg) <= (1 + 0.5) * d.min(axis=1).sum() + 1e-9

    def test_infeasible_propagates(self):
        rng = np.random.default_rng(13)
        ds = euclidean_dataset(rng, 6, groups=[[0], [1, 2, 3, 4, 5]])
        spec = FairnessSpec.from_values(["1/2", "1/2"], ["1/2", "1/2"])
        with pytest.raises(InfeasibleError):
            fair_assign_approx(ds, [0, 3], spec, 0.5, Objective.MEDIAN, seed=1)

    def test_statistical_quality_random_instances(self):
        rng = np.random.default_rng(14)
        hits = 0
        trials = 10
        for t in range(trials):
            ds = balanced_bicolor(rng, 60)
            spec = FairnessSpec.from_values(["2/3", "2/3"], ["1/3", "1/3"])
            centers = [int(c) for c in rng.choice(60, size=2, replace=False)]
            asg = fair_assign_approx(ds, centers, spec, 0.5, Objective.MEDIAN, seed=t)
            res = fair_assign_exact(ds, WeightedSet.from_dataset(ds), centers, spec, Objective.MEDIAN)
            if clustering_cost(ds, asg) <= 1.5 * res.cost + 1e-9:
                hits += 1
        assert hits >= 9
