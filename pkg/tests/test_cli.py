import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from fairkit.cli import InputError, ingest, serialize_dataset
from fairkit.core import EuclideanMetric, MatrixMetric

FIXTURES = Path(__file__).parent / "fixtures"


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "fairkit.cli", *args],
        capture_output=True,
        text=True,
    )


def fixture_args():
    return [
        "--points", str(FIXTURES / "hexagon_points.csv"),
        "--groups", str(FIXTURES / "hexagon_groups.csv"),
    ]


class TestIngest:
    def test_euclidean_points(self, tmp_path):
        p = tmp_path / "pts.csv"
        p.write_text("0,0\n1,0\n0,1\n2,2\n")
        ds = ingest(str(p))
        assert isinstance(ds.metric, EuclideanMetric)
        assert ds.n == 4 and ds.n_groups == 1

    def test_inline_group_column(self, tmp_path):
        p = tmp_path / "pts.csv"
        p.write_text("0,0,0\n1,0,0;1\n0,1,1\n")
        ds = ingest(str(p))
        assert ds.n == 3
        assert ds.n_groups == 2
        assert ds.n_classes == 3

    def test_membership_file_with_overlap(self, tmp_path):
        p = tmp_path / "pts.csv"
        p.write_text("0,0\n1,0\n0,1\n")
        m = tmp_path / "memb.csv"
        m.write_text("0,0\n0,1\n1,0\n2,1\n")
        ds = ingest(str(p), membership_path=str(m))
        assert ds.n_classes == 3

    def test_ragged_rows_rejected_with_line(self, tmp_path):
        p = tmp_path / "pts.csv"
        p.write_text("0,0\n1\n")
        with pytest.raises(InputError, match="pts.csv:2"):
            ingest(str(p))

    def test_nan_rejected(self, tmp_path):
        p = tmp_path / "pts.csv"
        p.write_text("0,0\nnan,1\n")
        with pytest.raises(InputError, match="non-finite"):
            ingest(str(p))

    def test_asymmetric_matrix_rejected(self, tmp_path):
        p = tmp_path / "mat.csv"
        p.write_text("0,1\n2,0\n")
        with pytest.raises(InputError, match="symmetric"):
            ingest(str(p), matrix=True)

    def test_negative_distance_rejected(self, tmp_path):
        p = tmp_path / "mat.csv"
        p.write_text("0,-1\n-1,0\n")
        with pytest.raises(InputError, match="negative"):
            ingest(str(p), matrix=True)

    def test_unknown_point_id_rejected(self, tmp_path):
        p = tmp_path / "pts.csv"
        p.write_text("0,0\n1,0\n")
        m = tmp_path / "memb.csv"
        m.write_text("0,0\n5,0\n")
        with pytest.raises(InputError, match="unknown point id 5"):
            ingest(str(p), membership_path=str(m))

    def test_round_trip_euclidean(self, tmp_path):
        ds = ingest(str(FIXTURES / "hexagon_points.csv"), groups_path=str(FIXTURES / "hexagon_groups.csv"))
        serialize_dataset(ds, str(tmp_path / "p.csv"), str(tmp_path / "m.csv"))
        back = ingest(str(tmp_path / "p.csv"), membership_path=str(tmp_path / "m.csv"))
        assert np.array_equal(back.metric.coords, ds.metric.coords)
        assert back.groups == ds.groups
        assert np.array_equal(back.class_index, ds.class_index)

    def test_round_trip_matrix(self, tmp_path):
        rng = np.random.default_rng(0)
        coords = rng.normal(size=(5, 2))
        d = np.sqrt(((coords[:, None] - coords[None, :]) ** 2).sum(-1))
        np.fill_diagonal(d, 0.0)
        p = tmp_path / "mat.csv"
        p.write_text("\n".join(",".join(repr(float(x)) for x in row) for row in d) + "\n")
        ds = ingest(str(p), matrix=True)
        serialize_dataset(ds, str(tmp_path / "p2.csv"), str(tmp_path / "m2.csv"))
        back = ingest(str(tmp_path / "p2.csv"), membership_path=str(tmp_path / "m2.csv"), matrix=True)
        assert np.array_equal(back.metric.matrix, ds.metric.matrix)
        assert back.groups == ds.groups


class TestCommands:
    def cluster_args(self, out):
        return [
            "cluster", *fixture_args(),
            "--k", "2", "--epsilon", "0.5", "--objective", "median",
            "--alpha", "2/3,2/3", "--beta", "1/3,1/3",
            "--seed", "7", "--output", str(out),
        ]

    def test_cluster_emits_result(self, tmp_path):
        out = tmp_path / "res.json"
        proc = run_cli(*self.cluster_args(out))
        assert proc.returncode == 0, proc.stderr
        doc = json.loads(out.read_text())
        assert set(doc) >= {"config", "centers", "assignment", "cost", "constraint_matrix", "diagnostics"}
        assert doc["config"]["k"] == 2
        assert "elapsed_ms" in proc.stderr

    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert run_cli(*self.cluster_args(a)).returncode == 0
        assert run_cli(*self.cluster_args(b)).returncode == 0
        assert a.read_bytes() == b.read_bytes()

    def test_assign_reproduces_cluster_cost(self, tmp_path):
        out = tmp_path / "res.json"
        assert run_cli(*self.cluster_args(out)).returncode == 0
        doc = json.loads(out.read_text())
        proc = run_cli(
            "assign", *fixture_args(),
            "--centers", str(out), "--objective", "median",
            "--alpha", "2/3,2/3", "--beta", "1/3,1/3", "--output", "-",
        )
        assert proc.returncode == 0, proc.stderr
        doc2 = json.loads(proc.stdout)
        assert doc2["cost"] == pytest.approx(doc["cost"], rel=1e-12)

    def test_oracle_within_algorithm_factor(self, tmp_path):
        out = tmp_path / "res.json"
        assert run_cli(*self.cluster_args(out)).returncode == 0
        cluster_cost = json.loads(out.read_text())["cost"]
        proc = run_cli(
            "oracle", *fixture_args(),
            "--k", "2", "--objective", "median",
            "--alpha", "2/3,2/3", "--beta", "1/3,1/3", "--output", "-",
        )
        assert proc.returncode == 0, proc.stderr
        oracle_cost = json.loads(proc.stdout)["cost"]
        assert cluster_cost <= 1.5 * oracle_cost + 1e-9

    def test_coreset_command(self):
        proc = run_cli(
            "coreset", *fixture_args(), "--k", "2", "--epsilon", "0.5", "--output", "-"
        )
        assert proc.returncode == 0, proc.stderr
        doc = json.loads(proc.stdout)
        items = doc["coreset"]["items"]
        assert sum(w for _, _, w in items) == 6

    def test_stream_command(self):
        proc = run_cli(
            "stream", *fixture_args(), "--k", "2", "--epsilon", "0.5", "--output", "-"
        )
        assert proc.returncode == 0, proc.stderr
        doc = json.loads(proc.stdout)
        assert sum(w for _, _, w in doc["coreset"]["items"]) == 6

    def test_reduce_command_means_sketches(self):
        proc = run_cli(
            "reduce", *fixture_args(), "--k", "2", "--epsilon", "0.5",
            "--objective", "means", "--output", "-",
        )
        assert proc.returncode == 0, proc.stderr
        doc = json.loads(proc.stdout)
        assert doc["diagnostics"]["sketch_dim"] == 2

    def test_bench_command(self, tmp_path):
        proc = run_cli(
            "bench", *fixture_args(), "--k", "2", "--epsilon", "0.5",
            "--objective", "median", "--alpha", "2/3,2/3", "--beta", "1/3,1/3",
            "--seed", "3", "--repeats", "2", "--output", "-",
        )
        assert proc.returncode == 0, proc.stderr
        doc = json.loads(proc.stdout)
        assert len(doc["runs"]) == 2
        assert doc["runs"][0]["seed"] == 3
        assert doc["runs"][1]["seed"] == 4

    def test_chromatic_constraint(self):
        proc = run_cli(
            "cluster", "--points", str(FIXTURES / "hexagon_points.csv"),
            "--groups", str(FIXTURES / "hexagon_groups.csv"),
            "--k", "3", "--constraint", "chromatic", "--output", "-",
        )
        assert proc.returncode == 0, proc.stderr


class TestExitCodes:
    def test_input_error_is_one(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("0,0\n1\n")
        proc = run_cli("cluster", "--points", str(p), "--output", "-")
        assert proc.returncode == 1
        assert "input error" in proc.stderr

    def test_missing_file_is_one(self):
        proc = run_cli("cluster", "--points", "/does/not/exist.csv", "--output", "-")
        assert proc.returncode == 1

    def test_infeasible_is_two(self, tmp_path):
        p = tmp_path / "pts.csv"
        p.write_text("0,0\n1,0\n2,0\n3,0\n")
        g = tmp_path / "groups.csv"
        g.write_text("0\n1\n1\n1\n")
        proc = run_cli(
            "cluster", "--points", str(p), "--groups", str(g),
            "--k", "2", "--alpha", "1/2,1/2", "--beta", "1/2,1/2",
            "--constraint", "fair", "--output", "-",
        )
        assert proc.returncode == 2
        assert "infeasible" in proc.stderr

    def test_budget_exceeded_is_three(self, tmp_path):
        coords = "\n".join(f"{i}.0,0.0" for i in range(12))
        p = tmp_path / "pts.csv"
        p.write_text(coords + "\n")
        proc = run_cli(
            "oracle", "--points", str(p), "--k", "3",
            "--alpha", "1", "--beta", "0",
            "--oracle-points", "8", "--oracle-candidates", "100", "--output", "-",
        )
        assert proc.returncode == 3
        assert "budget" in proc.stderr

    def test_bad_constraint_is_one(self):
        proc = run_cli(
            "cluster", *fixture_args(), "--constraint", "nonsense", "--output", "-"
        )
        assert proc.returncode == 1
