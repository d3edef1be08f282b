"""Command-line surface: data ingestion, command dispatch, serialization.

Commands operate on CSV inputs and emit one JSON result document whose
layout is stable and seed-deterministic; timing goes to stderr so equal
seeds produce byte-identical result files. Exit codes: 0 success, 1 input
error, 2 infeasible, 3 budget exceeded.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from .approx import (
    Capacity,
    Chromatic,
    ClusterConstraint,
    Diversity,
    Fair,
    LowerBound,
    constrained_cluster,
)
from .core import (
    Assignment,
    BudgetExceededError,
    Dataset,
    EuclideanMetric,
    FairnessSpec,
    InfeasibleError,
    MatrixMetric,
    Objective,
    WeightedSet,
    build_equivalence_classes,
    clustering_cost,
    constraint_matrix_of,
)
from .coreset import Regime, build_universal_coreset, regime_of
from .flow import capacitated_assign, chromatic_assign, lower_bounded_assign
from .milp import fair_assign_exact
from .oracle import OracleBudget, exact_fair_optimum, exact_variant_optimum
from .sketch import kmeans_reduce
from .streaming import open_stream, stream_coreset, stream_insert

log = logging.getLogger("fairkit")

EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_BUDGET = 3


class InputError(Exception):
    pass


# ---------------------------------------------------------------------------
# ingestion


def _read_csv_rows(path: str) -> list[list[str]]:
    rows = []
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise InputError(f"{path}: {e}") from e
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        rows.append([cell.strip() for cell in line.split(",")])
    if not rows:
        raise InputError(f"{path}: no data rows")
    return rows


def _parse_float(cell: str, path: str, lineno: int) -> float:
    try:
        v = float(cell)
    except ValueError as e:
        raise InputError(f"{path}:{lineno}: not a number: {cell!r}") from e
    if not np.isfinite(v):
        raise InputError(f"{path}:{lineno}: non-finite value")
    return v


def ingest(
    points_path: str,
    groups_path: Optional[str] = None,
    membership_path: Optional[str] = None,
    matrix: bool = False,
    validate_metric: bool = True,
) -> Dataset:
    """Load a dataset from CSV files.

    ``points_path`` holds either one row of coordinates per point or, with
    ``matrix=True``, an n x n distance matrix. Group memberships come from a
    per-row semicolon list (inline last column or ``groups_path``) or a
    (point_id, group_id) membership file; with no group input every point
    joins group 0. Malformed input is rejected with a line number.
    """
    rows = _read_csv_rows(points_path)
    inline_groups: Optional[list[str]] = None
    if not matrix and groups_path is None and membership_path is None:
        tail = [r[-1] for r in rows]
        if any(";" in c or not _is_number(c) for c in tail):
            inline_groups = tail
            rows = [r[:-1] for r in rows]
            if any(not r for r in rows):
                raise InputError(f"{points_path}: rows with only a group column")

    values = []
    width = len(rows[0])
    for lineno, row in enumerate(rows, start=1):
        if len(row) != width:
            raise InputError(f"{points_path}:{lineno}: ragged row ({len(row)} vs {width} cells)")
        values.append([_parse_float(c, points_path, lineno) for c in row])
    data = np.array(values)

    if matrix:
        if data.shape[0] != data.shape[1]:
            raise InputError(f"{points_path}: distance matrix must be square, got {data.shape}")
        if np.any(data < 0):
            raise InputError(f"{points_path}: negative distances")
        try:
            metric: object = MatrixMetric(data, validate=validate_metric)
        except ValueError as e:
            raise InputError(f"{points_path}: {e}") from e
    else:
        metric = EuclideanMetric(data)
    n = metric.n

    if inline_groups is not None:
        group_lists = _groups_from_tokens(inline_groups, points_path)
    elif groups_path is not None:
        tokens = [",".join(r) for r in _read_csv_rows(groups_path)]
        if len(tokens) != n:
            raise InputError(f"{groups_path}: {len(tokens)} rows for {n} points")
        group_lists = _groups_from_tokens(tokens, groups_path)
    elif membership_path is not None:
        group_lists = _groups_from_membership(membership_path, n)
    else:
        group_lists = [list(range(n))]
    try:
        return build_equivalence_classes(metric, group_lists)
    except ValueError as e:
        raise InputError(str(e)) from e


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def _groups_from_tokens(tokens: list[str], path: str) -> list[list[int]]:
    groups: dict[int, list[int]] = {}
    for pid, tok in enumerate(tokens):
        for part in tok.split(";"):
            part = part.strip()
            if not part:
                raise InputError(f"{path}: point {pid} has an empty group id")
            try:
                g = int(part)
            except ValueError as e:
                raise InputError(f"{path}: point {pid}: bad group id {part!r}") from e
            groups.setdefault(g, []).append(pid)
    n_groups = max(groups) + 1
    return [groups.get(g, []) for g in range(n_groups)]


def _groups_from_membership(path: str, n: int) -> list[list[int]]:
    groups: dict[int, list[int]] = {}
    for lineno, row in enumerate(_read_csv_rows(path), start=1):
        if len(row) != 2:
            raise InputError(f"{path}:{lineno}: expected point_id,group_id")
        try:
            pid, g = int(row[0]), int(row[1])
        except ValueError as e:
            raise InputError(f"{path}:{lineno}: bad ids {row!r}") from e
        if pid < 0 or pid >= n:
            raise InputError(f"{path}:{lineno}: unknown point id {pid}")
        groups.setdefault(g, []).append(pid)
    if not groups:
        raise InputError(f"{path}: empty membership file")
    n_groups = max(groups) + 1
    return [groups.get(g, []) for g in range(n_groups)]


def serialize_dataset(ds: Dataset, points_path: str, membership_path: str) -> None:
    """Write a dataset back to a points CSV and a membership CSV."""
    lines = []
    if isinstance(ds.metric, EuclideanMetric):
        for row in ds.metric.coords:
            lines.append(",".join(repr(float(x)) for x in row))
    else:
        for row in ds.metric.matrix:
            lines.append(",".join(repr(float(x)) for x in row))
    Path(points_path).write_text("\n".join(lines) + "\n")
    memb = []
    for g, members in enumerate(ds.groups):
        for p in sorted(members):
            memb.append(f"{p},{g}")
    Path(membership_path).write_text("\n".join(memb) + "\n")


# ---------------------------------------------------------------------------
# constraint / config parsing


def _parse_fractions(text: str, flag: str) -> list:
    try:
        return [v.strip() for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise InputError(f"{flag}: {e}") from e


def parse_constraint(args, ds: Dataset) -> ClusterConstraint:
    spec = args.constraint or "fair"
    if spec == "fair":
        if not args.alpha or not args.beta:
            raise InputError("--constraint fair needs --alpha and --beta")
        alpha = _parse_fractions(args.alpha, "--alpha")
        beta = _parse_fractions(args.beta, "--beta")
        if len(alpha) != ds.n_groups or len(beta) != ds.n_groups:
            raise InputError(
                f"--alpha/--beta need {ds.n_groups} entries, got {len(alpha)}/{len(beta)}"
            )
        try:
            return Fair(FairnessSpec.from_values(alpha, beta))
        except (ValueError, ZeroDivisionError) as e:
            raise InputError(f"bad fairness bounds: {e}") from e
    if spec == "chromatic":
        return Chromatic()
    for prefix, ctor in (("lower:", LowerBound), ("cap:", Capacity), ("div:", Diversity)):
        if spec.startswith(prefix):
            try:
                return ctor(int(spec[len(prefix) :]))
            except ValueError as e:
                raise InputError(f"bad constraint parameter in {spec!r}") from e
    raise InputError(f"unknown constraint {spec!r}")


def _constraint_config(constraint: ClusterConstraint) -> dict:
    if isinstance(constraint, Fair):
        return {
            "kind": "fair",
            "alpha": [str(a) for a in constraint.spec.alpha],
            "beta": [str(b) for b in constraint.spec.beta],
        }
    if isinstance(constraint, LowerBound):
        return {"kind": "lower", "lower": constraint.lower}
    if isinstance(constraint, Capacity):
        return {"kind": "cap", "capacity": constraint.capacity}
    if isinstance(constraint, Diversity):
        return {"kind": "div", "l": constraint.l}
    return {"kind": "chromatic"}


# ---------------------------------------------------------------------------
# result serialization


def _centers_json(centers) -> list:
    out = []
    for c in centers:
        if isinstance(c, (int, np.integer)):
            out.append(int(c))
        else:
            out.append([float(x) for x in np.asarray(c)])
    return out


def _assignment_json(asg: Assignment) -> list:
    triples = [[int(p), int(j), int(w)] for (p, j), w in asg.weights.items() if w > 0]
    triples.sort()
    return triples


def _emit(result: dict, args, elapsed_ms: float) -> None:
    text = json.dumps(result, sort_keys=True, indent=2) + "\n"
    log.info("elapsed_ms=%.1f", elapsed_ms)
    print(f"elapsed_ms={elapsed_ms:.1f}", file=sys.stderr)
    if args.output == "-":
        sys.stdout.write(text)
    else:
        Path(args.output).write_text(text)
        print(args.output)


def _load_centers(path: str, ds: Dataset):
    if path.endswith(".json"):
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise InputError(f"{path}: {e}") from e
        raw = doc.get("centers") if isinstance(doc, dict) else doc
        if raw is None:
            raise InputError(f"{path}: no 'centers' key")
    else:
        raw = [[_parse_float(c, path, i + 1) for c in row] for i, row in enumerate(_read_csv_rows(path))]
    centers = []
    for c in raw:
        if isinstance(c, (int, float)) or (isinstance(c, list) and len(c) == 1 and isinstance(ds.metric, MatrixMetric)):
            idx = int(c if isinstance(c, (int, float)) else c[0])
            if idx < 0 or idx >= ds.n:
                raise InputError(f"{path}: center index {idx} out of range")
            centers.append(idx)
        else:
            if not isinstance(ds.metric, EuclideanMetric):
                raise InputError("coordinate centers need Euclidean input")
            centers.append(np.asarray(c, dtype=float))
    return tuple(centers)


# ---------------------------------------------------------------------------
# commands


def _cmd_coreset(args) -> dict:
    ds = _ingest_args(args)
    obj = Objective(args.objective)
    w = build_universal_coreset(
        ds,
        args.k,
        args.epsilon,
        obj,
        seed=args.seed,
        strict_kmeans_rescale=args.strict_kmeans_rescale,
    )
    return {
        "config": _base_config(args, ds),
        "coreset": {
            "items": [
                [int(p), int(c), int(wt)]
                for p, c, wt in zip(w.point_ids, w.class_ids, w.weights)
            ]
        },
        "diagnostics": {"coreset_size": w.size},
    }


def _cmd_assign(args) -> dict:
    ds = _ingest_args(args)
    obj = Objective(args.objective)
    constraint = parse_constraint(args, ds)
    centers = _load_centers(args.centers, ds)
    if isinstance(constraint, (Fair, Diversity)):
        from .approx import _constraint_spec

        spec = _constraint_spec(constraint, ds)
        res = fair_assign_exact(ds, WeightedSet.from_dataset(ds), centers, spec, obj)
        if res.status != "optimal":
            raise InfeasibleError("no fair assignment exists")
        asg = res.assignment
    elif isinstance(constraint, LowerBound):
        asg = lower_bounded_assign(ds, centers, constraint.lower, obj)
    elif isinstance(constraint, Capacity):
        asg = capacitated_assign(ds, centers, constraint.capacity, obj)
    else:
        asg = chromatic_assign(ds, centers, obj)
    cost = clustering_cost(ds, asg)
    return {
        "config": _base_config(args, ds),
        "centers": _centers_json(centers),
        "assignment": _assignment_json(asg),
        "cost": cost,
        "constraint_matrix": constraint_matrix_of(asg, ds).entries.tolist(),
        "diagnostics": {"guess_space_exhaustive": None, "coreset_size": None},
    }


def _cmd_cluster(args) -> dict:
    ds = _ingest_args(args)
    obj = Objective(args.objective)
    constraint = parse_constraint(args, ds)
    sol = constrained_cluster(
        ds,
        args.k,
        args.epsilon,
        obj,
        constraint,
        seed=args.seed,
        guess_budget=args.guess_budget,
        trials=args.trials,
    )
    return {
        "config": _base_config(args, ds),
        "centers": _centers_json(sol.centers),
        "assignment": _assignment_json(sol.assignment),
        "cost": sol.cost,
        "constraint_matrix": constraint_matrix_of(sol.assignment, ds).entries.tolist(),
        "diagnostics": {
            "guess_space_exhaustive": sol.meta.get("guess_space_exhaustive"),
            "coreset_size": sol.meta.get("coreset_size"),
        },
    }


def _cmd_stream(args) -> dict:
    ds = _ingest_args(args)
    if not isinstance(ds.metric, EuclideanMetric):
        raise InputError("stream mode needs coordinate input")
    obj = Objective(args.objective)
    state = open_stream(
        ds.class_groups, args.k, args.epsilon, obj, seed=args.seed
    )
    for i in range(ds.n):
        stream_insert(state, ds.metric.coords[i], sorted(ds.point_groups(i)))
    snapshot, w = stream_coreset(state)
    return {
        "config": _base_config(args, ds),
        "coreset": {
            "items": [
                [int(p), int(c), int(wt)]
                for p, c, wt in zip(w.point_ids, w.class_ids, w.weights)
            ],
            "points": snapshot.metric.coords.tolist(),
        },
        "diagnostics": {
            "coreset_size": w.size,
            "buckets": [b.total_weight() if b else 0 for b in state.buckets],
        },
    }


def _cmd_reduce(args) -> dict:
    ds = _ingest_args(args)
    obj = Objective(args.objective)
    diagnostics: dict = {}
    if obj is Objective.MEANS and isinstance(ds.metric, EuclideanMetric):
        red = kmeans_reduce(ds, args.k, args.epsilon, seed=args.seed)
        w = red.coreset
        points = red.dataset.metric.coords[w.point_ids].tolist()
        diagnostics["sketch_dim"] = red.sketch.m
        diagnostics["sketch_residual"] = red.sketch.residual
    else:
        from .approx import reduce_instance

        w, _ = reduce_instance(ds, args.k, args.epsilon, obj, seed=args.seed)
        points = None
    out = {
        "config": _base_config(args, ds),
        "coreset": {
            "items": [
                [int(p), int(c), int(wt)]
                for p, c, wt in zip(w.point_ids, w.class_ids, w.weights)
            ]
        },
        "diagnostics": {**diagnostics, "coreset_size": w.size},
    }
    if points is not None:
        out["coreset"]["points"] = points
    return out


def _cmd_oracle(args) -> dict:
    ds = _ingest_args(args)
    obj = Objective(args.objective)
    constraint = parse_constraint(args, ds)
    budget = OracleBudget(
        max_points=args.oracle_points, max_k=args.oracle_k, max_candidates=args.oracle_candidates
    )
    if isinstance(constraint, Fair):
        res = exact_fair_optimum(ds, args.k, constraint.spec, obj, budget=budget)
    else:
        res = exact_variant_optimum(ds, args.k, constraint, obj, budget=budget)
    if res.status != "optimal":
        raise InfeasibleError("no feasible clustering under this constraint")
    return {
        "config": _base_config(args, ds),
        "centers": _centers_json(res.centers),
        "cost": res.cost,
        "assignment": (
            [[int(i), int(j), 1] for i, j in enumerate(res.assignment)]
            if res.assignment is not None
            else None
        ),
        "diagnostics": {"guess_space_exhaustive": True, "coreset_size": None},
    }


def _cmd_bench(args) -> dict:
    if args.seed is None:
        raise InputError("bench mode requires an explicit --seed")
    runs = []
    for i in range(args.repeats):
        run_args = argparse.Namespace(**vars(args))
        run_args.seed = args.seed + i
        t0 = time.perf_counter()
        result = _cmd_cluster(run_args)
        runs.append(
            {
                "seed": run_args.seed,
                "cost": result["cost"],
                "elapsed_ms": (time.perf_counter() - t0) * 1e3,
                "coreset_size": result["diagnostics"]["coreset_size"],
            }
        )
    return {"config": {"command": "bench", "repeats": args.repeats}, "runs": runs}


def _ingest_args(args) -> Dataset:
    return ingest(
        args.points,
        groups_path=args.groups,
        membership_path=args.membership,
        matrix=args.matrix,
        validate_metric=not args.no_validate,
    )


def _base_config(args, ds: Dataset) -> dict:
    cfg = {
        "command": args.command,
        "points": args.points,
        "matrix": bool(args.matrix),
        "k": getattr(args, "k", None),
        "epsilon": getattr(args, "epsilon", None),
        "objective": args.objective,
        "seed": getattr(args, "seed", None),
        "threads": args.threads,
        "n": ds.n,
        "n_groups": ds.n_groups,
        "n_classes": ds.n_classes,
    }
    if getattr(args, "constraint", None) or getattr(args, "alpha", None):
        try:
            cfg["constraint"] = _constraint_config(parse_constraint(args, ds))
        except InputError:
            cfg["constraint"] = args.constraint
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairkit",
        description="Universal coresets and solvers for constrained (fair) clustering.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name)
        p.set_defaults(func=fn)
        p.add_argument("--points", required=True, help="points CSV (rows of coordinates), or distance matrix with --matrix")
        p.add_argument("--matrix", action="store_true", help="interpret --points as an n x n distance matrix")
        p.add_argument("--groups", help="per-point semicolon-separated group ids, one row per point")
        p.add_argument("--membership", help="CSV of point_id,group_id rows")
        p.add_argument("--no-validate", action="store_true", help="skip metric validation on load")
        p.add_argument("--k", type=int, default=2)
        p.add_argument("--epsilon", type=float, default=0.5)
        p.add_argument("--objective", choices=["median", "means"], default="median")
        p.add_argument("--alpha", help="comma-separated per-group upper shares, e.g. 0.6,0.6 or 2/3,2/3")
        p.add_argument("--beta", help="comma-separated per-group lower shares")
        p.add_argument(
            "--constraint",
            help="fair | lower:L | cap:U | div:l | chromatic (default fair when --alpha given)",
        )
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--guess-budget", type=int, default=1_000_000)
        p.add_argument("--trials", type=int, default=32)
        p.add_argument("--strict-kmeans-rescale", action="store_true")
        p.add_argument("--threads", type=int, default=1, help="worker cap; 1 = deterministic sequential")
        p.add_argument("--output", default="-", help="result path, or - for stdout")
        if name == "assign":
            p.add_argument("--centers", required=True, help="centers JSON (from cluster) or CSV")
        if name == "oracle":
            p.add_argument("--oracle-points", type=int, default=8)
            p.add_argument("--oracle-k", type=int, default=3)
            p.add_argument("--oracle-candidates", type=int, default=2_000_000)
        if name == "bench":
            p.add_argument("--repeats", type=int, default=5)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("FAIRKIT_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    t0 = time.perf_counter()
    try:
        result = args.func(args)
    except InputError as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleError as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except BudgetExceededError as e:
        print(f"budget exceeded: {e}", file=sys.stderr)
        return EXIT_BUDGET
    _emit(result, args, (time.perf_counter() - t0) * 1e3)
    return 0


COMMANDS = {
    "coreset": _cmd_coreset,
    "assign": _cmd_assign,
    "cluster": _cmd_cluster,
    "stream": _cmd_stream,
    "reduce": _cmd_reduce,
    "oracle": _cmd_oracle,
    "bench": _cmd_bench,
}


if __name__ == "__main__":
    sys.exit(main())
