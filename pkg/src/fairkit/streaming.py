"""One-pass merge-and-reduce maintenance of a universal coreset.

Buckets hold coresets of exponentially growing prefixes: bucket j >= 1
represents exactly 2^(j-1) T raw points, the buffer at most T. When the
buffer fills, the union of the buffer and every bucket below the first
empty slot is reduced into that slot with a per-level error schedule
rho_j = eps / (b (j+1)^2) whose telescoped product stays below 1 + eps for
any stream length. Class structure is fixed at stream start because the
buffer size and the per-class sampling depend on it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import Dataset, EuclideanMetric, MatrixMetric, Objective, WeightedSet
from .coreset import build_universal_coreset

__all__ = ["Bucket", "StreamState", "open_stream", "stream_insert", "stream_coreset"]

DEFAULT_SCHEDULE_BASE = 8


@dataclass(eq=False)
class Bucket:
    coords: np.ndarray  # (m, d) coordinates, or (m,) indices for matrix streams
    class_ids: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return int(self.class_ids.size)

    def total_weight(self) -> int:
        return int(self.weights.sum())


@dataclass(eq=False)
class StreamState:
    """Single-writer stream accumulator; snapshot before reading concurrently."""

    class_universe: tuple[frozenset[int], ...]
    n_groups: int
    k: int
    epsilon: float
    objective: Objective
    seed: int
    schedule_base: int
    confidence: float
    buffer_size: int  # T
    base_matrix: Optional[MatrixMetric] = None
    buckets: list = field(default_factory=list)
    buf_coords: list = field(default_factory=list)
    buf_classes: list = field(default_factory=list)
    points_seen: int = 0
    class_counts: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.class_counts is None:
            self.class_counts = np.zeros(len(self.class_universe), dtype=np.int64)
        self._class_of = {g: t for t, g in enumerate(self.class_universe)}

    def rho(self, level: int) -> float:
        return self.epsilon / (self.schedule_base * (level + 1) ** 2)


def open_stream(
    class_universe: Sequence[Iterable[int]],
    k: int,
    epsilon: float,
    objective: Objective = Objective.MEDIAN,
    seed: int = 0,
    confidence: float = 0.01,
    schedule_base: int = DEFAULT_SCHEDULE_BASE,
    base_matrix: Optional[MatrixMetric] = None,
) -> StreamState:
    """Declare the class universe and sizing parameters, before any point.

    ``class_universe`` lists the admissible group-membership sets; the
    buffer size T = ceil(Gamma k^2 / eps^3) depends on their count, which is
    why new classes cannot appear mid-stream (reopen with a larger universe
    to grow it).
    """
    universe = tuple(frozenset(int(g) for g in c) for c in class_universe)
    if len(set(universe)) != len(universe):
        raise ValueError("class universe contains duplicates")
    if any(not c for c in universe):
        raise ValueError("every class needs at least one group")
    if not (0 < epsilon <= 1):
        raise ValueError("epsilon must be in (0, 1]")
    gamma = len(universe)
    n_groups = max((max(c) for c in universe), default=-1) + 1
    t = math.ceil(gamma * k**2 / epsilon**3)
    return StreamState(
        class_universe=universe,
        n_groups=n_groups,
        k=k,
        epsilon=epsilon,
        objective=objective,
        seed=seed,
        schedule_base=schedule_base,
        confidence=confidence,
        buffer_size=max(2, t),
        base_matrix=base_matrix,
    )


def stream_insert(state: StreamState, point, group_ids: Iterable[int]) -> StreamState:
    """Insert one point (coordinates, or an index for matrix streams).

    The point joins the buffer; a full buffer triggers the merge-and-reduce
    cascade into the first empty bucket. Unknown group sets are rejected.
    """
    key = frozenset(int(g) for g in group_ids)
    t = state._class_of.get(key)
    if t is None:
        raise ValueError(f"group set {sorted(key)} is not in the declared class universe")
    if state.base_matrix is None:
        state.buf_coords.append(np.asarray(point, dtype=float))
    else:
        state.buf_coords.append(int(point))
    state.buf_classes.append(t)
    state.points_seen += 1
    state.class_counts[t] += 1
    if len(state.buf_classes) >= state.buffer_size:
        _reduce_cascade(state)
    return state


def _reduce_cascade(state: StreamState) -> None:
    level = 1
    while level <= len(state.buckets) and state.buckets[level - 1] is not None:
        level += 1
    while len(state.buckets) < level:
        state.buckets.append(None)

    pieces = [_buffer_bucket(state)] + [
        state.buckets[j] for j in range(level - 1) if j < len(state.buckets) and state.buckets[j]
    ]
    coords = np.concatenate([np.atleast_1d(np.asarray(b.coords)) for b in pieces], axis=0)
    class_ids = np.concatenate([b.class_ids for b in pieces])
    weights = np.concatenate([b.weights for b in pieces])

    ds = _bucket_dataset(state, coords, class_ids)
    w = build_universal_coreset(
        ds,
        state.k,
        state.rho(level),
        state.objective,
        seed=_derive(state.seed, state.points_seen),
        weights=weights,
    )
    state.buckets[level - 1] = Bucket(
        coords[w.point_ids], w.class_ids.copy(), w.weights.copy()
    )
    for j in range(level - 1):
        state.buckets[j] = None
    state.buf_coords.clear()
    state.buf_classes.clear()


def _buffer_bucket(state: StreamState) -> Bucket:
    if state.base_matrix is None:
        coords = np.array(state.buf_coords, dtype=float)
    else:
        coords = np.array(state.buf_coords, dtype=np.int64)
    cls = np.array(state.buf_classes, dtype=np.int64)
    return Bucket(coords, cls, np.ones(cls.size, dtype=np.int64))


def _bucket_dataset(state: StreamState, coords, class_ids) -> Dataset:
    if state.base_matrix is None:
        metric = EuclideanMetric(np.atleast_2d(coords))
    else:
        idx = np.asarray(coords, dtype=np.int64)
        metric = MatrixMetric(state.base_matrix.matrix[np.ix_(idx, idx)], validate=False)
    groups = [
        frozenset(
            int(p) for p in np.nonzero([q in state.class_universe[c] for c in class_ids])[0]
        )
        for q in range(state.n_groups)
    ]
    cls = np.asarray(class_ids, dtype=np.int64)
    return Dataset(metric, tuple(groups), cls, state.class_universe)


def stream_coreset(state: StreamState) -> tuple[Dataset, WeightedSet]:
    """Union of all buckets plus the buffer, as a self-contained dataset.

    Per-class total weight equals the per-class stream count at every
    prefix, by weight conservation of every reduce step.
    """
    pieces = [b for b in state.buckets if b is not None]
    if state.buf_classes:
        pieces = [_buffer_bucket(state)] + pieces
    if not pieces:
        raise ValueError("the stream is empty")
    coords = np.concatenate([np.atleast_1d(np.asarray(b.coords)) for b in pieces], axis=0)
    class_ids = np.concatenate([b.class_ids for b in pieces])
    weights = np.concatenate([b.weights for b in pieces])
    ds = _bucket_dataset(state, coords, class_ids)
    n = class_ids.size
    return ds, WeightedSet(np.arange(n), class_ids.copy(), weights.copy())


def _derive(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])
