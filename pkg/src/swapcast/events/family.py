from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence, Union

import numpy as np

from ..agents import (
    TieRule,
    UtilityCover,
    UtilityFunction,
    best_response_table,
    logistic_table,
)
from ..core import DimensionError, PredictionGrid


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float


@dataclass(frozen=True)
class Polygon:
    vertices: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class BestResponse:
    utility: str
    action: int


@dataclass(frozen=True)
class Bucket:
    utility: str
    action: int
    bucket: int


Label = Union[Interval, Polygon, BestResponse, Bucket]


@dataclass(frozen=True)
class Event:
    membership: np.ndarray
    label: Label

    def __call__(self, index: int) -> bool:
        return bool(self.membership[index])


@dataclass(frozen=True, eq=False)
class EventFamily:
    """Deduplicated events stored as a boolean membership matrix over grid points.

    ``labels[j]`` lists every construction label that produced event ``j``.
    """

    name: str
    grid: PredictionGrid
    membership: np.ndarray
    labels: tuple[tuple[Label, ...], ...]
    dedup_log: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        m = np.asarray(self.membership, dtype=bool)
        if m.ndim != 2 or m.shape[1] != self.grid.size:
            raise DimensionError("membership rows must match the grid size")
        if len(self.labels) != m.shape[0]:
            raise ValueError("one label tuple per event required")
        m.setflags(write=False)
        object.__setattr__(self, "membership", m)

    def __len__(self) -> int:
        return self.membership.shape[0]

    def __getitem__(self, j: int) -> Event:
        return Event(self.membership[j], self.labels[j][0])

    def __iter__(self):
        return (self[j] for j in range(len(self)))

    @cached_property
    def matrix(self) -> np.ndarray:
        """Membership as float64, the form used in matrix products."""
        return self.membership.astype(np.float64)

    @cached_property
    def label_index(self) -> dict:
        return {lab: j for j, labs in enumerate(self.labels) for lab in labs}

    def find(self, label: Label) -> int | None:
        """Event index carrying ``label``; ``None`` if it was dropped as empty."""
        return self.label_index.get(label)

    def summary(self) -> dict:
        return {
            "family": self.name,
            "grid_size": self.grid.size,
            "raw_count": self.dedup_log.get("raw", len(self)),
            "deduped_count": len(self),
            "merged_duplicates": self.dedup_log.get("merged", 0),
            "dropped_empties": self.dedup_log.get("dropped_empty", 0),
        }


def make_family(name: str, grid: PredictionGrid, rows: np.ndarray,
                labels: Sequence[Label], assume_distinct: bool = False) -> EventFamily:
    """Drop empty rows and merge rows with identical membership, keeping order of first sight."""
    rows = np.asarray(rows, dtype=bool).reshape(-1, grid.size)
    raw = rows.shape[0]
    nonempty = rows.any(axis=1)
    dropped = int(raw - nonempty.sum())
    keep_rows: list[int] = []
    merged_labels: list[list[Label]] = []
    merged = 0
    if assume_distinct:
        keep_rows = list(np.flatnonzero(nonempty))
        merged_labels = [[labels[i]] for i in keep_rows]
    else:
        packed = np.packbits(rows, axis=1)
        seen: dict[bytes, int] = {}
        for i in np.flatnonzero(nonempty):
            key = packed[i].tobytes()
            j = seen.get(key)
            if j is None:
                seen[key] = len(keep_rows)
                keep_rows.append(int(i))
                merged_labels.append([labels[i]])
            else:
                merged_labels[j].append(labels[i])
                merged += 1
    mem = rows[keep_rows] if keep_rows else np.zeros((0, grid.size), dtype=bool)
    log = {"raw": raw, "merged": merged, "dropped_empty": dropped}
    return EventFamily(name, grid, mem, tuple(tuple(l) for l in merged_labels), log)


def intervals_1d(grid: PredictionGrid) -> EventFamily:
    """One event per pair ``y1 <= y2`` of grid values: the points in ``[y1, y2]``."""
    if grid.free_dims != 1:
        raise DimensionError("interval events need a grid with one free coordinate")
    n = grid.size
    vals = grid.free_points[:, 0]
    lo, hi = np.triu_indices(n)
    idx = np.arange(n)
    rows = (idx >= lo[:, None]) & (idx <= hi[:, None])
    labels = [Interval(float(vals[a]), float(vals[b])) for a, b in zip(lo, hi)]
    return make_family("intervals", grid, rows, labels, assume_distinct=True)


def _utilities(cover: UtilityCover | Iterable[UtilityFunction]) -> list[UtilityFunction]:
    return list(cover.utilities if isinstance(cover, UtilityCover) else cover)


def best_response_events(cover: UtilityCover | Iterable[UtilityFunction], grid: PredictionGrid,
                         tie_rule: TieRule = "high") -> EventFamily:
    """Best-response regions ``{y : BR(u, y) = a}`` of every cover utility, restricted to the grid."""
    ys = grid.lifted_points
    rows, labels = [], []
    for u in _utilities(cover):
        if u.dim != ys.shape[1]:
            raise DimensionError(f"utility dimension {u.dim} vs lifted grid dimension {ys.shape[1]}")
        br = best_response_table(u, ys, tie_rule)
        for a in range(u.action_count):
            rows.append(br == a)
            labels.append(BestResponse(u.id, a))
    return make_family("br-cover", grid, np.array(rows).reshape(-1, grid.size), labels)


@dataclass(frozen=True)
class BucketScheme:
    """Width-``tau`` buckets of [0, 1]: half-open except the last, which is closed."""

    tau: float

    def __post_init__(self) -> None:
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")

    @property
    def count(self) -> int:
        return int(math.floor(1.0 / self.tau + 1e-9))

    @property
    def buckets(self) -> list[tuple[float, float]]:
        return [(i * self.tau, (i + 1) * self.tau) for i in range(self.count)]

    @property
    def max_width(self) -> float:
        """Largest bucket width once values above the last edge are clamped into it."""
        return max(self.tau, 1.0 - (self.count - 1) * self.tau)

    def index(self, q):
        """Bucket index of each probability ``q``; values past the last edge clamp to it."""
        q = np.asarray(q, dtype=float)
        x = q / self.tau
        near = np.rint(x)
        x = np.where(np.abs(x - near) <= 1e-9, near, x)
        return np.clip(np.floor(x).astype(np.int64), 0, self.count - 1)


def logistic_bucket_events(cover: UtilityCover | Iterable[UtilityFunction], grid: PredictionGrid,
                           eta: float, scheme: BucketScheme) -> EventFamily:
    """Events ``{y : q_a(u, y) in B_i}`` over cover utilities, actions and buckets."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    ys = grid.lifted_points
    rows, labels = [], []
    for u in _utilities(cover):
        if u.dim != ys.shape[1]:
            raise DimensionError(f"utility dimension {u.dim} vs lifted grid dimension {ys.shape[1]}")
        b = scheme.index(logistic_table(u, ys, eta))
        for a in range(u.action_count):
            for i in range(scheme.count):
                rows.append(b[:, a] == i)
                labels.append(Bucket(u.id, a, i))
    return make_family("logistic-cover", grid, np.array(rows).reshape(-1, grid.size), labels)
