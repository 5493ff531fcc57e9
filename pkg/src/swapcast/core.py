"""Prediction geometry, forecast distributions and transcripts."""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

TOL = 1e-12


class DimensionError(ValueError):
    """Raised when a point, utility or family does not match the grid."""


@dataclass(frozen=True, eq=False)
class PredictionGrid:
    """A finite net of the box ``[0,1]^free`` with an optional lift coordinate.

    ``axes`` holds the sorted values of each free coordinate; ``points`` is
    their Cartesian product in lexicographic order, with a trailing column of
    ones appended when ``lifted`` is set.
    """

    epsilon: float
    axes: tuple[np.ndarray, ...]
    lifted: bool = False
    points: np.ndarray = field(init=False, repr=False)
    lattice: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.axes:
            raise ValueError("grid needs at least one free coordinate")
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        for a in axes:
            if a.ndim != 1 or a.size == 0:
                raise ValueError("each axis must be a non-empty 1-d array")
            if np.any(np.diff(a) <= TOL):
                raise ValueError("axis values must be strictly increasing")
            if a[0] < -TOL or a[-1] > 1 + TOL:
                raise ValueError("axis values must lie in [0, 1]")
        object.__setattr__(self, "axes", axes)
        idx = np.array(list(itertools.product(*[range(a.size) for a in axes])), dtype=np.int64)
        idx = idx.reshape(-1, len(axes))
        pts = np.column_stack([axes[j][idx[:, j]] for j in range(len(axes))])
        if self.lifted:
            pts = np.hstack([pts, np.ones((pts.shape[0], 1))])
        pts.setflags(write=False)
        idx.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "lattice", idx)

    @property
    def dim(self) -> int:
        return self.free_dims + int(self.lifted)

    @property
    def free_dims(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.axes)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.size

    @property
    def free_points(self) -> np.ndarray:
        return self.points[:, : self.free_dims]

    @property
    def lifted_points(self) -> np.ndarray:
        """Points in the affine-lifted space used by utilities."""
        if self.lifted:
            return self.points
        return np.hstack([self.points, np.ones((self.size, 1))])

    @property
    def is_uniform(self) -> bool:
        """True when every axis is evenly spaced (lattice arithmetic is exact)."""
        for a in self.axes:
            if a.size > 2 and np.ptp(np.diff(a)) > 1e-9:
                return False
        return True

    def point(self, free: Sequence[float]) -> np.ndarray:
        """Build an outcome point of this grid's dimension from free coordinates."""
        y = np.asarray(free, dtype=float).reshape(-1)
        if y.size == self.dim and (not self.lifted or abs(y[-1] - 1.0) <= TOL):
            return y.copy()
        if y.size != self.free_dims:
            raise DimensionError(f"expected {self.free_dims} free coordinates, got {y.size}")
        return np.append(y, 1.0) if self.lifted else y.copy()

    def lift(self, y: np.ndarray) -> np.ndarray:
        y = self.check_point(y)
        return y if self.lifted else np.append(y, 1.0)

    def check_point(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.size != self.dim:
            raise DimensionError(f"point has dimension {y.size}, grid has {self.dim}")
        if self.lifted and abs(y[-1] - 1.0) > TOL:
            raise DimensionError("lifted coordinate must equal 1")
        return y

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "epsilon": self.epsilon,
            "lifted": self.lifted,
            "points": self.points.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PredictionGrid":
        pts = np.asarray(data["points"], dtype=float)
        lifted = bool(data["lifted"])
        free = pts[:, : pts.shape[1] - int(lifted)]
        axes = tuple(np.unique(free[:, j]) for j in range(free.shape[1]))
        grid = cls(float(data["epsilon"]), axes, lifted)
        if grid.points.shape != pts.shape or not np.allclose(grid.points, pts, atol=TOL):
            raise ValueError("points do not form a product grid in canonical order")
        return grid

    @classmethod
    def from_shape(cls, shape: Sequence[int], lifted: bool = False) -> "PredictionGrid":
        """Evenly spaced grid with ``shape[j]`` values on free axis ``j``."""
        axes = tuple(np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1) for n in shape)
        eps = max((1.0 / (n - 1) for n in shape if n > 1), default=1.0)
        return cls(eps, axes, lifted)


def axis_values(epsilon: float) -> np.ndarray:
    """Evenly spaced values in [0, 1] with spacing at most ``epsilon``, both ends included."""
    n = round(1.0 / epsilon)
    if abs(n * epsilon - 1.0) > 1e-9:
        n = math.ceil(1.0 / epsilon)
    return np.clip(np.arange(n + 1) / n, 0.0, 1.0)


def build_epsilon_net(dim: int, epsilon: float, lifted: bool = False) -> PredictionGrid:
    """l-infinity epsilon-net of the box; ``dim`` counts the lift coordinate if any."""
    if isinstance(dim, bool) or int(dim) != dim or dim < 1:
        raise ValueError(f"dim must be a positive integer, got {dim!r}")
    if not (epsilon > 0 and epsilon <= 1):
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon!r}")
    free = int(dim) - int(lifted)
    if free < 1:
        raise ValueError("a lifted grid needs dim >= 2")
    vals = axis_values(float(epsilon))
    return PredictionGrid(float(epsilon), tuple(vals for _ in range(free)), lifted)


def nearest_grid_point(grid: PredictionGrid, y) -> int:
    """Index of the grid point closest to ``y`` in l-infinity; ties go to the smaller index."""
    y = grid.check_point(y)
    dist = np.max(np.abs(grid.points - y), axis=1)
    best = dist.min()
    return int(np.flatnonzero(dist <= best + TOL)[0])


@dataclass(frozen=True, eq=False)
class ForecastDistribution:
    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if np.any(w < 0) or not np.isfinite(w).all():
            raise ValueError("forecast weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"forecast weights sum to {w.sum()!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def point_mass(cls, n: int, index: int) -> "ForecastDistribution":
        w = np.zeros(n)
        w[index] = 1.0
        return cls(w)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    def entropy(self) -> float:
        w = self.weights[self.weights > 0]
        return float(-(w * np.log(w)).sum())


@dataclass(frozen=True)
class Round:
    forecast: ForecastDistribution
    realized_index: int
    outcome: np.ndarray
    commitment: str = ""
    diagnostics: dict = field(default_factory=dict)


def commit_outcome(t: int, y: np.ndarray) -> str:
    """Hash binding the round-``t`` outcome before the forecast is computed."""
    h = hashlib.sha256()
    h.update(int(t).to_bytes(8, "little"))
    h.update(np.ascontiguousarray(y, dtype="<f8").tobytes())
    return h.hexdigest()


class Transcript:
    """Append-only record of forecasts, realized forecasts and outcomes."""

    def __init__(self, grid: PredictionGrid, horizon: int | None = None):
        self.grid = grid
        self.horizon = horizon
        self._rounds: list[Round] = []

    def __len__(self) -> int:
        return len(self._rounds)

    def __iter__(self) -> Iterator[Round]:
        return iter(self._rounds)

    def __getitem__(self, i):
        return self._rounds[i]

    @property
    def rounds(self) -> tuple[Round, ...]:
        return tuple(self._rounds)

    @property
    def complete(self) -> bool:
        return self.horizon is None or len(self._rounds) == self.horizon

    def append(self, forecast: ForecastDistribution, realized_index: int, outcome,
               commitment: str = "", diagnostics: dict | None = None) -> Round:
        if self.horizon is not None and len(self._rounds) >= self.horizon:
            raise ValueError("transcript already holds the full horizon")
        y = self.grid.check_point(outcome).copy()
        y.setflags(write=False)
        if forecast.weights.size != self.grid.size:
            raise DimensionError("forecast length does not match grid")
        if forecast.weights[realized_index] <= 0:
            raise ValueError("realized index outside forecast support")
        r = Round(forecast, int(realized_index), y, commitment, dict(diagnostics or {}))
        self._rounds.append(r)
        return r

    def view(self, upto: int) -> "HistoryView":
        return HistoryView(self, upto)

    # stacked arrays used by metrics
    def forecast_matrix(self) -> np.ndarray:
        if not self._rounds:
            return np.zeros((0, self.grid.size))
        return np.vstack([r.forecast.weights for r in self._rounds])

    def outcome_matrix(self) -> np.ndarray:
        if not self._rounds:
            return np.zeros((0, self.grid.dim))
        return np.vstack([r.outcome for r in self._rounds])

    def realized_indices(self) -> np.ndarray:
        return np.array([r.realized_index for r in self._rounds], dtype=np.int64)

    def to_dict(self) -> dict:
        rows = []
        for r in self._rounds:
            sup = r.forecast.support
            rows.append({
                "support": sup.tolist(),
                "weights": r.forecast.weights[sup].tolist(),
                "realized_index": r.realized_index,
                "outcome": r.outcome.tolist(),
                "commitment": r.commitment,
            })
        return {"grid": self.grid.to_dict(), "horizon": self.horizon, "rounds": rows}

    @classmethod
    def from_dict(cls, data: dict) -> "Transcript":
        grid = PredictionGrid.from_dict(data["grid"])
        tr = cls(grid, data.get("horizon"))
        for row in data["rounds"]:
            w = np.zeros(grid.size)
            w[np.asarray(row["support"], dtype=np.int64)] = row["weights"]
            tr.append(ForecastDistribution(w), row["realized_index"], row["outcome"],
                      row.get("commitment", ""))
        return tr

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()

    def diagnostics(self) -> list[dict]:
        return [dict(t=i + 1, **r.diagnostics) for i, r in enumerate(self._rounds)]


class HistoryView:
    """Read-only window onto the first ``upto`` rounds of a transcript."""

    def __init__(self, transcript: Transcript, upto: int):
        self._tr = transcript
        self._n = min(upto, len(transcript))

    def __len__(self) -> int:
        return self._n

    def __getitem__(self, i: int) -> Round:
        if i < 0:
            i += self._n
        if not 0 <= i < self._n:
            raise IndexError(i)
        return self._tr[i]

    def __iter__(self) -> Iterator[Round]:
        for i in range(self._n):
            yield self._tr[i]

    @property
    def grid(self) -> PredictionGrid:
        return self._tr.grid
