"""Outcome generators.

An adversary sees rounds ``1..t-1`` of the transcript and must commit to
``y_t`` before the round-``t`` forecast exists.  All kinds emit point-mass
outcomes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .agents import UtilityFunction
from .core import HistoryView, PredictionGrid
from .events import EventFamily


class ScriptExhausted(IndexError):
    pass


class Adversary:
    kind = "base"

    def __init__(self, grid: PredictionGrid):
        self.grid = grid

    def next_outcome(self, t: int, history: HistoryView) -> np.ndarray:
        """Outcome for round ``t`` (1-based) given the first ``t-1`` rounds."""
        if len(history) != t - 1:
            raise ValueError(f"round {t} needs exactly {t - 1} completed rounds, got {len(history)}")
        return self.grid.point(self._free_outcome(t, history))

    def _free_outcome(self, t: int, history: HistoryView) -> np.ndarray:
        raise NotImplementedError

    def forced_prediction(self, t: int) -> np.ndarray | None:
        return None


class Constant(Adversary):
    kind = "constant"

    def __init__(self, grid: PredictionGrid, y):
        super().__init__(grid)
        self.y = grid.point(y)[: grid.free_dims]

    def _free_outcome(self, t, history):
        return self.y


class IidUniformCorners(Adversary):
    kind = "iid-corners"

    def __init__(self, grid: PredictionGrid, seed=0):
        super().__init__(grid)
        self.seed = seed

    def _free_outcome(self, t, history):
        # keyed by (seed, t) so the draw cannot depend on anything else
        rng = np.random.Generator(np.random.Philox(key=int(self.seed), counter=[t, 0, 0, 0]))
        return rng.integers(0, 2, size=self.grid.free_dims).astype(float)


class Periodic(Adversary):
    kind = "periodic"

    def __init__(self, grid: PredictionGrid, sequence: Sequence):
        super().__init__(grid)
        seq = np.asarray(sequence, dtype=float)
        self.sequence = seq.reshape(len(seq), -1)
        if len(seq) == 0:
            raise ValueError("periodic sequence is empty")

    def _free_outcome(self, t, history):
        return self.sequence[(t - 1) % len(self.sequence)]


class Scripted(Adversary):
    kind = "scripted"

    def __init__(self, grid: PredictionGrid, outcomes: Sequence, forced_predictions: Sequence | None = None):
        super().__init__(grid)
        out = np.asarray(outcomes, dtype=float)
        self.outcomes = out.reshape(len(out), -1)
        self.forced = None
        if forced_predictions is not None:
            fp = np.asarray(forced_predictions, dtype=float)
            self.forced = fp.reshape(len(fp), -1)
            if len(self.forced) != len(self.outcomes):
                raise ValueError("forced predictions and outcomes differ in length")

    def _free_outcome(self, t, history):
        if t > len(self.outcomes):
            raise ScriptExhausted(f"script has {len(self.outcomes)} rounds, asked for {t}")
        return self.outcomes[t - 1]

    def forced_prediction(self, t):
        if self.forced is None:
            return None
        if t > len(self.forced):
            raise ScriptExhausted(f"script has {len(self.forced)} rounds, asked for {t}")
        return self.grid.point(self.forced[t - 1])

    @classmethod
    def from_csv(cls, grid: PredictionGrid, path) -> "Scripted":
        """Columns ``y0..`` hold outcomes; optional ``pred0..`` columns force predictions."""
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        rows = [r for r in rows if r and any(c.strip() for c in r)]
        header = None
        try:
            [float(c) for c in rows[0]]
        except ValueError:
            header, rows = [c.strip() for c in rows[0]], rows[1:]
        data = np.array([[float(c) for c in r] for r in rows], dtype=float).reshape(len(rows), -1)
        if header is None:
            return cls(grid, data)
        ycols = [j for j, h in enumerate(header) if h.startswith("y")]
        pcols = [j for j, h in enumerate(header) if h.startswith("pred")]
        forced = data[:, pcols] if pcols else None
        return cls(grid, data[:, ycols], forced)


class GreedyBias(Adversary):
    """Stress heuristic: push every coordinate toward growing the existing biases.

    For coordinate ``i`` it sums the signs of the running expected biases over
    all events; positive bias (forecasts too high) is pushed by outcome 0,
    negative by outcome 1.  Zero-sum ties fall back on the single largest bias
    in that coordinate; if every bias is zero the outcome moves away from the
    previous round's mean forecast (outcome 1 on the first round).
    """

    kind = "greedy-bias"

    def __init__(self, grid: PredictionGrid, family: EventFamily):
        super().__init__(grid)
        self.family = family
        self._cum = np.zeros((len(family), grid.free_dims))
        self._seen = 0
        self._last_mean = None

    def _catch_up(self, history: HistoryView) -> None:
        free = self.grid.free_points
        while self._seen < len(history):
            r = history[self._seen]
            resid = r.forecast.weights[:, None] * (free - r.outcome[: self.grid.free_dims])
            self._cum += self.family.matrix @ resid
            self._last_mean = r.forecast.weights @ free
            self._seen += 1

    def _free_outcome(self, t, history):
        self._catch_up(history)
        y = np.ones(self.grid.free_dims)
        sgn = np.sign(np.round(self._cum, 12))
        for i in range(self.grid.free_dims):
            s = sgn[:, i].sum() if len(self.family) else 0.0
            if s == 0 and len(self.family):
                s = sgn[int(np.argmax(np.abs(self._cum[:, i]))), i]
            if s == 0 and self._last_mean is not None:
                s = 1.0 if self._last_mean[i] >= 0.5 else -1.0
            y[i] = 0.0 if s > 0 else 1.0
        return y


@dataclass
class LemmaScenario:
    delta: float
    forced_predictions: np.ndarray
    outcomes: np.ndarray
    u: UtilityFunction
    u_tilde: UtilityFunction

    def grid(self) -> PredictionGrid:
        """Lifted 1-d grid holding both forced predictions and both thresholds."""
        vals = sorted({0.0, 0.5 - self.delta, 0.5, 0.5 + self.delta, 1.0})
        return PredictionGrid(self.delta, (np.array(vals),), lifted=True)


def lemma_counterexample_scenario(delta: float, T: int) -> LemmaScenario:
    """Alternating predictions 0.5 -/+ delta against outcomes 1/0.

    ``u`` best-responds with a threshold at ``0.5 - delta`` and ``u_tilde`` at
    0.5, both breaking ties toward action 1; payoffs differ by at most
    ``2 delta / (1 + 2 delta)``.
    """
    if not 0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 0.5)")
    if T < 0 or T % 2:
        raise ValueError("T must be a nonnegative even integer")
    t = np.arange(1, T + 1)
    odd = t % 2 == 1
    preds = np.where(odd, 0.5 - delta, 0.5 + delta)[:, None]
    outs = np.where(odd, 1.0, 0.0)[:, None]
    s = 1.0 / (1.0 + 2.0 * delta)
    # u(a, y) = s (a (y + delta) + (1 - a)(1 - y - delta) + delta), lifted (y, 1)
    u = UtilityFunction([[-s, s], [s, 2 * delta * s]], id="u")
    u_tilde = UtilityFunction([[-1.0, 1.0], [1.0, 0.0]], id="u_tilde")
    return LemmaScenario(delta, preds, outs, u, u_tilde)


def make_adversary(spec: dict, grid: PredictionGrid, family: EventFamily | None = None,
                   seed: int = 0) -> Adversary:
    kind = spec.get("kind", "constant")
    if kind == "constant":
        return Constant(grid, spec.get("y", [1.0] * grid.free_dims))
    if kind in ("iid-corners", "iid_uniform_corners", "iid"):
        return IidUniformCorners(grid, int(spec.get("seed", seed)))
    if kind == "periodic":
        return Periodic(grid, spec["sequence"])
    if kind == "scripted":
        if "script_file" in spec:
            return Scripted.from_csv(grid, spec["script_file"])
        return Scripted(grid, spec["outcomes"], spec.get("forced_predictions"))
    if kind in ("greedy-bias", "greedy_bias", "greedy"):
        if family is None:
            raise ValueError("greedy-bias adversary needs the event family")
        return GreedyBias(grid, family)
    raise ValueError(f"unknown adversary kind {kind!r}")
