"""Forecasts unbiased conditional on an event family.

Each round an exponential-weights learner over signed (event, coordinate)
pairs picks the combination of biases it most wants to punish; the forecast is
the distribution over grid points minimizing that combination against the
worst outcome in the box.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .core import DimensionError, ForecastDistribution, PredictionGrid
from .events import EventFamily

log = logging.getLogger(__name__)


class SolverFailure(RuntimeError):
    def __init__(self, message: str, p: np.ndarray, gap: float):
        super().__init__(message)
        self.p = p
        self.gap = gap


@dataclass
class ExpertWeights:
    """Weights over (event, coordinate, sign); ``weights[e, i, 0]`` is sign +1."""

    weights: np.ndarray

    @property
    def net(self) -> np.ndarray:
        """``q(E, i, +) - q(E, i, -)``, shape ``(events, coords)``."""
        return self.weights[..., 0] - self.weights[..., 1]


@dataclass
class ForecasterState:
    grid: PredictionGrid
    family: EventFamily
    learning_rate: float
    rng: np.random.Generator
    gap_tol: float
    round: int = 0
    cum_bias: np.ndarray = field(default=None)
    solver: str = "lp"
    strict: bool = False
    failures: int = 0

    def __post_init__(self) -> None:
        if self.family.grid is not self.grid and self.family.grid.size != self.grid.size:
            raise DimensionError("family was built on a different grid")
        if self.cum_bias is None:
            self.cum_bias = np.zeros((len(self.family), self.grid.free_dims))


def default_learning_rate(n_events: int, coords: int, horizon: int) -> float:
    n = max(2 * coords * n_events, 2)
    return math.sqrt(8.0 * math.log(n) / max(horizon, 1))


def init_state(grid: PredictionGrid, family: EventFamily, horizon: int, seed=0,
               learning_rate: float | None = None, gap_tol: float | None = None,
               solver: str = "lp", strict: bool = False) -> ForecasterState:
    if learning_rate is None:
        learning_rate = default_learning_rate(len(family), grid.free_dims, horizon)
    if gap_tol is None:
        gap_tol = grid.epsilon / 4
    rng = np.random.Generator(np.random.Philox(seed))
    return ForecasterState(grid, family, float(learning_rate), rng, float(gap_tol),
                           solver=solver, strict=strict)


def compute_expert_weights(state: ForecasterState) -> ExpertWeights:
    z = 0.5 * state.learning_rate * state.cum_bias
    logits = np.stack([z, -z], axis=-1)
    if logits.size == 0:
        return ExpertWeights(logits)
    logits -= logits.max()
    w = np.exp(logits)
    w /= w.sum()
    return ExpertWeights(w)


def minmax_coefficients(q: ExpertWeights, grid: PredictionGrid, family: EventFamily):
    """``A[n]`` and ``B[i, n]`` of the per-round objective.

    ``f(p) = p.A + sum_i max(0, p.B[i])``, after maximizing out the outcome
    coordinate by coordinate.
    """
    s = family.matrix.T @ q.net  # (points, coords)
    A = np.einsum("ni,ni->n", s, grid.free_points)
    B = -s.T
    return A, B


def minmax_objective(p: np.ndarray, A: np.ndarray, B: np.ndarray) -> float:
    return float(p @ A + np.maximum(0.0, B @ p).sum())


def duality_gap(p: np.ndarray, lam: np.ndarray, A: np.ndarray, B: np.ndarray) -> tuple[float, float]:
    """Objective at ``p`` and its distance above the dual bound from ``lam``."""
    upper = minmax_objective(p, A, B)
    lower = float((A + lam @ B).min())
    return upper, max(upper - lower, 0.0)


def _solve_lp(A, B):
    n, d = A.size, B.shape[0]
    c = np.concatenate([A, np.ones(d)])
    a_ub = np.hstack([B, -np.eye(d)])
    a_eq = np.concatenate([np.ones(n), np.zeros(d)])[None, :]
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(d), A_eq=a_eq, b_eq=[1.0],
                  bounds=[(0, None)] * (n + d), method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP solve failed: {res.message}")
    p = np.clip(res.x[:n], 0.0, None)
    p /= p.sum()
    lam = np.clip(-np.asarray(res.ineqlin.marginals), 0.0, 1.0)
    return p, lam


def _solve_dynamics(A, B, gap_tol, max_iter=None, check_every=16):
    """Exponential weights for the point player against best-responding ``lam``."""
    n, d = A.size, B.shape[0]
    if max_iter is None:
        max_iter = 10 * math.ceil(1.0 / gap_tol**2)
    scale = max(np.abs(A).max() + np.abs(B).sum(axis=0).max(), 1e-12)
    step = math.sqrt(8.0 * math.log(max(n, 2)) / max_iter) / scale
    logw = np.zeros(n)
    p_sum = np.zeros(n)
    lam_sum = np.zeros(d)
    best = (np.full(n, 1.0 / n), np.zeros(d), math.inf)
    for k in range(1, max_iter + 1):
        w = np.exp(logw - logw.max())
        p = w / w.sum()
        lam = (B @ p > 0).astype(float)
        p_sum += p
        lam_sum += lam
        logw -= step * (A + lam @ B)
        if k % check_every == 0 or k == max_iter:
            pb, lb = p_sum / k, lam_sum / k
            _, gap = duality_gap(pb, lb, A, B)
            if gap < best[2]:
                best = (pb.copy(), lb.copy(), gap)
            if gap <= gap_tol:
                break
    return best[0], best[1]


def solve_round_minmax(q: ExpertWeights, grid: PredictionGrid, family: EventFamily,
                       gap_tol: float, solver: str = "lp"):
    """Minimize the ``q``-weighted bias against the worst outcome.

    Returns ``(p, value, gap)``; ``gap`` is certified from a dual point.  Raises
    :class:`SolverFailure` when the certified gap exceeds ``gap_tol``.
    """
    if not gap_tol > 0:
        raise ValueError("gap_tol must be positive")
    A, B = minmax_coefficients(q, grid, family)
    if solver == "lp":
        p, lam = _solve_lp(A, B)
    elif solver == "dynamics":
        p, lam = _solve_dynamics(A, B, gap_tol)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    value, gap = duality_gap(p, lam, A, B)
    dist = ForecastDistribution(p)
    if gap > gap_tol:
        raise SolverFailure(f"duality gap {gap:.3g} exceeds {gap_tol:.3g}", p, gap)
    return dist, value, gap


def sample_index(rng: np.random.Generator, p: np.ndarray) -> int:
    """Inverse-CDF draw over the canonical grid order."""
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    i = int(np.searchsorted(cdf, u, side="right"))
    i = min(i, p.size - 1)
    if p[i] <= 0:
        sup = np.flatnonzero(p > 0)
        i = int(sup[np.searchsorted(sup, i) - 1]) if np.any(sup < i) else int(sup[0])
    return i


def forecast_round(state: ForecasterState) -> tuple[ForecastDistribution, int, dict]:
    """Forecast for round ``state.round + 1`` and a sample from it."""
    q = compute_expert_weights(state)
    try:
        p, value, gap = solve_round_minmax(q, state.grid, state.family, state.gap_tol, state.solver)
    except SolverFailure as exc:
        if state.strict:
            raise
        state.failures += 1
        log.warning("round %d: %s", state.round + 1, exc)
        p = ForecastDistribution(exc.p)
        A, B = minmax_coefficients(q, state.grid, state.family)
        value, gap = minmax_objective(exc.p, A, B), exc.gap
    idx = sample_index(state.rng, p.weights)
    diag = {"value": value, "gap": gap, "entropy": p.entropy()}
    return p, idx, diag


def update_state(state: ForecasterState, p: ForecastDistribution, y) -> ForecasterState:
    """Add the expected residual of ``p`` against outcome ``y`` to every event."""
    y = state.grid.check_point(y)
    free = state.grid.free_dims
    resid = p.weights[:, None] * (state.grid.free_points - y[:free])
    state.cum_bias += state.family.matrix @ resid
    state.round += 1
    return state
