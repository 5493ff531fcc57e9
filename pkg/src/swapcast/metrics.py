"""Conditional bias, calibration error and report rows over finished transcripts."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .agents import UtilityFunction, logistic_table
from .core import DimensionError, Transcript
from .events import Bucket, BucketScheme, EventFamily
from .events.family import BestResponse, Interval, Polygon


class BoundViolation(AssertionError):
    pass


@dataclass
class BiasReport:
    """Per-event bias of a transcript.

    ``sums`` are the unnormalized residual sums, ``bias_vector = sums / T`` and
    ``bias_inf`` its l-infinity norm.  ``per_occurrence`` divides by ``n_T``
    instead (the average residual over the rounds where the event fires; zero
    for events that never fire).  ``realized_*`` use the sampled forecasts.
    """

    horizon: int
    n_T: np.ndarray
    sums: np.ndarray
    realized_n_T: np.ndarray
    realized_sums: np.ndarray

    def _norm(self, sums):
        if self.horizon == 0:
            return np.zeros(sums.shape[0])
        return np.abs(sums).max(axis=1, initial=0.0) / self.horizon

    @property
    def bias_vector(self) -> np.ndarray:
        return self.sums / max(self.horizon, 1)

    @property
    def bias_inf(self) -> np.ndarray:
        return self._norm(self.sums)

    @property
    def realized_bias_inf(self) -> np.ndarray:
        return self._norm(self.realized_sums)

    @property
    def per_occurrence(self) -> np.ndarray:
        num = np.abs(self.sums).max(axis=1, initial=0.0)
        out = np.zeros_like(num)
        np.divide(num, self.n_T, out=out, where=self.n_T > 0)
        return out

    @property
    def max_bias(self) -> float:
        b = self.bias_inf
        return float(b.max()) if b.size else 0.0

    @property
    def max_realized_bias(self) -> float:
        b = self.realized_bias_inf
        return float(b.max()) if b.size else 0.0


def _check_grid(transcript: Transcript, family: EventFamily) -> None:
    g, h = transcript.grid, family.grid
    if g is h:
        return
    if g.points.shape != h.points.shape or not np.array_equal(g.points, h.points):
        raise DimensionError("family and transcript use different grids")


def _bias_sums(weights: np.ndarray, transcript: Transcript, family: EventFamily):
    """``n_T`` and residual sums for per-round point weights ``weights`` (T, n)."""
    grid = transcript.grid
    d = grid.free_dims
    M = family.matrix
    if weights.shape[0] == 0:
        return np.zeros(len(family)), np.zeros((len(family), d))
    ys = transcript.outcome_matrix()[:, :d]
    fire = weights @ M.T  # (T, events): probability that E fires in round t
    n_T = fire.sum(axis=0)
    pred = M @ (weights.sum(axis=0)[:, None] * grid.free_points)
    sums = pred - fire.T @ ys
    return n_T, sums


def conditional_bias(transcript: Transcript, family: EventFamily) -> BiasReport:
    """Expected bias (summing over each forecast's support) and its realized analogue."""
    if not transcript.complete:
        raise ValueError("transcript is incomplete")
    _check_grid(transcript, family)
    F = transcript.forecast_matrix()
    n_T, sums = _bias_sums(F, transcript, family)
    R = np.zeros_like(F)
    if len(transcript):
        R[np.arange(len(transcript)), transcript.realized_indices()] = 1.0
    rn, rs = _bias_sums(R, transcript, family)
    return BiasReport(len(transcript), n_T, sums, rn, rs)


def bias_bound(report: BiasReport, n_events: int, dims: int, epsilon: float, const: float = 5.0) -> np.ndarray:
    """Per-event threshold ``c (ln(d|E|T) + sqrt(ln(d|E|T) n_T)) / T + eps``."""
    T = report.horizon
    if T == 0:
        return np.full(report.n_T.shape, epsilon)
    lg = math.log(max(dims * n_events * T, 2))
    return const * (lg + np.sqrt(lg * report.n_T)) / T + epsilon


# --- calibration ---------------------------------------------------------------

def calibration_groups(transcript: Transcript):
    """``(value, count, mean outcome)`` for each realized predicted value."""
    grid = transcript.grid
    if grid.free_dims != 1:
        raise DimensionError("calibration error is defined for one free coordinate")
    if len(transcript) == 0:
        return []
    preds = grid.free_points[transcript.realized_indices(), 0]
    ys = transcript.outcome_matrix()[:, 0]
    out = []
    for v in np.unique(preds):
        sel = ys[preds == v]
        out.append((float(v), int(sel.size), math.fsum(sel) / sel.size))
    return out


def l1_calibration(transcript: Transcript) -> float:
    return math.fsum(n * abs(v - m) for v, n, m in calibration_groups(transcript))


def l2_calibration(transcript: Transcript) -> float:
    return math.fsum(n * (v - m) ** 2 for v, n, m in calibration_groups(transcript))


# --- probability-weighted bucket bias -----------------------------------------

@dataclass
class WeightedBucketResult:
    vector: np.ndarray
    norm: float
    alpha_max: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.norm <= self.bound + 1e-12


def weighted_bucket_bias(transcript: Transcript, family: EventFamily, u: UtilityFunction, a: int,
                         eta: float, scheme: BucketScheme, check: bool = True) -> WeightedBucketResult:
    """``(1/T) sum_t E[q_a(u, yhat) (yhat - y_t)]`` with its bucket-bias bound.

    ``alpha_max`` is the largest bias over the family's bucket events of
    ``(u, a)``; every bucket must be present or provably empty on the grid.
    The bound is ``floor(1/tau) alpha_max + w`` with ``w`` the widest bucket.
    """
    if not transcript.complete:
        raise ValueError("transcript is incomplete")
    _check_grid(transcript, family)
    grid = transcript.grid
    T = len(transcript)
    qa = logistic_table(u, grid.lifted_points, eta)[:, a]
    buckets = scheme.index(qa)
    rep = conditional_bias(transcript, family)
    alpha = 0.0
    for i in range(scheme.count):
        j = family.find(Bucket(u.id, a, i))
        if j is None:
            if np.any(buckets == i):
                raise ValueError(f"family lacks bucket {i} of utility {u.id!r}, action {a}")
            continue
        if not np.array_equal(family.membership[j], buckets == i):
            raise ValueError("family was built with different (eta, tau) or utility")
        alpha = max(alpha, float(rep.bias_inf[j]))
    if T == 0:
        vec = np.zeros(grid.free_dims)
    else:
        F = transcript.forecast_matrix()
        ys = transcript.outcome_matrix()[:, : grid.free_dims]
        w = F * qa[None, :]
        vec = (w.sum(axis=0) @ grid.free_points - w.sum(axis=1) @ ys) / T
    norm = float(np.abs(vec).max(initial=0.0))
    bound = scheme.count * alpha + scheme.max_width
    res = WeightedBucketResult(vec, norm, alpha, bound)
    if check and not res.holds:
        raise BoundViolation(f"weighted bucket bias {norm:.6g} exceeds bound {bound:.6g}")
    return res


# --- report rows ----------------------------------------------------------------

def label_str(label) -> str:
    if isinstance(label, Interval):
        return f"interval[{label.lo:.10g},{label.hi:.10g}]"
    if isinstance(label, Polygon):
        return "polygon(" + ";".join(f"{x},{y}" for x, y in label.vertices) + ")"
    if isinstance(label, BestResponse):
        return f"br({label.utility},{label.action})"
    if isinstance(label, Bucket):
        return f"bucket({label.utility},{label.action},{label.bucket})"
    return str(label)


def bias_rows(report: BiasReport, family: EventFamily) -> list[dict]:
    exp_inf, real_inf = report.bias_inf, report.realized_bias_inf
    rows = []
    for j in range(len(family)):
        rows.append({
            "event_label": label_str(family.labels[j][0]),
            "n_T": float(report.n_T[j]),
            "bias_inf_expected": float(exp_inf[j]),
            "bias_inf_realized": float(real_inf[j]),
            "bias_per_occurrence": float(report.per_occurrence[j]),
        })
    return rows
