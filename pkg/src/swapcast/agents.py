"""Downstream agents: linear utilities, response models and swap regret."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .core import TOL, DimensionError, PredictionGrid, Transcript

TieRule = Literal["high", "low"]


class CapExceeded(RuntimeError):
    """A construction would exceed its configured size cap."""

    def __init__(self, message: str, size: int):
        super().__init__(message)
        self.size = size


@dataclass(frozen=True, eq=False)
class UtilityFunction:
    """Linear payoffs ``u(a, y) = <vectors[a], y>`` on the lifted space.

    The last coordinate of ``y`` is the lift coordinate pinned to 1, so the
    last column of ``vectors`` carries the affine constant of each action.
    """

    vectors: np.ndarray
    id: str = ""

    def __post_init__(self) -> None:
        v = np.array(self.vectors, dtype=float, ndmin=2)
        if v.ndim != 2 or v.shape[1] < 1 or v.shape[0] < 1:
            raise ValueError("vectors must have shape (actions, lifted_dim)")
        if not np.isfinite(v).all():
            raise ValueError("utility vectors must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def action_count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def lipschitz(self) -> float:
        # lift column is constant in y and does not contribute
        return float(np.abs(self.vectors[:, :-1]).sum(axis=1, initial=0.0).max())

    def payoffs(self, ys: np.ndarray) -> np.ndarray:
        """Payoff matrix ``(n, actions)`` for lifted points ``ys`` of shape ``(n, dim)``."""
        ys = np.atleast_2d(ys)
        if ys.shape[1] != self.dim:
            raise DimensionError(f"utility has dimension {self.dim}, points have {ys.shape[1]}")
        return ys @ self.vectors.T

    def check_range(self, grid: PredictionGrid) -> bool:
        pay = self.payoffs(grid.lifted_points)
        ok = bool(pay.min() >= -1e-9 and pay.max() <= 1 + 1e-9)
        if not ok:
            warnings.warn(f"utility {self.id or '?'} leaves [0,1] on the grid", stacklevel=2)
        return ok


@dataclass(frozen=True, eq=False)
class UtilityCover:
    delta: float
    k: int
    dim: int
    utilities: tuple[UtilityFunction, ...]

    def __len__(self) -> int:
        return len(self.utilities)

    def __iter__(self):
        return iter(self.utilities)

    def __getitem__(self, i):
        return self.utilities[i]

    @property
    def levels(self) -> np.ndarray:
        return delta_levels(self.delta)

    def index_of(self, u: UtilityFunction) -> int:
        """Position of ``u`` in a fully enumerated cover (mixed-radix over the levels)."""
        lv = self.levels
        n = lv.size
        flat = u.vectors.reshape(-1)
        if flat.size != self.k * self.dim:
            raise DimensionError("utility shape does not match the cover")
        digits = nearest_level(flat, lv)
        if np.abs(lv[digits] - flat).max() > 1e-9:
            raise ValueError("utility is not a cover element")
        idx = 0
        for dgt in digits:
            idx = idx * n + int(dgt)
        return idx


@dataclass(frozen=True)
class Exact:
    tie_rule: TieRule = "high"


@dataclass(frozen=True)
class Snapped:
    delta: float
    tie_rule: TieRule = "high"


@dataclass(frozen=True)
class Logistic:
    eta: float


@dataclass(frozen=True)
class AgentModel:
    utility: UtilityFunction
    mode: Exact | Snapped | Logistic = field(default_factory=Exact)
    id: str = ""

    def __post_init__(self) -> None:
        if isinstance(self.mode, Logistic) and not self.mode.eta > 0:
            raise ValueError("logistic eta must be positive")
        if isinstance(self.mode, Snapped) and not 0 < self.mode.delta <= 1:
            raise ValueError("snap delta must lie in (0, 1]")


@dataclass
class SwapRegretResult:
    value: float
    best_swap: dict[int, int]
    per_action_terms: np.ndarray
    realized: float | None = None


def utility_eval(u: UtilityFunction, a: int, y) -> float:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != u.dim:
        raise DimensionError(f"utility has dimension {u.dim}, point has {y.size}")
    if not 0 <= a < u.action_count:
        raise IndexError(f"action {a} out of range for {u.action_count} actions")
    return float(np.dot(u.vectors[a], y))


def _argmax_ties(pay: np.ndarray, tie_rule: TieRule) -> np.ndarray:
    top = pay.max(axis=1, keepdims=True)
    hit = pay >= top - TOL
    if tie_rule == "high":
        return pay.shape[1] - 1 - np.argmax(hit[:, ::-1], axis=1)
    if tie_rule == "low":
        return np.argmax(hit, axis=1)
    raise ValueError(f"unknown tie rule {tie_rule!r}")


def best_response(u: UtilityFunction, y, tie_rule: TieRule = "high") -> int:
    y = np.asarray(y, dtype=float).reshape(1, -1)
    return int(_argmax_ties(u.payoffs(y), tie_rule)[0])


def best_response_table(u: UtilityFunction, ys: np.ndarray, tie_rule: TieRule = "high") -> np.ndarray:
    """Best response for each row of ``ys``."""
    return _argmax_ties(u.payoffs(ys), tie_rule)


def softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logistic_response(u: UtilityFunction, y, eta: float) -> np.ndarray:
    if not eta > 0:
        raise ValueError("eta must be positive")
    y = np.asarray(y, dtype=float).reshape(1, -1)
    return softmax_rows(eta * u.payoffs(y))[0]


def logistic_table(u: UtilityFunction, ys: np.ndarray, eta: float) -> np.ndarray:
    if not eta > 0:
        raise ValueError("eta must be positive")
    return softmax_rows(eta * u.payoffs(ys))


def delta_levels(delta: float) -> np.ndarray:
    """Multiples of ``delta`` in [0, 1], always including 1."""
    n = int(math.floor(1.0 / delta + 1e-9))
    lv = np.arange(n + 1) * delta
    if lv[-1] < 1 - 1e-9:
        lv = np.append(lv, 1.0)
    return np.minimum(lv, 1.0)


def build_utility_cover(k: int, lifted_dim: int, delta: float, cap: int = 10**7) -> UtilityCover:
    """Every k-tuple of vectors with entries on the delta-grid, in mixed-radix order."""
    if k < 1 or lifted_dim < 1:
        raise ValueError("k and lifted_dim must be positive")
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    lv = delta_levels(delta)
    size = lv.size ** (k * lifted_dim)
    if size > cap:
        raise CapExceeded(f"cover would hold {size} utilities (cap {cap})", size)
    utils = []
    for i, digits in enumerate(itertools.product(range(lv.size), repeat=k * lifted_dim)):
        v = lv[list(digits)].reshape(k, lifted_dim)
        utils.append(UtilityFunction(v, id=f"c{i}"))
    return UtilityCover(float(delta), int(k), int(lifted_dim), tuple(utils))


def nearest_level(values: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Index of the nearest level for each value; ties go to the higher level."""
    d = np.abs(np.asarray(values, dtype=float)[..., None] - levels)
    hit = d <= d.min(axis=-1, keepdims=True) + TOL
    return levels.size - 1 - np.argmax(hit[..., ::-1], axis=-1)


def snap_vectors(vectors: np.ndarray, delta: float) -> np.ndarray:
    lv = delta_levels(delta)
    return lv[nearest_level(vectors, lv)]


def snap_utility(u: UtilityFunction, cover: UtilityCover | float) -> UtilityFunction:
    """Nearest cover element, rounding each entry to the delta-grid (ties round up)."""
    if isinstance(cover, UtilityCover):
        if u.dim != cover.dim or u.action_count > cover.k:
            raise DimensionError("utility does not match the cover parameters")
        delta = cover.delta
    else:
        delta = float(cover)
    v = snap_vectors(np.clip(u.vectors, 0.0, 1.0), delta)
    sid = f"snap({u.id})" if u.id else "snap"
    if isinstance(cover, UtilityCover) and u.action_count == cover.k:
        sid = cover[cover.index_of(UtilityFunction(v))].id
    return UtilityFunction(v, id=sid)


def respond(model: AgentModel, y_hat, cover: UtilityCover | None = None) -> np.ndarray:
    """Action distribution of ``model`` at a single prediction."""
    return response_table(model, np.asarray(y_hat, dtype=float).reshape(1, -1), cover)[0]


def response_table(model: AgentModel, ys: np.ndarray, cover: UtilityCover | None = None) -> np.ndarray:
    """Action distributions ``(n, actions)`` for each row of ``ys``."""
    u, mode = model.utility, model.mode
    if isinstance(mode, Logistic):
        return logistic_table(u, ys, mode.eta)
    if isinstance(mode, Snapped):
        if cover is None:
            raise ValueError("snapped agents need a utility cover")
        u = snap_utility(u, cover)
    br = best_response_table(u, ys, mode.tie_rule)
    out = np.zeros((ys.shape[0], model.utility.action_count))
    out[np.arange(ys.shape[0]), br] = 1.0
    return out


def _play_and_payoffs(transcript: Transcript, model: AgentModel, cover, realized: bool):
    if not transcript.complete:
        raise ValueError("transcript is incomplete")
    grid = transcript.grid
    resp = response_table(model, grid.lifted_points, cover)
    if realized:
        q = resp[transcript.realized_indices()] if len(transcript) else np.zeros((0, resp.shape[1]))
    else:
        q = transcript.forecast_matrix() @ resp
    ys = transcript.outcome_matrix()
    if not grid.lifted and len(ys):
        ys = np.hstack([ys, np.ones((ys.shape[0], 1))])
    pay = model.utility.payoffs(ys) if len(ys) else np.zeros((0, model.utility.action_count))
    return q, pay


def swap_gain_matrix(q: np.ndarray, pay: np.ndarray) -> np.ndarray:
    """``G[a, b] = sum_t q[t, a] (pay[t, b] - pay[t, a])`` with exactly rounded sums."""
    k = q.shape[1]
    g = np.zeros((k, k))
    for a in range(k):
        for b in range(k):
            if a != b:
                g[a, b] = math.fsum(q[:, a] * (pay[:, b] - pay[:, a]))
    return g


def _swap_value(q: np.ndarray, pay: np.ndarray, phi: Sequence[int]) -> float:
    terms = [q[:, a] * (pay[:, phi[a]] - pay[:, a]) for a in range(q.shape[1]) if phi[a] != a]
    if not terms:
        return 0.0
    return math.fsum(np.concatenate(terms))


def regret_from_play(q: np.ndarray, pay: np.ndarray) -> SwapRegretResult:
    T, k = q.shape
    if T == 0:
        return SwapRegretResult(0.0, {a: a for a in range(k)}, np.zeros(k))
    g = swap_gain_matrix(q, pay)
    phi = {}
    for a in range(k):
        b = int(np.argmax(g[a]))
        phi[a] = b if g[a, b] > 0 else a
    terms = np.array([g[a, phi[a]] for a in range(k)]) / T
    value = _swap_value(q, pay, [phi[a] for a in range(k)]) / T
    return SwapRegretResult(value, phi, terms)


def expected_swap_regret(transcript: Transcript, model: AgentModel,
                         cover: UtilityCover | None = None) -> SwapRegretResult:
    """Swap regret with actions averaged over each round's forecast distribution.

    The maximizing swap is found per source action independently; the realized
    variant (agent reacting to the sampled forecast) is attached as ``realized``.
    """
    q, pay = _play_and_payoffs(transcript, model, cover, realized=False)
    res = regret_from_play(q, pay)
    qr, _ = _play_and_payoffs(transcript, model, cover, realized=True)
    res.realized = regret_from_play(qr, pay).value
    return res


def realized_swap_regret(transcript: Transcript, model: AgentModel,
                         cover: UtilityCover | None = None) -> SwapRegretResult:
    q, pay = _play_and_payoffs(transcript, model, cover, realized=True)
    return regret_from_play(q, pay)


def fixed_swap_regret(transcript: Transcript, model: AgentModel, phi: Sequence[int] | dict,
                      cover: UtilityCover | None = None) -> float:
    """Expected regret against one given map ``phi`` (identity gives exactly 0)."""
    q, pay = _play_and_payoffs(transcript, model, cover, realized=False)
    k = q.shape[1]
    phi = [int(phi[a]) for a in range(k)]
    if any(not 0 <= b < k for b in phi):
        raise ValueError("phi must map actions to actions")
    return _swap_value(q, pay, phi) / len(q) if len(q) else 0.0


def brute_force_swap_regret(transcript: Transcript, model: AgentModel,
                            cover: UtilityCover | None = None) -> SwapRegretResult:
    """Enumerate every map phi over the action set."""
    k = model.utility.action_count
    if k > 5 or len(transcript) > 1000:
        raise ValueError("brute force limited to 5 actions and 1000 rounds")
    q, pay = _play_and_payoffs(transcript, model, cover, realized=False)
    return brute_force_from_play(q, pay)


def brute_force_from_play(q: np.ndarray, pay: np.ndarray) -> SwapRegretResult:
    T, k = q.shape
    best, best_phi = -math.inf, tuple(range(k))
    for phi in itertools.product(range(k), repeat=k):
        v = _swap_value(q, pay, phi)
        if v > best:
            best, best_phi = v, phi
    T = max(T, 1)
    terms = np.array([math.fsum(q[:, a] * (pay[:, best_phi[a]] - pay[:, a])) for a in range(k)]) / T
    return SwapRegretResult(best / T, dict(enumerate(best_phi)), terms)


def random_utility(rng: np.random.Generator, actions: int, lifted_dim: int, uid: str = "") -> UtilityFunction:
    """Uniform entries in [0,1], each row scaled so payoffs stay in [0,1] on the box."""
    v = rng.random((actions, lifted_dim))
    v /= np.maximum(1.0, v.sum(axis=1, keepdims=True))
    return UtilityFunction(v, id=uid)
