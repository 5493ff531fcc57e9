"""Experiment configuration and the derived-parameter rules."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

GRID_CAP = 10_000
EVENT_CAP = 5_000_000
HORIZON_CAP = 1_000_000

FAMILY_KINDS = ("intervals", "polygons", "br-cover", "logistic-cover", "none")
AGENT_MODES = ("exact", "snapped", "logistic")


class ConfigError(ValueError):
    pass


def auto_epsilon(T: int, dim: int) -> float:
    """Net spacing that balances discretization against the event count."""
    if T <= 1:
        return 1.0
    if dim == 1:
        return min(1.0, 1.0 / math.sqrt(T))
    if dim == 2:
        return min(1.0, T ** (-3.0 / 8.0))
    raise ConfigError("automatic epsilon is only defined for one or two free coordinates")


def auto_snap_delta(T: int, dim: int) -> float:
    return min(1.0, 1.0 / ((dim + 1) * math.sqrt(max(T, 1))))


def auto_logistic_eta(T: int, k: int) -> float:
    return (math.log(k) + 1.0) * math.sqrt(max(T, 1))


def auto_bucket_tau(T: int, k: int, lipschitz: float) -> float:
    return min(1.0, 1.0 / (k * max(lipschitz, 1e-12) * max(T, 1) ** (1.0 / 3.0)))


def auto_logistic_delta(T: int, k: int, dim: int, lo: float = 1e-3, hi: float = 0.5) -> tuple[float, bool]:
    """``ln(1/(k sqrt T) + 1) / ((d+1) sqrt T)`` clamped to ``[lo, hi]``; also says whether it clamped."""
    rt = math.sqrt(max(T, 1))
    raw = math.log(1.0 / (k * rt) + 1.0) / ((dim + 1) * rt)
    val = min(max(raw, lo), hi)
    return val, val != raw


@dataclass
class ExperimentConfig:
    """One experiment.  ``dim`` counts free coordinates; ``lifted`` appends the constant coordinate.

    ``epsilon`` and the family parameters ``delta``, ``eta``, ``tau`` accept
    ``"auto"``.  ``grid_shape`` replaces the epsilon-net with an evenly spaced
    grid of the given shape.
    """

    horizon: int
    dim: int = 1
    lifted: bool = True
    epsilon: float | str = "auto"
    grid_shape: list[int] | None = None
    family: dict = field(default_factory=lambda: {"kind": "intervals"})
    adversary: dict = field(default_factory=lambda: {"kind": "constant"})
    agents: list[dict] = field(default_factory=list)
    seed: int = 0
    replays: int = 1
    gap_tol: float | None = None
    solver: str = "lp"
    learning_rate: float | None = None
    strict: bool = False
    output_dir: str | None = None
    caps: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.validate()

    @property
    def grid_cap(self) -> int:
        return int(self.caps.get("grid", GRID_CAP))

    @property
    def event_cap(self) -> int:
        return int(self.caps.get("events", EVENT_CAP))

    @property
    def horizon_cap(self) -> int:
        return int(self.caps.get("horizon", HORIZON_CAP))

    def validate(self) -> None:
        if not isinstance(self.horizon, int) or isinstance(self.horizon, bool) or self.horizon < 0:
            raise ConfigError(f"horizon must be a nonnegative integer, got {self.horizon!r}")
        if not isinstance(self.dim, int) or self.dim < 1:
            raise ConfigError(f"dim must be a positive integer, got {self.dim!r}")
        if self.epsilon != "auto":
            if not isinstance(self.epsilon, (int, float)) or not 0 < self.epsilon <= 1:
                raise ConfigError(f"epsilon must be 'auto' or lie in (0, 1], got {self.epsilon!r}")
        if self.grid_shape is not None:
            if len(self.grid_shape) != self.dim or any(int(n) < 1 for n in self.grid_shape):
                raise ConfigError("grid_shape needs one positive size per free coordinate")
        kind = self.family.get("kind")
        if kind not in FAMILY_KINDS:
            raise ConfigError(f"unknown family kind {kind!r}")
        for a in self.agents:
            if a.get("mode", "exact") not in AGENT_MODES:
                raise ConfigError(f"unknown agent mode {a.get('mode')!r}")
            if "vectors" not in a:
                raise ConfigError(f"agent {a.get('id', '?')} has no vectors")
        if self.replays < 1:
            raise ConfigError("replays must be at least 1")
        if self.gap_tol is not None and not self.gap_tol > 0:
            raise ConfigError("gap_tol must be positive")
        if self.solver not in ("lp", "dynamics"):
            raise ConfigError(f"unknown solver {self.solver!r}")

    def resolved_epsilon(self) -> float:
        if self.grid_shape is not None:
            return max((1.0 / (n - 1) for n in self.grid_shape if n > 1), default=1.0)
        if self.epsilon == "auto":
            return auto_epsilon(self.horizon, self.dim)
        return float(self.epsilon)

    def with_horizon(self, T: int) -> "ExperimentConfig":
        d = self.to_dict()
        d["horizon"] = int(T)
        return ExperimentConfig.from_dict(d)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        d = self.to_dict()
        d["seed"] = int(seed)
        return ExperimentConfig.from_dict(d)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "horizon" not in data:
            raise ConfigError("config needs a horizon")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)
