"""The run loop, rate studies and the counterexample one-shot."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..adversaries import Adversary, Scripted, lemma_counterexample_scenario, make_adversary
from ..agents import (
    AgentModel,
    CapExceeded,
    Exact,
    Logistic,
    Snapped,
    UtilityCover,
    UtilityFunction,
    build_utility_cover,
    delta_levels,
    expected_swap_regret,
    random_utility,
)
from ..core import ForecastDistribution, PredictionGrid, Transcript, build_epsilon_net, commit_outcome
from ..events import (
    BestResponse,
    BucketScheme,
    EventFamily,
    best_response_events,
    convex_polygon_events_2d,
    intervals_1d,
    logistic_bucket_events,
    make_family,
)
from ..forecaster import forecast_round, init_state, update_state
from ..metrics import BiasReport, bias_rows, conditional_bias, l1_calibration, l2_calibration
from .config import (
    ConfigError,
    ExperimentConfig,
    auto_bucket_tau,
    auto_logistic_delta,
    auto_logistic_eta,
    auto_snap_delta,
)

log = logging.getLogger(__name__)


@dataclass
class Setup:
    grid: PredictionGrid
    family: EventFamily
    adversary: Adversary
    agents: list[AgentModel] = field(default_factory=list)
    agent_covers: dict = field(default_factory=dict)
    cover: UtilityCover | None = None
    derived: dict = field(default_factory=dict)
    labels: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    config: dict
    derived: dict
    transcript: Transcript
    family: EventFamily
    bias: BiasReport
    agent_results: dict
    agent_meta: list
    calibration: dict | None
    timing: dict
    extra: dict = field(default_factory=dict)
    setup: Setup | None = field(default=None, repr=False)

    @property
    def max_swap_regret(self) -> float:
        return max((r.value for r in self.agent_results.values()), default=0.0)

    def solver_summary(self) -> dict:
        diag = [r.diagnostics for r in self.transcript if "gap" in r.diagnostics]
        return {
            "rounds_solved": len(diag),
            "max_gap": max((d["gap"] for d in diag), default=0.0),
            "max_value": max((d["value"] for d in diag), default=0.0),
            "failures": int(self.derived.get("solver_failures", 0)),
        }

    def to_dict(self) -> dict:
        """Everything except wall-clock timing, so reruns serialize byte-identically."""
        agents = []
        for meta in self.agent_meta:
            res = self.agent_results[meta["id"]]
            agents.append(dict(meta, value=res.value, realized=res.realized,
                               best_swap=[res.best_swap[a] for a in range(len(res.best_swap))],
                               per_action_terms=[float(x) for x in res.per_action_terms]))
        return {
            "config": self.config,
            "derived": self.derived,
            "family": self.family.summary(),
            "transcript_hash": self.transcript.digest(),
            "bias": {
                "max_expected": self.bias.max_bias,
                "max_realized": self.bias.max_realized_bias,
                "rows": bias_rows(self.bias, self.family),
            },
            "calibration": self.calibration,
            "agents": agents,
            "solver": self.solver_summary(),
            "rounds": self.transcript.diagnostics(),
            **self.extra,
        }


# --- setup -----------------------------------------------------------------------

def _seeds(master: int) -> dict:
    ss = np.random.SeedSequence(int(master))
    f, a = ss.spawn(2)
    return {"forecaster": f, "adversary": int(a.generate_state(1, np.uint64)[0] >> np.uint64(1))}


def build_grid(config: ExperimentConfig) -> PredictionGrid:
    eps = config.resolved_epsilon()
    if config.grid_shape is not None:
        size = math.prod(int(n) for n in config.grid_shape)
    else:
        n = round(1.0 / eps)
        if abs(n * eps - 1.0) > 1e-9:
            n = math.ceil(1.0 / eps)
        size = (n + 1) ** config.dim
    if size > config.grid_cap:
        raise CapExceeded(f"grid would hold {size} points (cap {config.grid_cap})", size)
    if config.grid_shape is not None:
        return PredictionGrid.from_shape([int(n) for n in config.grid_shape], config.lifted)
    return build_epsilon_net(config.dim + int(config.lifted), eps, config.lifted)


def _cover(spec: dict, k: int, lifted_dim: int, delta: float, cap: int) -> UtilityCover:
    size = delta_levels(delta).size ** (k * lifted_dim)
    if size * k > cap:
        raise CapExceeded(f"cover events would number {size * k} (cap {cap})", size * k)
    return build_utility_cover(k, lifted_dim, delta, cap=int(spec.get("cover_cap", 10**7)))


def _explicit_utilities(spec: dict) -> list[UtilityFunction]:
    return [UtilityFunction(u["vectors"], id=str(u.get("id", f"u{i}"))) for i, u in enumerate(spec["utilities"])]


def build_family(config: ExperimentConfig, grid: PredictionGrid) -> tuple[EventFamily, UtilityCover | None, dict]:
    spec = config.family
    kind = spec["kind"]
    T, d = config.horizon, config.dim
    derived: dict = {}
    cover = None
    cap = config.event_cap
    if kind == "intervals":
        n = grid.size * (grid.size + 1) // 2
        if n > cap:
            raise CapExceeded(f"interval family would hold {n} events (cap {cap})", n)
        fam = intervals_1d(grid)
    elif kind == "polygons":
        fam = convex_polygon_events_2d(grid, cap=min(int(spec.get("cap", cap)), cap))
    elif kind == "br-cover":
        if "utilities" in spec:
            fam = best_response_events(_explicit_utilities(spec), grid, spec.get("tie_rule", "high"))
        else:
            k = int(spec.get("k", 2))
            delta = spec.get("delta", "auto")
            delta = auto_snap_delta(T, d) if delta == "auto" else float(delta)
            cover = _cover(spec, k, grid.dim + int(not grid.lifted), delta, cap)
            fam = best_response_events(cover, grid, spec.get("tie_rule", "high"))
            derived.update(cover_delta=delta, cover_size=len(cover), k=k)
    elif kind == "logistic-cover":
        k = int(spec.get("k", 2))
        delta = spec.get("delta", "auto")
        if delta == "auto":
            delta, clamped = auto_logistic_delta(T, k, d)
            derived["cover_delta_clamped"] = clamped
        delta = float(delta)
        eta = spec.get("eta", "auto")
        eta = auto_logistic_eta(T, k) if eta == "auto" else float(eta)
        tau = spec.get("tau", "auto")
        # cover utilities have free-coordinate l1 norm at most d
        tau = auto_bucket_tau(T, k, float(d)) if tau == "auto" else float(tau)
        scheme = BucketScheme(tau)
        lifted_dim = grid.dim + int(not grid.lifted)
        size = delta_levels(delta).size ** (k * lifted_dim) * k * scheme.count
        if size > cap:
            raise CapExceeded(f"bucket family would hold {size} raw events (cap {cap})", size)
        cover = _cover(spec, k, lifted_dim, delta, cap)
        fam = logistic_bucket_events(cover, grid, eta, scheme)
        derived.update(cover_delta=delta, cover_size=len(cover), k=k, eta=eta, tau=tau)
    else:
        fam = make_family("none", grid, np.zeros((0, grid.size), dtype=bool), [])
    if len(fam) > cap:
        raise CapExceeded(f"family holds {len(fam)} events (cap {cap})", len(fam))
    return fam, cover, derived


def build_agents(config: ExperimentConfig, grid: PredictionGrid, family_derived: dict,
                 cover: UtilityCover | None):
    lifted_dim = grid.dim + int(not grid.lifted)
    T = config.horizon
    agents, covers, meta = [], {}, []
    for i, spec in enumerate(config.agents):
        aid = str(spec.get("id", f"agent{i}"))
        vec = spec["vectors"]
        if vec == "random":
            rng = np.random.Generator(np.random.Philox(int(spec.get("seed", i))))
            u = random_utility(rng, int(spec.get("actions", 2)), lifted_dim, uid=aid)
        else:
            u = UtilityFunction(vec, id=aid)
        if u.dim != lifted_dim:
            raise ConfigError(f"agent {aid}: utility dimension {u.dim}, grid needs {lifted_dim}")
        mode_name = spec.get("mode", "exact")
        tie = spec.get("tie_rule", "high")
        row = {"id": aid, "mode": mode_name, "actions": u.action_count, "lipschitz": u.lipschitz}
        if mode_name == "exact":
            mode = Exact(tie)
        elif mode_name == "snapped":
            delta = spec.get("delta", "auto")
            if delta == "auto":
                delta = family_derived.get("cover_delta", auto_snap_delta(T, config.dim))
            delta = float(delta)
            mode = Snapped(delta, tie)
            if cover is not None and abs(cover.delta - delta) < 1e-12 and u.action_count <= cover.k:
                covers[aid] = cover
            else:
                covers[aid] = delta
            row["delta"] = delta
        else:
            eta = spec.get("eta", "auto")
            if eta == "auto":
                eta = family_derived.get("eta", auto_logistic_eta(T, u.action_count))
            mode = Logistic(float(eta))
            row["eta"] = float(eta)
        agents.append(AgentModel(u, mode, aid))
        meta.append(row)
    return agents, covers, meta


def build_setup(config: ExperimentConfig) -> Setup:
    if config.horizon > config.horizon_cap:
        raise CapExceeded(f"horizon {config.horizon} exceeds cap {config.horizon_cap}", config.horizon)
    grid = build_grid(config)
    family, cover, derived = build_family(config, grid)
    agents, covers, meta = build_agents(config, grid, derived, cover)
    seeds = _seeds(config.seed)
    adv = make_adversary(config.adversary, grid, family, seed=seeds["adversary"])
    derived.update(epsilon=grid.epsilon, grid_size=grid.size, n_events=len(family))
    return Setup(grid, family, adv, agents, covers, cover, derived, {"agents": meta})


# --- the loop ----------------------------------------------------------------------

def execute(setup: Setup, config: ExperimentConfig) -> ExperimentReport:
    """Play ``config.horizon`` rounds in protocol order and score the transcript.

    Each round the adversary commits to ``y_t`` (hashed) before the forecast
    distribution exists; the forecast is then drawn, the outcome revealed and the
    forecaster updated with the expected residual.
    """
    grid, family, adv = setup.grid, setup.family, setup.adversary
    T = config.horizon
    seeds = _seeds(config.seed)
    state = init_state(grid, family, T, seed=seeds["forecaster"], learning_rate=config.learning_rate,
                       gap_tol=config.gap_tol, solver=config.solver, strict=config.strict)
    tr = Transcript(grid, T)
    t0 = time.perf_counter()
    for t in range(1, T + 1):
        y = adv.next_outcome(t, tr.view(t - 1))
        commitment = commit_outcome(t, y)
        forced = adv.forced_prediction(t)
        if forced is not None:
            idx = int(np.argmin(np.abs(grid.points - forced).max(axis=1)))
            if np.abs(grid.points[idx] - forced).max() > 1e-9:
                raise ConfigError(f"forced prediction {forced.tolist()} is not a grid point")
            p = ForecastDistribution.point_mass(grid.size, idx)
            diag = {"forced": True}
        else:
            p, idx, diag = forecast_round(state)
        update_state(state, p, y)
        tr.append(p, idx, y, commitment, diag)
    t_loop = time.perf_counter() - t0

    t1 = time.perf_counter()
    bias = conditional_bias(tr, family)
    results = {}
    for agent in setup.agents:
        results[agent.id] = expected_swap_regret(tr, agent, setup.agent_covers.get(agent.id))
    cal = None
    if grid.free_dims == 1:
        cal = {"l1": l1_calibration(tr), "l2": l2_calibration(tr)}
    t_metrics = time.perf_counter() - t1

    derived = dict(setup.derived)
    derived.update(learning_rate=state.learning_rate, gap_tol=state.gap_tol, solver=state.solver,
                   solver_failures=state.failures)
    timing = {"loop_seconds": t_loop, "metrics_seconds": t_metrics,
              "per_round_seconds": t_loop / T if T else 0.0}
    rep = ExperimentReport(config.to_dict(), derived, tr, family, bias, results,
                           setup.labels.get("agents", []), cal, timing, setup=setup)
    rep.extra["ledger_max_abs_diff"] = float(np.abs(state.cum_bias - bias.sums).max(initial=0.0))
    return rep


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    return execute(build_setup(config), config)


# --- rate study ----------------------------------------------------------------------

@dataclass
class RateStudy:
    rows: list[dict]
    slopes: dict

    def to_dict(self) -> dict:
        return {"rows": self.rows, "slopes": self.slopes}


def _slope(ts, vals):
    ts, vals = np.asarray(ts, float), np.asarray(vals, float)
    if ts.size < 2 or np.any(vals <= 0):
        return None
    return float(np.polyfit(np.log(ts), np.log(vals), 1)[0])


def rate_study(base: ExperimentConfig, horizons, seeds=None) -> RateStudy:
    """Run every horizon (with its derived parameters) for every seed.

    Rows hold the seed-averaged maximum bias and maximum agent swap regret;
    ``regret_ratio`` compares each horizon with the previous one as a ratio of
    the seed averages, and ``regret_ratio_per_seed_mean`` averages per-seed ratios.
    """
    horizons = [int(h) for h in horizons]
    if any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise ConfigError("horizons must be strictly increasing")
    if seeds is None:
        seeds = [base.seed + r for r in range(base.replays)]
    if not seeds or not horizons:
        raise ConfigError("rate study needs at least one horizon and one seed")
    rows = []
    prev = None
    for T in horizons:
        biases, regrets, solver = [], [], []
        for s in seeds:
            rep = run_experiment(base.with_horizon(T).with_seed(s))
            biases.append(rep.bias.max_bias)
            regrets.append(rep.max_swap_regret)
            solver.append(rep.solver_summary())
        row = {"T": T, "epsilon": rep.derived["epsilon"], "n_events": rep.derived["n_events"],
               "seeds": list(seeds),
               "max_bias": float(np.mean(biases)), "max_swap_regret": float(np.mean(regrets)),
               "max_bias_per_seed": biases, "max_swap_regret_per_seed": regrets,
               "gap_tol": rep.derived["gap_tol"],
               "max_gap": max(x["max_gap"] for x in solver),
               "max_value": max(x["max_value"] for x in solver),
               "solver_failures": sum(x["failures"] for x in solver)}
        if prev is not None:
            row["regret_ratio"] = row["max_swap_regret"] / prev["max_swap_regret"] if prev["max_swap_regret"] > 0 else None
            pr = [b / a for a, b in zip(prev["max_swap_regret_per_seed"], regrets) if a > 0]
            row["regret_ratio_per_seed_mean"] = float(np.mean(pr)) if pr else None
        rows.append(row)
        prev = row
    ts = [r["T"] for r in rows]
    slopes = {"max_bias": _slope(ts, [r["max_bias"] for r in rows]),
              "max_swap_regret": _slope(ts, [r["max_swap_regret"] for r in rows])}
    return RateStudy(rows, slopes)


# --- counterexample one-shot -------------------------------------------------------

def reproduce_lemma(delta: float = 0.1, T: int = 1000, samples: int = 100, seed: int = 0) -> ExperimentReport:
    """Scripted run where nearby utilities see very different conditional bias.

    The report's ``lemma`` entry holds the per-occurrence bias of each
    best-response event, the largest sampled payoff gap and its bound, and the
    swap regret of exact agents for both utilities.
    """
    sc = lemma_counterexample_scenario(delta, T)
    grid = sc.grid()
    family = best_response_events([sc.u, sc.u_tilde], grid, "high")
    adv = Scripted(grid, sc.outcomes, sc.forced_predictions)
    agents = [AgentModel(sc.u, Exact("high"), "u"), AgentModel(sc.u_tilde, Exact("high"), "u_tilde")]
    meta = [{"id": a.id, "mode": "exact", "actions": 2, "lipschitz": a.utility.lipschitz} for a in agents]
    config = ExperimentConfig(horizon=T, dim=1, lifted=True, epsilon=float(grid.epsilon),
                              family={"kind": "br-cover", "utilities": [
                                  {"id": "u", "vectors": sc.u.vectors.tolist()},
                                  {"id": "u_tilde", "vectors": sc.u_tilde.vectors.tolist()}]},
                              adversary={"kind": "scripted", "outcomes": sc.outcomes.tolist(),
                                         "forced_predictions": sc.forced_predictions.tolist()},
                              seed=seed)
    setup = Setup(grid, family, adv, agents, {}, None,
                  {"epsilon": grid.epsilon, "grid_size": grid.size, "n_events": len(family), "delta": delta},
                  {"agents": meta})
    rep = execute(setup, config)

    rng = np.random.Generator(np.random.Philox(seed))
    acts = rng.integers(0, 2, size=samples)
    ys = np.column_stack([rng.random(samples), np.ones(samples)])
    gaps = np.abs(sc.u.payoffs(ys)[np.arange(samples), acts] - sc.u_tilde.payoffs(ys)[np.arange(samples), acts])
    bound = 2 * delta / (1 + 2 * delta)
    occ = rep.bias.per_occurrence
    events = {}
    for uid in ("u", "u_tilde"):
        for a in (0, 1):
            j = family.find(BestResponse(uid, a))
            events[f"{uid},{a}"] = {
                "per_occurrence_bias": float(occ[j]) if j is not None else 0.0,
                "bias_inf": float(rep.bias.bias_inf[j]) if j is not None else 0.0,
                "n_T": float(rep.bias.n_T[j]) if j is not None else 0.0,
            }
    rep.extra["lemma"] = {
        "delta": delta,
        "events": events,
        "payoff_gap_max": float(gaps.max()),
        "payoff_gap_bound": bound,
        "payoff_gap_samples": samples,
        "payoff_gap_ok": bool(gaps.max() <= bound + 1e-12),
        "swap_regret": {k: v.value for k, v in rep.agent_results.items()},
    }
    return rep

