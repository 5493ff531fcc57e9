"""Acceptance criteria, one test each.  Every test prints a ``PASS``/``FAIL criterion N`` line.

Run alone with ``pytest tests/test_acceptance.py -s`` (the lines are also
repeated in the terminal summary).
"""

import math
import time

import numpy as np
import pytest

import test_properties as props
from conftest import point_transcript
from swapcast.agents import fixed_swap_regret, snap_utility
from swapcast.core import PredictionGrid
from swapcast.events import (
    BucketScheme,
    convex_polygon_events_2d,
    count_convex_closed_sets,
    oracle_convex_closed_sets,
    stream_convex_closed_masks,
)
from swapcast.harness import ExperimentConfig, rate_study, reproduce_lemma, run_experiment
from swapcast.metrics import bias_bound, l1_calibration, l2_calibration, weighted_bucket_bias

LINES: list[str] = []


def record(n: int, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    print(line)
    LINES.append(line)
    return ok


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


RANDOM_AGENTS_1D = [{"id": f"r{i}", "vectors": "random", "actions": 2 + i % 2, "seed": 100 + i} for i in range(10)]
ADVERSARIES_1D = [
    {"kind": "constant", "y": [0.3]},
    {"kind": "periodic", "sequence": [[0], [1], [1]]},
    {"kind": "iid-corners"},
    {"kind": "greedy-bias"},
]


@pytest.fixture(scope="module")
def c2_runs():
    runs = {}
    for adv in ADVERSARIES_1D:
        cfg = ExperimentConfig(horizon=4096, dim=1, epsilon=1 / 64, family={"kind": "intervals"},
                               adversary=adv, agents=RANDOM_AGENTS_1D, seed=1, strict=True)
        runs[adv["kind"]] = timed(run_experiment, cfg)
    return runs


@pytest.fixture(scope="module")
def c3_study():
    cfg = ExperimentConfig(horizon=1024, dim=1, epsilon="auto", family={"kind": "intervals"},
                           adversary={"kind": "iid-corners"}, agents=RANDOM_AGENTS_1D, seed=0, strict=True)
    return timed(rate_study, cfg, [1024, 4096], seeds=[0, 1, 2, 3, 4])


@pytest.fixture(scope="module")
def c4_run():
    agents = [{"id": f"r{i}", "vectors": "random", "actions": 3, "seed": 200 + i} for i in range(5)]
    cfg = ExperimentConfig(horizon=1024, dim=2, grid_shape=[6, 6], family={"kind": "polygons"},
                           adversary={"kind": "iid-corners"}, agents=agents, seed=1, strict=True)
    return timed(run_experiment, cfg)


@pytest.fixture(scope="module")
def c8_run():
    agents = [{"id": f"s{i}", "vectors": "random", "actions": 2, "seed": 300 + i, "mode": "snapped"}
              for i in range(5)]
    cfg = ExperimentConfig(horizon=4096, dim=1, epsilon="auto", family={"kind": "br-cover", "k": 2, "delta": 0.25},
                           adversary={"kind": "iid-corners"}, agents=agents, seed=2, strict=True)
    return timed(run_experiment, cfg)


@pytest.fixture(scope="module")
def c9_run():
    inside = [{"id": f"in{i}", "vectors": (np.random.default_rng(i).integers(0, 5, (2, 2)) / 4).tolist(),
               "mode": "logistic", "eta": 32} for i in range(5)]
    outside = [{"id": f"out{i}", "vectors": "random", "actions": 2, "seed": 400 + i, "mode": "logistic", "eta": 32}
               for i in range(5)]
    cfg = ExperimentConfig(horizon=4096, dim=1, epsilon="auto",
                           family={"kind": "logistic-cover", "k": 2, "delta": 0.25, "eta": 32, "tau": 0.25},
                           adversary={"kind": "iid-corners"}, agents=inside + outside, seed=3, strict=True)
    return timed(run_experiment, cfg)


def test_criterion_1_lemma():
    rep, secs = timed(reproduce_lemma, 0.1, 1000)
    info = rep.extra["lemma"]
    occ = {k: v["per_occurrence_bias"] for k, v in info["events"].items()}
    ok_u = all(abs(occ[f"u,{a}"]) <= 1e-9 for a in (0, 1))
    ok_ut = all(abs(occ[f"u_tilde,{a}"] - 0.6) <= 1e-9 for a in (0, 1))
    ok_gap = info["payoff_gap_ok"] and info["payoff_gap_samples"] == 100 and \
        abs(info["payoff_gap_bound"] - 1 / 6) <= 1e-15
    ok_reg = abs(info["swap_regret"]["u_tilde"] - 1.0) <= 1e-9
    ok = ok_u and ok_ut and ok_gap and ok_reg and secs < 1.0
    assert record(1, ok, f"bias u={[occ['u,0'], occ['u,1']]} u_tilde={[occ['u_tilde,0'], occ['u_tilde,1']]}, "
                         f"gap {info['payoff_gap_max']:.4f}<=1/6, regret {info['swap_regret']['u_tilde']}, "
                         f"{secs:.2f}s")


def test_criterion_2_one_dim(c2_runs):
    total = sum(s for _, s in c2_runs.values())
    ok, parts = total < 300, []
    for kind, (rep, secs) in c2_runs.items():
        assert len(rep.family) == 2145 and rep.derived["epsilon"] == 1 / 64
        bias_ratio = float((rep.bias.bias_inf / bias_bound(rep.bias, len(rep.family), 1, rep.derived["epsilon"])).max())
        reg_ratio = max(rep.agent_results[m["id"]].value
                        / (10 * m["lipschitz"] * m["actions"] * math.sqrt(math.log(4096) / 4096))
                        for m in rep.agent_meta)
        ok &= bias_ratio <= 1 and reg_ratio <= 1
        parts.append(f"{kind}: bias/bound {bias_ratio:.3f}, regret/bound {reg_ratio:.4f}")
    assert record(2, ok, "; ".join(parts) + f"; {total:.0f}s total")


def test_criterion_3_rate(c3_study):
    study, secs = c3_study
    row = study.rows[1]
    ratio = row["regret_ratio"]
    ok = ratio is not None and ratio <= 0.65
    assert record(3, ok, f"regret ratio {ratio:.3f} (seed-averaged; mean of per-seed ratios "
                         f"{row['regret_ratio_per_seed_mean']:.3f}), {secs:.0f}s")


def test_criterion_4_two_dim(c4_run):
    rep, secs = c4_run
    T, E, eps = 1024, len(rep.family), rep.derived["epsilon"]
    lg = math.log(2 * E * T)
    bias_ok = rep.bias.max_bias <= 5 * math.sqrt(lg / T) + eps
    reg_slack = min(10 * m["lipschitz"] * m["actions"] * math.sqrt(lg / T) + 2 * m["lipschitz"] * m["actions"] * eps
                    - rep.agent_results[m["id"]].value for m in rep.agent_meta)
    ok = bias_ok and reg_slack >= 0 and secs < 600
    assert record(4, ok, f"|E|={E}, max bias {rep.bias.max_bias:.4f} vs {5 * math.sqrt(lg / T) + eps:.4f}, "
                         f"regret slack {reg_slack:.3f}, {secs:.0f}s")


def _member_sets(fam):
    return {frozenset(np.flatnonzero(row).tolist()) for row in fam.membership}


def test_criterion_5_polygons():
    g2 = PredictionGrid.from_shape([2, 2])
    n2 = len(convex_polygon_events_2d(g2))
    same = all(_member_sets(convex_polygon_events_2d(g)) == oracle_convex_closed_sets(g)
               for g in (PredictionGrid.from_shape([3, 3]), PredictionGrid.from_shape([2, 3])))
    g8 = PredictionGrid.from_shape([8, 8])
    n8, secs = timed(lambda: sum(1 for _ in stream_convex_closed_masks(g8)))
    dp = count_convex_closed_sets(g8)
    ok = n2 == 15 and same and secs < 60 and n8 == dp
    assert record(5, ok, f"m=2 -> {n2}; m=3 and 2x3 equal oracle: {same}; "
                         f"m=8 enumerated {n8} sets in {secs:.1f}s (counting DP {dp})")


def test_criterion_6_certificates(c2_runs, c3_study, c4_run):
    worst_gap_ratio, worst_value_excess, failures, rounds = 0.0, -math.inf, 0, 0
    reps = [r for r, _ in c2_runs.values()] + [c4_run[0]]
    for rep in reps:
        tol, eps = rep.derived["gap_tol"], rep.derived["epsilon"]
        for r in rep.transcript:
            d = r.diagnostics
            worst_gap_ratio = max(worst_gap_ratio, d["gap"] / tol)
            worst_value_excess = max(worst_value_excess, d["value"] - (eps + tol))
            rounds += 1
        failures += rep.derived["solver_failures"]
    for row in c3_study[0].rows:
        worst_gap_ratio = max(worst_gap_ratio, row["max_gap"] / row["gap_tol"])
        worst_value_excess = max(worst_value_excess, row["max_value"] - (row["epsilon"] + row["gap_tol"]))
        failures += row["solver_failures"]
        rounds += row["T"] * len(row["seeds"])
    ok = worst_gap_ratio <= 1.0 and worst_value_excess <= 0 and failures == 0
    assert record(6, ok, f"{rounds} rounds, max gap/gap_tol {worst_gap_ratio:.2e}, "
                         f"max value-(eps+gap_tol) {worst_value_excess:.4f}, failures {failures}")


PROPERTY_CHECKS = [
    ("logistic Lipschitz", [props.test_logistic_lipschitz_batch, props.test_logistic_lipschitz_utilities]),
    ("logistic near-optimality", [props.test_logistic_near_optimal_batch, props.test_logistic_near_optimal_utilities]),
    ("snap quality", [lambda: props.test_snap_quality_batch(2, 0.25), lambda: props.test_snap_quality_batch(3, 0.2),
                      props.test_snap_quality_hypothesis]),
    ("BR convex-closed", [props.test_br_events_convex_1d, props.test_br_events_convex_2d,
                          props.test_br_family_members_convex]),
    ("swap regret = brute force", [props.test_swap_regret_matches_brute_force]),
    ("bucket inequality (random)", [props.test_weighted_bucket_inequality_batch]),
]


def test_criterion_7_properties(c9_run):
    failed = []
    for name, checks in PROPERTY_CHECKS:
        for fn in checks:
            try:
                fn()
            except Exception:
                failed.append(name)
    rep = c9_run[0]
    scheme = BucketScheme(rep.derived["tau"])
    n_checks, violations = 0, 0
    for u in rep.setup.cover:
        for a in range(u.action_count):
            res = weighted_bucket_bias(rep.transcript, rep.family, u, a, rep.derived["eta"], scheme, check=False)
            violations += not res.holds
            n_checks += 1
    if violations:
        failed.append("bucket inequality (run)")
    ok = not failed
    assert record(7, ok, f"{len(PROPERTY_CHECKS)} suites; bucket inequality held on {n_checks - violations}/{n_checks} "
                         f"(utility, action) pairs of the logistic run" + (f"; failed: {failed}" if failed else ""))


def test_criterion_8_snapped(c8_run):
    rep, secs = c8_run
    T, d, k, delta = 4096, 1, 2, 0.25
    assert rep.derived["cover_size"] <= 625
    slack = min(10 * m["lipschitz"] * math.sqrt(m["actions"] * d * k * math.log(T * d * k) / T) + 2 * delta * (d + 1)
                - rep.agent_results[m["id"]].value for m in rep.agent_meta)
    worst = max(rep.agent_results[m["id"]].value for m in rep.agent_meta)
    ok = slack >= 0 and all(rep.setup.agent_covers[a.id] is rep.setup.cover for a in rep.setup.agents)
    assert record(8, ok, f"cover {rep.derived['cover_size']}, |E|={len(rep.family)}, max regret {worst:.4f}, "
                         f"min slack {slack:.3f}, {secs:.0f}s")


def test_criterion_9_logistic(c9_run):
    rep, secs = c9_run
    eta, tau = rep.derived["eta"], rep.derived["tau"]
    scheme = BucketScheme(tau)
    ys = rep.setup.grid.lifted_points
    ok, parts = True, []
    for agent in rep.setup.agents:
        u = agent.utility
        s = snap_utility(u, rep.setup.cover)
        alpha = max(weighted_bucket_bias(rep.transcript, rep.family, s, a, eta, scheme).alpha_max
                    for a in range(u.action_count))
        A, L = u.action_count, u.lipschitz
        bound = (math.log(A) + 1) / eta + 2 * A * L * scheme.count * alpha + 2 * A * L * tau
        dprime = float(np.abs(u.payoffs(ys) - s.payoffs(ys)).max())
        if dprime > 0:
            bound += A * math.expm1(2 * eta * dprime) + 2 * dprime
        value = rep.agent_results[agent.id].value
        ok &= value <= bound
        parts.append(f"{agent.id} {value:.4f}<={bound:.3g}")
    assert record(9, ok, ", ".join(parts) + f"; {secs:.0f}s")


def test_criterion_10_unit_values(c2_runs, c4_run, c8_run, c9_run):
    g = PredictionGrid.from_shape([3])
    tr = point_transcript(g, [0.5] * 100, [1.0] * 100)
    l1, l2 = l1_calibration(tr), l2_calibration(tr)
    reps = [r for r, _ in c2_runs.values()] + [c4_run[0], c8_run[0], c9_run[0], reproduce_lemma(0.1, 1000)]
    worst = 0.0
    for rep in reps:
        for agent in rep.setup.agents:
            ident = list(range(agent.utility.action_count))
            worst = max(worst, abs(fixed_swap_regret(rep.transcript, agent, ident,
                                                     rep.setup.agent_covers.get(agent.id))))
    ok = l1 == 50.0 and l2 == 25.0 and worst == 0.0
    assert record(10, ok, f"l1 {l1}, l2 {l2}, identity-swap regret max {worst} over {len(reps)} transcripts")
