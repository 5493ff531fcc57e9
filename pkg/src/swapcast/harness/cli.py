"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 solver failure (strict mode),
4 cap exceeded, 5 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from ..agents import CapExceeded
from ..core import PredictionGrid, build_epsilon_net
from ..events import (
    BucketScheme,
    best_response_events,
    convex_polygon_events_2d,
    count_convex_closed_sets,
    intervals_1d,
    logistic_bucket_events,
    stream_convex_closed_masks,
    write_membership,
)
from ..agents import build_utility_cover
from ..forecaster import SolverFailure
from .config import ConfigError, ExperimentConfig
from .report import emit_rate_study, emit_report
from .run import rate_study, reproduce_lemma, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CAP, EXIT_IO = 0, 2, 3, 4, 5

log = logging.getLogger("swapcast")


def _print(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=1))


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.strict:
        cfg.strict = True
    out = Path(args.out or cfg.output_dir or "out")
    summary = []
    for r in range(cfg.replays):
        rep = run_experiment(cfg.with_seed(cfg.seed + r))
        dest = out if cfg.replays == 1 else out / f"replay{r}"
        emit_report(rep, dest)
        summary.append({"seed": cfg.seed + r, "out": str(dest), "max_bias": rep.bias.max_bias,
                        "max_swap_regret": rep.max_swap_regret, "transcript_hash": rep.transcript.digest()})
    _print(summary if len(summary) > 1 else summary[0])
    return EXIT_OK


def cmd_rate_study(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    try:
        horizons = [int(h) for h in args.horizons.split(",") if h.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --horizons: {exc}") from exc
    seeds = None
    if args.seeds is not None:
        seeds = [cfg.seed + r for r in range(args.seeds)]
    study = rate_study(cfg, horizons, seeds)
    if args.out:
        emit_rate_study(study, args.out)
    _print(study.to_dict())
    return EXIT_OK


def _grid_for(args) -> PredictionGrid:
    if args.shape:
        shape = [int(s) for s in args.shape.split(",")]
        return PredictionGrid.from_shape(shape, lifted=args.family in ("br-cover", "logistic-cover"))
    if args.m is not None:
        return PredictionGrid.from_shape([args.m, args.m])
    lifted = args.family in ("br-cover", "logistic-cover")
    return build_epsilon_net(args.dim + int(lifted), args.epsilon, lifted)


def cmd_enumerate(args) -> int:
    grid = _grid_for(args)
    if args.family == "intervals":
        fam = intervals_1d(grid)
    elif args.family == "polygons":
        if args.count_only or args.stream:
            t0 = time.perf_counter()
            if args.stream:
                n, method = sum(1 for _ in stream_convex_closed_masks(grid)), "stream"
            else:
                n, method = count_convex_closed_sets(grid), "count"
            secs = time.perf_counter() - t0
            log.info("polygons on %s grid: %d sets by %s in %.2fs", grid.shape, n, method, secs)
            _print({"family": "polygons", "grid_size": grid.size, "shape": list(grid.shape),
                    "deduped_count": n, "method": method, "seconds": round(secs, 3)})
            return EXIT_OK
        fam = convex_polygon_events_2d(grid, cap=args.cap)
    else:
        lifted_dim = grid.dim
        cover = build_utility_cover(args.k, lifted_dim, args.delta)
        if args.family == "br-cover":
            fam = best_response_events(cover, grid)
        else:
            fam = logistic_bucket_events(cover, grid, args.eta, BucketScheme(args.tau))
    summary = fam.summary()
    summary["shape"] = list(grid.shape)
    if args.out:
        write_membership(args.out, fam.membership)
        summary["membership_file"] = str(args.out)
    _print(summary)
    return EXIT_OK


def cmd_reproduce_lemma(args) -> int:
    rep = reproduce_lemma(args.delta, args.T)
    if args.out:
        emit_report(rep, args.out)
    _print(rep.extra["lemma"])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swapcast", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--strict", action="store_true")
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("rate-study", help="run a config at several horizons")
    s.add_argument("--config", required=True)
    s.add_argument("--horizons", required=True, help="comma-separated, increasing")
    s.add_argument("--seeds", type=int, help="number of seeds (default: config replays)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_rate_study)

    e = sub.add_parser("enumerate-events", help="build an event family and summarize it")
    e.add_argument("--family", choices=["intervals", "polygons", "br-cover", "logistic-cover"], required=True)
    e.add_argument("--epsilon", type=float, default=0.25)
    e.add_argument("--dim", type=int, default=1, help="free coordinates")
    e.add_argument("--m", type=int, help="m x m grid for polygons")
    e.add_argument("--shape", help="comma-separated grid shape")
    e.add_argument("--delta", type=float, default=0.5)
    e.add_argument("--tau", type=float, default=0.25)
    e.add_argument("--eta", type=float, default=1.0)
    e.add_argument("--k", type=int, default=2)
    e.add_argument("--cap", type=int, default=5_000_000)
    e.add_argument("--count-only", action="store_true", help="polygons: count without materializing")
    e.add_argument("--stream", action="store_true", help="polygons: enumerate and count without storing")
    e.add_argument("--out", help="write the bit-packed membership matrix here")
    e.set_defaults(func=cmd_enumerate)

    m = sub.add_parser("reproduce-lemma", help="scripted counterexample for nearby utilities")
    m.add_argument("--delta", type=float, default=0.1)
    m.add_argument("--T", type=int, default=1000)
    m.add_argument("--out")
    m.set_defaults(func=cmd_reproduce_lemma)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CapExceeded as exc:
        print(f"cap exceeded: {exc}", file=sys.stderr)
        return EXIT_CAP
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
