"""Serialization of reports: JSON plus plot-ready CSV tables, written atomically."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from ..events.io import atomic_write_bytes
from ..metrics import bias_rows
from .run import ExperimentReport, RateStudy


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n").encode()


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([r.get(h, "") if isinstance(r, dict) else r[i] for i, h in enumerate(header)])
    return buf.getvalue().encode()


def _fmt(x):
    return "" if x is None else repr(float(x)) if isinstance(x, float) else x


def report_tables(report: ExperimentReport) -> dict[str, bytes]:
    out = {}
    rows = bias_rows(report.bias, report.family)
    out["bias.csv"] = _csv_bytes(["event_label", "n_T", "bias_inf_expected", "bias_inf_realized"],
                                 [{k: _fmt(v) for k, v in r.items()} for r in rows])
    rounds = [{k: _fmt(v) for k, v in d.items()} for d in report.transcript.diagnostics()]
    out["rounds.csv"] = _csv_bytes(["t", "value", "gap", "entropy"], rounds)
    agents = report.to_dict()["agents"]
    out["agents.csv"] = _csv_bytes(["id", "mode", "actions", "lipschitz", "value", "realized"],
                                   [{k: _fmt(v) for k, v in a.items()} for a in agents])
    return out


def emit_report(report: ExperimentReport, out_dir, formats=("json", "csv")) -> list[Path]:
    """Write ``report.json``, ``transcript.json``, ``timing.json`` and the CSV tables.

    Timing lives in its own file so the other outputs depend only on the
    config and seed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, data):
        path = out_dir / name
        atomic_write_bytes(path, data)
        written.append(path)

    if "json" in formats:
        put("report.json", _json_bytes(report.to_dict()))
        put("transcript.json", _json_bytes(report.transcript.to_dict()))
    if "csv" in formats:
        for name, data in report_tables(report).items():
            put(name, data)
    put("timing.json", _json_bytes(report.timing))
    return written


def emit_rate_study(study: RateStudy, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = ["T", "epsilon", "n_events", "max_bias", "max_swap_regret", "regret_ratio"]
    paths = [out_dir / "rate_study.json", out_dir / "rate_study.csv"]
    atomic_write_bytes(paths[0], _json_bytes(study.to_dict()))
    atomic_write_bytes(paths[1], _csv_bytes(header, [{k: _fmt(r.get(k)) for k in header} for r in study.rows]))
    return paths
