"""Run scenarios to disk and compare feature-toggle baselines."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

from .config import FEATURES, ScenarioConfig, emit_config
from .metrics import MetricsReport, summarize_metrics
from .simulation import Simulation
from .trace import TRACE_FORMAT, TRUTH_FORMAT, TraceWriter, run_id_for

OUT_DIR_ENV = "CPSFOG_OUT_DIR"


@dataclass
class RunSummary:
    status: int
    run_id: str
    records: int
    alarms: int
    dispatched: int
    wall_seconds: float
    out_dir: str
    metrics: MetricsReport | None = field(default=None, repr=False)


def default_out_dir(fallback: str = "cpsfog-out") -> Path:
    return Path(os.environ.get(OUT_DIR_ENV, fallback))


def run_scenario(cfg: ScenarioConfig, out_dir, metrics: bool = True) -> RunSummary:
    """Write ``config.yaml``, ``trace.jsonl``, ``truth.jsonl`` and ``metrics.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = emit_config(cfg)
    run_id = run_id_for(text)
    (out / "config.yaml").write_text(text, encoding="utf-8")
    cells = [c.id for c in cfg.cells]
    t0 = time.perf_counter()
    with TraceWriter(out / "trace.jsonl", {"format": TRACE_FORMAT, "run_id": run_id, "seed": cfg.seed,
                                           "cells": cells}) as trace, \
            TraceWriter(out / "truth.jsonl", {"format": TRUTH_FORMAT, "run_id": run_id}) as truth:
        sim = Simulation(cfg, trace, truth, keep_observations=False)
        dispatched = sim.run()
        records = trace.records
    rep = None
    if metrics:
        rep = summarize_metrics(out / "trace.jsonl", out / "truth.jsonl")
        (out / "metrics.json").write_text(rep.to_json() + "\n", encoding="utf-8")
    wall = time.perf_counter() - t0
    return RunSummary(0, run_id, records, len(sim.alarms), dispatched, wall, str(out), rep)


def parse_toggles(spec: str) -> dict[str, bool]:
    """``"context_reuse=off,fog_defense=on"`` -> ``{"context_reuse": False, ...}``."""
    out = {}
    for part in filter(None, (p.strip() for p in spec.split(","))):
        name, _, val = part.partition("=")
        name = name.strip()
        if name not in FEATURES:
            raise ValueError(f"unknown feature {name!r} (known: {', '.join(FEATURES)})")
        v = val.strip().lower()
        if v not in ("on", "off", "true", "false", "1", "0"):
            raise ValueError(f"feature {name}: expected on/off, got {val!r}")
        out[name] = v in ("on", "true", "1")
    return out


def _label(toggles: dict[str, bool]) -> str:
    if not toggles:
        return "default"
    return ",".join(f"{k}={'on' if v else 'off'}" for k, v in sorted(toggles.items()))


COLUMNS = ("signaling", "energy", "delivered", "latency_mean", "alarms", "TP", "FP", "FN",
           "detect_latency", "tracking_accuracy", "reuse")


def comparison_row(label: str, rep: MetricsReport) -> dict:
    conf = rep.confusion
    lats = [c["latency"] for c in conf.values() if c["latency"] is not None]
    return {
        "label": label,
        "signaling": rep.signaling["total"],
        "energy": round(rep.energy["total"], 3),
        "delivered": rep.data["delivered_msgs"],
        "latency_mean": None if rep.latency["mean"] is None else round(rep.latency["mean"], 2),
        "alarms": len(rep.alarms),
        "TP": sum(c["TP"] for c in conf.values()),
        "FP": sum(c["FP"] for c in conf.values()),
        "FN": sum(c["FN"] for c in conf.values()),
        "detect_latency": min(lats) if lats else None,
        "tracking_accuracy": None if rep.tracking is None else rep.tracking["accuracy"],
        "reuse": rep.contexts["reuse"],
        "confusion": conf,
    }


def format_table(rows: list[dict]) -> str:
    head = ("label",) + COLUMNS
    cells = [[str(r.get(c, "")) if r.get(c) is not None else "-" for c in head] for r in rows]
    widths = [max(len(h), *(len(row[i]) for row in cells)) for i, h in enumerate(head)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def compare_baselines(cfg: ScenarioConfig, toggles: list[dict[str, bool]], out) -> dict:
    """Run ``cfg`` once per toggle set (same seed) and tabulate the results."""
    out = Path(out)
    rows = []
    for i, t in enumerate(toggles):
        label = _label(t)
        summary = run_scenario(cfg.with_features(**t), out / f"run{i}")
        rows.append(comparison_row(label, summary.metrics))
    report = {"seed": cfg.seed, "n_full": cfg.security.n_full, "n_reuse": cfg.security.n_reuse, "rows": rows}
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    (out / "comparison.txt").write_text(format_table(rows) + "\n", encoding="utf-8")
    return report
