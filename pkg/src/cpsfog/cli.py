"""Command line: ``cpsfog run|validate|compare|report``.

Exit codes: 0 success, 1 invalid scenario, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import parse_duration, parse_scenario
from .errors import ParseError, SimError, ValidationError
from .metrics import summarize_metrics
from .runner import compare_baselines, default_out_dir, format_table, parse_toggles, run_scenario

OK, INVALID, RUNTIME = 0, 1, 2


def _load(args):
    cfg = parse_scenario(args.scenario)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "duration_override", None):
        try:
            cfg = replace(cfg, duration=parse_duration(args.duration_override))
        except ValueError as e:
            raise ParseError(str(e), field="--duration-override") from None
        if cfg.duration <= 0:
            raise ParseError("duration must be positive", field="--duration-override")
    return cfg


def cmd_validate(args) -> int:
    cfg = _load(args)
    n = sum(g.count for g in cfg.devices)
    print(f"ok: {len(cfg.cells)} cells, {n} devices, {len(cfg.attacks)} attacks, duration {cfg.duration} ms")
    return OK


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out) if args.out else default_out_dir()
    s = run_scenario(cfg, out)
    print(f"run {s.run_id}: {s.records} records, {s.alarms} alarms, {s.dispatched} events "
          f"in {s.wall_seconds:.1f}s -> {s.out_dir}")
    return OK


def cmd_compare(args) -> int:
    cfg = _load(args)
    try:
        toggles = [parse_toggles(t) for t in args.toggles] if args.toggles else [{}]
    except ValueError as e:
        raise ParseError(str(e), field="--toggles") from None
    out = Path(args.out) if args.out else default_out_dir()
    report = compare_baselines(cfg, toggles, out)
    print(format_table(report["rows"]))
    return OK


def cmd_report(args) -> int:
    rep = summarize_metrics(args.trace, args.truth)
    text = rep.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cpsfog", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run a scenario and write trace, truth and metrics")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="output directory (default: $CPSFOG_OUT_DIR or ./cpsfog-out)")
    r.add_argument("--duration-override", help="e.g. 2h, 30min")
    r.set_defaults(fn=cmd_run)

    v = sub.add_parser("validate", help="check a scenario file without running it")
    v.add_argument("--scenario", required=True)
    v.set_defaults(fn=cmd_validate)

    c = sub.add_parser("compare", help="run one scenario under several feature-toggle sets")
    c.add_argument("--scenario", required=True)
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.add_argument("--duration-override")
    c.add_argument("--toggles", nargs="+", metavar="SET",
                   help='toggle sets such as "context_reuse=off" "context_reuse=on"')
    c.set_defaults(fn=cmd_compare)

    m = sub.add_parser("report", help="re-aggregate metrics from a trace and its truth sidecar")
    m.add_argument("--trace", required=True)
    m.add_argument("--truth", required=True)
    m.add_argument("--out")
    m.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as e:
        for msg in e.errors:
            print(f"invalid: {msg}", file=sys.stderr)
        return INVALID
    except ParseError as e:
        print(f"invalid: {e}", file=sys.stderr)
        return INVALID
    except (SimError, OSError, ValueError, KeyError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return RUNTIME
