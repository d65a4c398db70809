"""Walk through the alarms and responses of a mixed-attack afternoon.

Runs scenarios/mixed_attacks.yaml to a temporary directory, then prints the
alarm timeline, the controller's actions and the per-attack confusion counts.

    python3 demos/attack_afternoon.py [out_dir]
"""

import sys
import tempfile
from pathlib import Path

from cpsfog.config import parse_scenario
from cpsfog.runner import run_scenario

SCENARIO = Path(__file__).resolve().parent.parent / "scenarios" / "mixed_attacks.yaml"


def hhmm(ms: int) -> str:
    m = ms // 60_000
    return f"{m // 60:02d}:{m % 60:02d}"


def main(out_dir: str):
    summary = run_scenario(parse_scenario(SCENARIO), out_dir)
    rep = summary.metrics
    print(f"run {summary.run_id}: {summary.records} trace records in {summary.wall_seconds:.1f}s")
    print("\nalarms")
    for a in rep.alarms:
        lat = "-" if a["latency"] is None else f"{a['latency'] // 1000}s"
        print(f"  {hhmm(a['raised_at'])}  {a['kind']:<20} {a['scope']:<10} by {a['source']:<10} latency {lat}")
    print("\nconfusion per attack kind")
    for kind, row in rep.confusion.items():
        if row["positives"] or row["FP"]:
            print(f"  {kind:<22} TP {row['TP']}  FP {row['FP']}  FN {row['FN']}")
    print(f"\ncommands: {rep.commands}")
    print(f"outputs in {summary.out_dir}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="cpsfog-"))
