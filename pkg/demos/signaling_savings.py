"""How much signaling does stored-context reuse save on a smart-meter day?

Runs scenarios/smartgrid_day.yaml with context reuse off and on and prints
the C-SGN totals next to the saving predicted from the reuse counts.

    python3 demos/signaling_savings.py
"""

from pathlib import Path

from cpsfog.config import parse_scenario
from cpsfog.simulation import Simulation
from cpsfog.trace import MemoryTrace

SCENARIO = Path(__file__).resolve().parent.parent / "scenarios" / "smartgrid_day.yaml"


def total_signaling(sim) -> int:
    return sum(sim.network.csgn.totals[c][0] for c in sim.cfg.cell_ids())


def main():
    cfg = parse_scenario(SCENARIO)
    runs = {}
    for reuse in (False, True):
        trace = MemoryTrace()
        sim = Simulation(cfg.with_features(context_reuse=reuse), trace)
        sim.run()
        runs[reuse] = (sim, trace)
    off, on = total_signaling(runs[False][0]), total_signaling(runs[True][0])
    n_reuse = len(runs[True][1].of("svc_req"))
    sec = cfg.security
    print(f"devices: {sum(g.count for g in cfg.devices)}, reports: {runs[True][0].stats['reports']}")
    print(f"signaling without reuse: {off} messages")
    print(f"signaling with reuse:    {on} messages")
    print(f"saved {off - on}; predicted {n_reuse} service requests x ({sec.n_full} - {sec.n_reuse}) "
          f"= {n_reuse * (sec.n_full - sec.n_reuse)}")


if __name__ == "__main__":
    main()
