import json

import pytest

from cpsfog.defense import (
    IMPLAUSIBLE, PLAUSIBLE, Alarm, EwmaBaseline, PlausibilityModel, ResponsePolicy, recheck, respond_or_report,
    std_floor,
)
from cpsfog.engine import HOUR, MINUTE, RngStream
from cpsfog.errors import ModelNotBootstrapped, NoPeerGroup, RegistryDesync
from cpsfog.traffic import MeasurementProcess
from conftest import run_sim, scenario

PLC = """
    seed: 3
    duration: 3h
    topology: {cells: 2}
    devices:
      - {domain: ICS, count: 3, prefix: plc-, peer_group: water, mission_critical: true, cells: [cell0]}
      - {domain: ICS, count: 2, prefix: pump-, peer_group: gas, cells: [cell1]}
      - {domain: SmartGrid, count: 4, prefix: meter-}
    attacks:
      - {kind: CompromiseDevice, targets: [plc-0], start: 30min, end: 3h}
"""


def _bootstrapped(values=None, **kw):
    m = PlausibilityModel("d", **kw)
    for v in values or [10.0, 10.2] * 10:
        with pytest.raises(ModelNotBootstrapped):
            m.check(v)
    return m


def test_plausibility_bootstrap_then_verdicts():
    m = _bootstrapped()
    assert m.ready and m.estimate == pytest.approx(10.1)
    assert m.check(10.1) == PLAUSIBLE


def test_ten_sigma_bias_is_flagged_on_the_first_report():
    proc = MeasurementProcess(RngStream(4, "m"), 21.0, 1.0)
    m = _bootstrapped([proc.next() for _ in range(20)])
    assert m.check(proc.next() + 10.0) == IMPLAUSIBLE
    assert m.frozen
    est = m.estimate
    m.check(21.0)
    assert m.estimate == est  # frozen models stop learning


def test_plausibility_parameters_are_checked():
    with pytest.raises(ValueError):
        PlausibilityModel("d", smoothing=0)
    with pytest.raises(ValueError):
        PlausibilityModel("d", tolerance_multiplier=-1)


def test_ewma_baseline_seeds_then_tracks():
    b = EwmaBaseline(alpha=0.5, warm=2)
    b.update(10)
    b.update(20)
    assert b.ready and b.mean == 15 and b.std == 5
    b.update(15)
    assert b.mean == 15
    assert std_floor(0.2) == 1.0 and std_floor(100) == 10.0
    with pytest.raises(ValueError):
        EwmaBaseline(alpha=0)


def test_recheck_uses_evidence_only():
    a = Alarm("SignalingStorm", "c0", 0, {"signaling_msgs": 200, "baseline_mean": 100, "baseline_std": 5,
                                          "std_floor": 10, "k": 6}, "controller")
    assert recheck(a)
    a.evidence["signaling_msgs"] = 150
    assert not recheck(a)
    assert recheck({"kind": "DoS", "evidence": {"cells": ["a", "b"], "min_cells": 2}})


def test_storm_alarm_names_every_storming_cell_and_dos():
    sim, trace, _ = run_sim("""
        seed: 2
        duration: 3h
        topology: {cells: 3}
        devices: [{domain: SmartHome, count: 300}]
        attacks:
          - {kind: CompromiseDevice, targets: {group: smarthome-, count: 20}, start: 1h, end: 3h}
          - {kind: SignalingStorm, targets: {group: smarthome-, count: 20}, start: 2h, end: 2h10min}
    """)
    storms = [a for a in sim.alarms if a.kind == "SignalingStorm"]
    assert sorted(a.scope for a in storms) == ["cell0", "cell1", "cell2"]
    assert all(a.raised_at == 2 * HOUR + 5 * MINUTE for a in storms)
    assert all(a.evidence["window_start"] == 2 * HOUR for a in storms)
    dos = [a for a in sim.alarms if a.kind == "DoS"]
    assert len(dos) == 1 and dos[0].evidence["cells"] == ["cell0", "cell1", "cell2"]
    assert all(recheck(a) for a in sim.alarms)


JAM = """
    seed: 6
    duration: 3h
    topology: {cells: 2}
    devices: [{domain: %s, count: 40}]
    attacks: [{kind: Jamming, targets: [cell1], start: 1h50min, end: 2h10min, params: {mode: %s}}]
"""


def test_smart_jamming_alarm_says_signaling_normal():
    # stored-context devices still send their service requests
    sim, trace, _ = run_sim(JAM % ("ICS", "uplink_data_only_outage"))
    jams = [a for a in sim.alarms if a.kind == "Jamming"]
    assert [a.scope for a in jams] == ["cell1"]
    assert jams[0].evidence["mode"] == "signaling normal, data absent"
    assert 110 * MINUTE < jams[0].raised_at <= 115 * MINUTE
    assert recheck(jams[0])


def test_smart_jamming_silences_nas_only_devices():
    # small data rides on signaling, so nothing at all gets through
    sim, trace, _ = run_sim(JAM % ("SmartHealthcare", "uplink_data_only_outage"))
    jams = [a for a in sim.alarms if a.kind == "Jamming"]
    assert [a.scope for a in jams] == ["cell1"]
    assert jams[0].evidence["mode"] == "all traffic ceased"


def test_one_jamming_alarm_per_episode():
    # meters report every 30 min, so some stay silent long after the jam ends
    sim, _, _ = run_sim(JAM.replace("count: 40", "count: 80") % ("SmartGrid", "uplink_data_only_outage"))
    jams = [a for a in sim.alarms if a.kind == "Jamming"]
    assert [a.scope for a in jams] == ["cell1"]
    assert 110 * MINUTE < jams[0].raised_at <= 115 * MINUTE


def test_full_outage_alarm_and_unreachable_attestation():
    sim, trace, _ = run_sim(JAM % ("SmartHealthcare", "full_outage"))
    jams = [a for a in sim.alarms if a.kind == "Jamming"]
    assert [a.scope for a in jams] == ["cell1"]
    assert jams[0].evidence["mode"] == "all traffic ceased"
    unreachable = [r for r in trace.of("attest") if r["result"] == "unreachable"]
    assert len(unreachable) == 20  # every device in cell1 at the 2h round
    assert all(r["at"] == 2 * HOUR for r in unreachable)


V2V = """
    seed: 8
    duration: 100min
    topology: {cells: 1}
    devices: [{domain: ITS, count: 10}]
    congestion: [{cells: [cell0], start: 75min, end: 95min, load_multiplier: 3, flagged: %s}]
"""


def test_flagged_congestion_raises_no_v2v_alarm():
    sim, _, _ = run_sim(V2V % "true")
    assert [a for a in sim.alarms if a.kind == "V2VAnomaly"] == []


def test_unflagged_congestion_raises_exactly_one_v2v_alarm():
    sim, _, _ = run_sim(V2V % "false")
    v2v = [a for a in sim.alarms if a.kind == "V2VAnomaly"]
    assert len(v2v) == 1 and v2v[0].scope == "cell0"
    assert recheck(v2v[0])


def test_peer_isolation_spares_the_compromised_device():
    sim, trace, _ = run_sim(PLC)
    ctrl = sim.controller
    assert [a.scope for a in sim.alarms if a.kind == "AttestationFailure"] == ["plc-0"]
    suspended = {a.device for a in ctrl.actions if a.kind == "suspend"}
    assert suspended == {"plc-1", "plc-2"}
    assert not sim.network.devices["plc-0"].suspended
    assert all(a.device != "plc-0" for a in ctrl.actions if a.kind in ("suspend", "revoke"))
    # other groups and domains are untouched
    assert not any(d.suspended for d in sim.network.devices.values() if not d.id.startswith("plc"))
    n = len(ctrl.actions)
    ctrl.respond_isolate_peers("plc-0", ResponsePolicy(report=False))
    assert len(ctrl.actions) == n


def test_no_peer_group_reports_only():
    sim, _, _ = run_sim(PLC.replace("plc-0]", "meter-0]"))
    acts = sim.controller.actions
    assert [(a.kind, a.device) for a in acts] == [("report", "meter-0")]
    with pytest.raises(NoPeerGroup):
        respond_or_report(sim.controller, "meter-0")


def test_registry_averages_match_trace():
    sim, trace, _ = run_sim("""
        seed: 12
        duration: 2h
        topology: {cells: 2}
        devices: [{domain: SmartHome, count: 600}, {domain: SmartGrid, count: 400}]
    """)
    domain = {r["node"]: r["domain"] for r in trace.of("attach")}
    live: dict[str, int] = {}
    samples: dict[str, list[int]] = {"SmartHome": [], "SmartGrid": []}
    for r in trace.rows:
        if r["kind"] == "ctx_created" and r["ctx"] == "NAS":
            d = domain[r["node"]]
            live[d] = live.get(d, 0) + 1
        elif r["kind"] == "ctx_removed" and r["ctx"] == "NAS":
            d = domain[r["node"]]
            live[d] -= 1
        elif r["kind"] == "load":
            for d in samples:
                samples[d].append(live.get(d, 0))
    expect = {d: sum(v) / len(v) for d, v in sorted(samples.items())}
    got = sim.controller.average_authenticated()
    assert got == pytest.approx(expect)
    assert got["SmartHome"] > 0 and got["SmartGrid"] > 0


def test_registry_audit_detects_drift():
    sim, _, _ = run_sim(PLC)
    sim.controller.audit()
    next(iter(sim.controller.registry.values())).reuse_counter += 1
    with pytest.raises(RegistryDesync):
        sim.controller.audit()


def test_disjoint_cloudlets_each_device_hears_one():
    sim, trace, _ = run_sim("""
        duration: 90min
        topology:
          cells: 4
          cloudlets: [{id: west, cells: [cell0, cell1]}, {id: east, cells: [cell2, cell3]}]
        devices: [{domain: SmartGrid, count: 40}]
    """)
    assert all(len(h) == 1 for h in sim.heard.values()) and len(sim.heard) == 40
    hourly = [r for r in trace.of("broadcast") if r["at"] == HOUR]
    assert sorted(r["node"] for r in hourly) == ["east", "west"]
    assert sum(r["devices"] for r in hourly) == 40


def test_overlapping_cloudlets_are_rejected():
    from cpsfog.errors import ValidationError
    with pytest.raises(ValidationError, match="covered by both"):
        scenario("""
            topology:
              cells: 2
              cloudlets: [{id: a, cells: [cell0, cell1]}, {id: b, cells: [cell1]}]
        """)


def test_system_state_report():
    sim, _, _ = run_sim(PLC)
    rep = sim.controller.report_system_state()
    data = json.loads(rep.to_json())
    assert data["isolated"] == ["plc-1", "plc-2"]
    assert data["suspect"] == ["plc-0"]
    assert data["device_states"] == {"clean": 6, "suspect": 1, "isolated": 2}


def test_identity_age_alarm_without_rotation():
    sim, _, _ = run_sim("""
        duration: 3h
        topology: {cells: 1}
        devices: [{domain: SmartGrid, count: 3}]
        defense: {identity_age_limit: 1h}
    """, identity_rotation=False)
    risk = [a for a in sim.alarms if a.kind == "TrackingRisk"]
    assert [a.scope for a in risk] == ["SmartGrid"]
    assert recheck(risk[0])


def test_fog_off_raises_nothing():
    sim, _, _ = run_sim(PLC, fog_defense=False)
    assert sim.alarms == [] and sim.controller.actions == []
