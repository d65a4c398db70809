import dataclasses
import statistics

import pytest

from cpsfog.engine import MINUTE, RngStream
from cpsfog.traffic import DEFAULT_PROFILES, AdversaryObservation, AttackSpec, MeasurementProcess, TrafficProfile
from conftest import run_sim

STORM = """
    seed: 9
    duration: 2h
    topology: {cells: 1}
    devices: [{domain: SmartHome, count: 100}]
    attacks:
      - {kind: CompromiseDevice, targets: {group: smarthome-, count: 20}, start: 30min, end: 2h}
      - {kind: SignalingStorm, targets: {group: smarthome-, count: 20}, start: 1h, end: 1h10min,
         params: {multiplier: 100}}
"""


def test_smart_grid_day_has_48_reports_per_device():
    sim, trace, _ = run_sim("""
        duration: 24h
        topology: {cells: 1}
        devices: [{domain: SmartGrid, count: 5}]
    """)
    reports = trace.of("report")
    assert len(reports) == 5 * 48
    by_dev = {}
    for r in reports:
        by_dev.setdefault(r["node"], []).append(r["at"])
    for times in by_dev.values():
        assert {b - a for a, b in zip(times, times[1:])} == {30 * MINUTE}
    assert all(20_000 <= r["bytes"] <= 200_000 for r in reports)


def test_profile_validation():
    with pytest.raises(ValueError):
        TrafficProfile("X", (10, 5), (1, 1), "nas_small_data")
    with pytest.raises(ValueError):
        TrafficProfile("X", (1, 5), (1, 1), "carrier_pigeon")
    with pytest.raises(ValueError):
        dataclasses.replace(DEFAULT_PROFILES["ICS"], measure_persistence=1.0)
    with pytest.raises(ValueError):
        AttackSpec("Tracking", [], 10, 10)
    with pytest.raises(ValueError):
        AttackSpec("Teleport", [], 0, 10)


def test_measurement_process_is_stationary():
    p = MeasurementProcess(RngStream(0, "m"), 5.0, 2.0, persistence=0.5)
    xs = [p.next() for _ in range(20_000)]
    assert abs(statistics.fmean(xs) - 5.0) < 0.1
    assert abs(statistics.pstdev(xs) - 2.0) < 0.1


def test_storm_raises_cell_signaling_to_expected_level():
    sim, trace, truth = run_sim(STORM)
    loads = {r["start"]: r["cells"]["cell0"][0] for r in trace.of("load")}
    benign = loads[45 * MINUTE]
    # each compromised device adds (multiplier - 1) packets per benign interval
    extra = 20 * 99 * 5 / 15
    for start in (60 * MINUTE, 65 * MINUTE):
        assert loads[start] == pytest.approx(benign + extra, rel=0.05)
    assert loads[75 * MINUTE] == pytest.approx(benign, abs=3)


def test_storm_traffic_is_cryptographically_valid_and_bounded():
    sim, trace, truth = run_sim(STORM)
    assert trace.of("ctr_reject") == []
    storm = truth.of("storm_tx")
    assert storm and all(60 * MINUTE <= r["at"] <= 70 * MINUTE for r in storm)
    assert sim.adversary.storm_tx == len(storm)


def test_storm_needs_compromised_targets():
    from cpsfog.errors import ValidationError
    from conftest import scenario
    with pytest.raises(ValidationError, match="not compromised"):
        scenario(STORM.replace("start: 30min", "start: 1h30min"))


def test_zero_bias_falsification_is_never_flagged():
    sim, trace, truth = run_sim("""
        seed: 1
        duration: 12h
        topology: {cells: 1}
        devices: [{domain: ICS, count: 1, id: plc}]
        attacks:
          - {kind: CompromiseDevice, targets: [plc], start: 1min, end: 12h, params: {evasion_p: 1}}
          - {kind: FalsifiedMeasurement, targets: [plc], start: 2min, end: 12h, params: {bias: 0}}
    """)
    assert len(truth.of("falsified")) > 100
    assert [a for a in sim.alarms if a.kind == "ImplausibleState"] == []


def test_constant_mode_has_zero_variance():
    sim, trace, truth = run_sim("""
        duration: 3h
        topology: {cells: 1}
        devices: [{domain: ICS, count: 1, id: plc}]
        attacks:
          - {kind: CompromiseDevice, targets: [plc], start: 1min, end: 3h}
          - {kind: FalsifiedMeasurement, targets: [plc], start: 2min, end: 3h,
             params: {mode: constant, value: 4.2}}
    """)
    values = [r["value"] for r in truth.of("falsified")]
    assert len(values) > 30 and statistics.pvariance(values) == 0.0


def test_five_unauthorized_commands_give_five_flags():
    sim, trace, truth = run_sim("""
        duration: 2h
        topology: {cells: 1}
        devices: [{domain: ICS, count: 2}]
        servers: [scada]
        attacks:
          - {kind: CompromiseDevice, targets: [scada], start: 10min, end: 2h}
          - {kind: UnauthorizedCommand, targets: [ics-0, ics-1], start: 30min, end: 40min,
             params: {commands: ["actuate:open", "actuate:close"], count: 5}}
    """)
    flags = [r for r in truth.of("command") if r["unauthorized"]]
    assert len(flags) == 5
    assert len(trace.of("cmd")) == 5


def test_attestation_evasion_is_binomial():
    sim, trace, truth = run_sim("""
        duration: 1min
        topology: {cells: 1}
        devices: [{domain: ICS, count: 1, id: plc}]
    """)
    sim.adversary.evasion["plc"] = 0.5
    fails = sum(not sim.adversary.attestation_response_valid("plc", True) for _ in range(1_000))
    # 3 standard deviations of Binomial(1000, 0.5)
    assert abs(fails - 500) <= 3 * (1_000 * 0.25) ** 0.5
    assert sim.adversary.attestation_response_valid("plc", False)


def test_benign_run_is_clean():
    sim, trace, truth = run_sim("""
        duration: 2h
        topology: {cells: 2}
        devices: [{domain: SmartHome, count: 10}, {domain: ICS, count: 4}, {domain: SmartGrid, count: 4}]
    """)
    kinds = {r["kind"] for r in truth.rows}
    assert kinds <= {"identity"}
    assert trace.of("ctr_reject") == []


def test_observations_carry_no_secrets():
    names = {f.name for f in dataclasses.fields(AdversaryObservation)}
    assert names == {"time", "cell", "observed_token", "message_class"}
    sim, trace, truth = run_sim("""
        duration: 2min
        topology: {cells: 2}
        devices: [{domain: ITS, count: 3, speed: 100}]
        attacks: [{kind: Tracking, targets: [cell0, cell1], start: 0, end: 2min}]
    """)
    assert sim.observations
    imsis = {d.permanent_id for d in sim.network.devices.values()}
    keys = {c.key_id for ctxs in sim.security.net.values() for c in ctxs.values()}
    for o in sim.observations:
        assert o.observed_token not in imsis | keys
        assert o.observed_token.startswith("T")
