import time

import pytest

from cpsfog.errors import AlreadyAttached, CapacityExceeded, Jammed, NotAttached, SameCell, UnknownScope
from cpsfog.network import (
    DATA, DATA_ONLY_OUTAGE, FULL_OUTAGE, SIGNALING, Device, mean_handover_interval_ms, serialization_ms,
)
from conftest import Bench, run_sim


def _fill(bench, tech, n):
    net = bench.net
    t = net.techs[tech]
    for i in range(n):
        net.attach_device(net.add_device(Device(f"{tech}-{i}", "SmartEnvironment", t, f"I{i}")), "c0")


@pytest.mark.parametrize("tech,cap", [("NB-IoT", 52_547), ("EC-GSM-IoT", 50_000)])
def test_sector_capacity_boundary(tech, cap):
    bench = Bench(techs=(tech,), cells=("c0",))
    t0 = time.perf_counter()
    _fill(bench, tech, cap)
    assert bench.net.attached_count("c0") == cap
    extra = bench.net.add_device(Device("extra", "SmartEnvironment", bench.net.techs[tech], "Ix"))
    with pytest.raises(CapacityExceeded):
        bench.net.attach_device(extra, "c0")
    assert bench.net.attached_count("c0") == cap
    assert bench.net.rejections["c0"] == 1
    assert time.perf_counter() - t0 < 10


def test_serialization_delay_nb_iot():
    assert serialization_ms(6_250, 50_000) == 1_000
    bench = Bench(techs=("NB-IoT",), cells=("c0",))
    dev = bench.device(tech="NB-IoT")
    out = bench.net.transmit_uplink(dev, 6_250, DATA)
    assert out.latency == 1_000 + dev.tech.access_delay
    assert out.status == "Delivered"


def test_deadline_missed_when_latency_exceeds_budget():
    bench = Bench(techs=("NB-IoT",), cells=("c0",))
    dev = bench.device(tech="NB-IoT")
    assert bench.net.transmit_uplink(dev, 6_250, DATA, deadline=500).status == "DeadlineMissed"


def test_attach_and_detach_errors(bench):
    dev = bench.device()
    with pytest.raises(AlreadyAttached):
        bench.net.attach_device(dev, "c1")
    with pytest.raises(SameCell):
        bench.net.handover(dev, "c0")
    bench.net.detach_device(dev)
    with pytest.raises(NotAttached):
        bench.net.detach_device(dev)
    with pytest.raises(NotAttached):
        bench.net.transmit_uplink(dev, 10)


def test_handover_moves_device_and_requests_one_aka(bench):
    seen = []
    bench.engine.on("aka_invoke", lambda ev: seen.append(ev.target))
    dev = bench.device()
    res = bench.net.handover(dev, "c1")
    bench.engine.run_until(1)
    assert (res.from_cell, res.to_cell) == ("c0", "c1")
    assert dev.attached_cell == "c1" and bench.net.attached_count("c0") == 0
    assert seen == ["d0"]


def test_mean_handover_interval_at_250_kmh():
    assert mean_handover_interval_ms(250, 1000) == pytest.approx(14_400)
    sim, trace, _ = run_sim("""
        seed: 2
        duration: 10min
        topology: {cells: 5}
        devices: [{domain: ITS, count: 1, speed: 250}]
    """)
    moves = [r["at"] for r in trace.of("handover")]
    gaps = {b - a for a, b in zip(moves, moves[1:])}
    assert gaps == {14_400}
    handover_akas = [r for r in trace.of("aka") if r["cause"] == "handover"]
    assert len(handover_akas) == len(moves)


def test_smart_jamming_blocks_data_only(bench):
    dev = bench.device()
    bench.net.apply_jamming("c0", DATA_ONLY_OUTAGE, 1_000)
    bench.net.check_radio(dev, SIGNALING)
    with pytest.raises(Jammed):
        bench.net.check_radio(dev, DATA)
    bench.sec.run_aka("d0")  # signaling still goes through
    bench.engine.run_until(1_000)
    bench.net.check_radio(dev, DATA)


def test_full_outage_blocks_everything(bench):
    dev = bench.device()
    bench.net.apply_jamming("c0", FULL_OUTAGE, 1_000)
    for cls in (SIGNALING, DATA):
        with pytest.raises(Jammed):
            bench.net.check_radio(dev, cls)
    with pytest.raises(ValueError):
        bench.net.apply_jamming("c0", "loud", 10)


def test_one_small_data_packet_counts_one_signaling_message():
    bench = Bench(techs=("NB-IoT",), cells=("c0",))
    bench.device(tech="NB-IoT", domain="SmartEnvironment")
    bench.sec.run_aka("d0", nas_only=True)
    before = bench.net.totals("c0").signaling_msgs
    pkt = bench.sec.nas_small_data_transfer("d0", 120)
    bench.net.count_data(bench.net.devices["d0"], pkt.nbytes)
    tot = bench.net.totals("c0")
    assert tot.signaling_msgs - before == 1
    assert (tot.data_msgs, tot.data_bytes) == (1, 120)


def test_per_cell_window_counters():
    sim, trace, _ = run_sim("""
        duration: 30min
        topology: {cells: 1}
        devices: [{domain: SmartEnvironment, count: 10}]
        traffic:
          profiles: {SmartEnvironment: {report_interval: [10min, 10min]}}
    """)
    net = sim.network
    assert net.totals("cell0").data_msgs == sum(1 for r in trace.of("deliver") if r["cell"] == "cell0")
    loads = trace.of("load")
    assert sum(r["cells"]["cell0"][1] for r in loads) == net.totals("cell0").data_msgs
    with pytest.raises(UnknownScope):
        net.snapshot_load("nowhere")


def test_ten_devices_two_packets_each():
    bench = Bench(techs=("NB-IoT",), cells=("c0",))
    for i in range(10):
        bench.device(f"d{i}", tech="NB-IoT", domain="SmartEnvironment")
        bench.sec.run_aka(f"d{i}", nas_only=True)
    for _ in range(2):
        for i in range(10):
            pkt = bench.sec.nas_small_data_transfer(f"d{i}", 50)
            bench.net.count_data(bench.net.devices[f"d{i}"], pkt.nbytes)
    bench.engine.now = bench.net.window
    bench.net.roll_window()
    assert bench.net.snapshot_load("c0").data_msgs == 20
