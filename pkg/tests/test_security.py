import copy

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cpsfog.errors import (
    AuthFailure, ContextExpired, CounterReplay, NoContext, NoNasContext, NoStoredContext, NotAuthenticated,
    PacketTooLarge,
)
from cpsfog.security import AKA_FAILURE_MSGS, AS, NAS, SecurityManager
from conftest import Bench, run_sim


def test_aka_costs_n_full_messages_each(bench):
    bench.device()
    for _ in range(3):
        bench.sec.run_aka("d0")
    assert bench.net.totals("d0").signaling_msgs == 3 * 8
    assert bench.net.devices["d0"].energy_milli == 3 * 8 * 1000


def test_rogue_sim_fails_authentication(bench):
    bench.device(rogue=True)
    with pytest.raises(AuthFailure):
        bench.sec.run_aka("d0")
    assert bench.sec.sessions["d0"].state == "Failed"
    assert bench.sec.context("d0", NAS) is None
    assert bench.net.totals("d0").signaling_msgs == AKA_FAILURE_MSGS


def test_service_request_reuses_stored_context(bench):
    bench.device()
    nas, as_ = bench.sec.run_aka("d0")
    for i in range(1, 6):
        ctx = bench.sec.service_request_stored_context("d0")
        assert ctx is as_ and ctx.reuse_count == i
    assert bench.net.totals("d0").signaling_msgs == 8 + 5 * 3


def test_reuse_needs_a_live_context(bench):
    bench.device()
    with pytest.raises(NoStoredContext):
        bench.sec.service_request_stored_context("d0")
    bench.sec.run_aka("d0")
    bench.engine.now = bench.sec.as_validity
    with pytest.raises(ContextExpired):
        bench.sec.service_request_stored_context("d0")
    assert bench.sec.context("d0", AS) is None


def test_nas_only_path_creates_no_as_context(bench):
    bench.device(tech="NB-IoT", domain="SmartEnvironment")
    nas, as_ = bench.sec.run_aka("d0", nas_only=True)
    assert as_ is None and bench.sec.stats["as_created"] == 0
    bench.sec.nas_small_data_transfer("d0", 200)
    with pytest.raises(PacketTooLarge):
        bench.sec.nas_small_data_transfer("d0", 1_501)


def test_small_data_needs_nas_context(bench):
    bench.device(tech="NB-IoT")
    with pytest.raises(NoNasContext):
        bench.sec.nas_small_data_transfer("d0", 10)


def _state(sec, dev):
    return copy.deepcopy((sec.net[dev], sec.dev[dev]))


@pytest.mark.parametrize("n", [100, 1_000])
def test_replayed_uplink_packets_are_all_rejected(bench, n):
    bench.device()
    bench.sec.run_aka("d0")
    captured = []
    for _ in range(n):
        pkt = bench.sec.protect_uplink("d0", AS, 100, "stored_context_data")
        bench.sec.receive_uplink(pkt)
        captured.append(pkt)
    before = _state(bench.sec, "d0")
    rejected = accepted = 0
    for pkt in captured:
        try:
            bench.sec.receive_uplink(pkt)
            accepted += 1
        except CounterReplay:
            rejected += 1
    assert (accepted, rejected) == (0, n)
    assert _state(bench.sec, "d0") == before
    assert len(bench.trace.of("ctr_reject")) == n


def test_replayed_downlink_is_rejected(bench):
    bench.device()
    bench.sec.run_aka("d0")
    pkt = bench.sec.protect_downlink("d0", AS, 64, "command")
    bench.sec.receive_downlink(pkt)
    with pytest.raises(CounterReplay):
        bench.sec.receive_downlink(pkt)


def test_counter_rule(bench):
    bench.device()
    nas, _ = bench.sec.run_aka("d0")
    nas.uplink_counter = 5
    assert not bench.sec.verify_counter(nas, "up", 5)
    assert not bench.sec.verify_counter(nas, "up", 4)
    assert bench.sec.verify_counter(nas, "up", 9)
    assert nas.uplink_counter == 9


@given(st.lists(st.integers(0, 50), max_size=40))
def test_accepted_counters_strictly_increase(counters):
    bench = Bench()
    bench.device()
    nas, _ = bench.sec.run_aka("d0")
    accepted = [c for c in counters if bench.sec.verify_counter(nas, "up", c)]
    assert accepted == sorted(set(accepted))
    assert nas.uplink_counter == max([0, *counters])


def test_packets_from_an_old_key_are_rejected(bench):
    bench.device()
    bench.sec.run_aka("d0")
    old = bench.sec.protect_uplink("d0", AS, 10, "stored_context_data")
    bench.sec.run_aka("d0")
    with pytest.raises(CounterReplay):
        bench.sec.receive_uplink(old)


def test_expire_and_revoke(bench):
    bench.device()
    bench.sec.run_aka("d0")
    bench.sec.expire_or_revoke("d0", AS, "timer")
    bench.sec.expire_or_revoke("d0", NAS, "revocation")
    assert bench.sec.stats["expired"] == 1 and bench.sec.stats["revoked"] == 1
    with pytest.raises(NoContext):
        bench.sec.expire_or_revoke("d0", NAS, "revocation")


def test_ten_rotations_give_eleven_tokens(bench):
    bench.device()
    bench.sec.run_aka("d0")  # one rotation
    for _ in range(9):
        bench.sec.rotate_temporary_identity("d0")
    rows = bench.trace.of("tmsi")
    tokens = {rows[0]["old"]} | {r["new"] for r in rows}
    assert len(rows) == 10 and len(tokens) == 11


def test_rotation_requires_authentication(bench):
    bench.device()
    with pytest.raises(NotAuthenticated):
        bench.sec.rotate_temporary_identity("d0")


def test_rotation_can_be_disabled():
    b = Bench(rotate_identity=False)
    dev = b.device()
    tok = dev.current_temporary_id
    b.sec.run_aka("d0")
    assert dev.current_temporary_id == tok


def test_handover_drops_the_stored_as_context(bench):
    dev = bench.device()
    bench.sec.run_aka("d0")
    bench.net.handover(dev, "c1")
    assert bench.sec.context("d0", AS) is None
    assert bench.sec.context("d0", NAS) is not None


def test_reuse_ordering_is_enforced(bench):
    with pytest.raises(ValueError):
        SecurityManager(bench.net, n_full=3, n_reuse=3)


def test_reuse_saving_matches_formula():
    text = """
        seed: 4
        duration: 24h
        topology: {cells: 2}
        devices: [{domain: SmartGrid, count: 20}]
    """
    on, t_on, _ = run_sim(text)
    off, t_off, _ = run_sim(text, context_reuse=False)
    reuse = len(t_on.of("svc_req"))
    sig_on = on.network.csgn.totals["cell0"][0] + on.network.csgn.totals["cell1"][0]
    sig_off = off.network.csgn.totals["cell0"][0] + off.network.csgn.totals["cell1"][0]
    assert sig_off - sig_on == reuse * (8 - 3)
    # registration runs the AKA, so all 48 sends of the day reuse it
    assert reuse == 20 * 48
