"""Wires the engine, network, security, traffic, adversary and fog layers.

One :class:`Simulation` is one scenario run. All state changes happen in
event handlers registered here, in (at, seq) order.
"""

from __future__ import annotations

import math

from .config import ScenarioConfig
from .defense import Alarm, Cloudlet, Controller, ResponsePolicy
from .engine import Engine, RngFactory
from .errors import (
    AuthFailure,
    CapacityExceeded,
    ContextExpired,
    CounterReplay,
    Jammed,
    ModelNotBootstrapped,
    NoNasContext,
    NoStoredContext,
    NotAttached,
)
from .network import DATA, SIGNALING, Device, NetworkModel, mean_handover_interval_ms
from .security import AS, NAS, SecurityManager, token
from .traffic import (
    NAS_SMALL_DATA,
    STORED_CONTEXT_DATA,
    Adversary,
    AdversaryObservation,
    Measurement,
    TrafficGenerator,
)
from .trace import NullTrace

COMMAND_BYTES = 64


class Simulation:
    def __init__(self, cfg: ScenarioConfig, trace=None, truth=None, keep_observations: bool = True):
        self.cfg = cfg
        self.engine = Engine()
        self.rng = RngFactory(cfg.seed)
        self.trace = trace or NullTrace()
        self.truth = truth or NullTrace()
        self.trace.bind(self.engine)
        self.truth.bind(self.engine)
        self.features = dict(cfg.features)
        self.fog = self.features["fog_defense"]
        self.keep_observations = keep_observations
        self.observations: list[AdversaryObservation] = []
        self.alarms: list[Alarm] = []
        self.heard: dict[str, dict[str, tuple]] = {}
        self.identity_log: dict[str, list[str]] = {}
        self.servers = set(cfg.servers)
        self.stats = {"reports": 0, "sent": 0, "delivered": 0, "deadline_missed": 0, "jammed": 0,
                      "auth_failed": 0, "no_context": 0, "replay_rejected": 0, "commands": 0,
                      "handovers": 0, "handover_rejected": 0, "attach_rejected": 0}

        net = self.network = NetworkModel(self.engine, cfg.window, cfg.techs)
        for c in cfg.cells:
            net.add_cell(c.id, c.enb or f"enb-{c.id}", c.techs)
        sec = cfg.security
        self.security = SecurityManager(
            net, cfg.seed, sec.n_full, sec.n_reuse, sec.as_validity, sec.nas_validity,
            rotate_identity=self.features["identity_rotation"], packet_ceiling=sec.packet_ceiling,
            keep_as_on_handover=sec.keep_as_on_handover, trace=self.trace)
        self.security.identity_hooks.append(self._on_identity)

        p = cfg.defense
        self.policy = ResponsePolicy(p.response.isolate_peers, p.response.report)
        self.controller = Controller(self, p, detection=self.fog)
        self.security.listeners.append(self.controller.manage_context_registry)
        self.cloudlets: dict[str, Cloudlet] = {}
        if self.fog:
            for spec in cfg.cloudlets:
                cl = Cloudlet(self, spec.id, spec.cells, spec.services, p)
                self.cloudlets[spec.id] = cl
                if cl.offers("detection"):
                    for cell in spec.cells:
                        net.watchers[cell] = cl
        self.cloudlet_of = {cell: cl for cl in self.cloudlets.values() for cell in cl.covered_cells}

        self.traffic = TrafficGenerator(self, cfg.traffic.diurnal_amplitude, cfg.traffic.registration_lead)
        self.adversary = Adversary(self)
        self.peer_groups: dict[str, str] = {}
        self.peer_group_members: dict[str, list[str]] = {}
        self.crossing: dict[str, int] = {}

        eng = self.engine
        for kind, fn in (("attach", self.on_attach), ("report", self.on_report), ("deliver", self.on_deliver),
                         ("aka_invoke", self.on_aka_invoke), ("move", self.on_move),
                         ("window", self.on_window), ("jam_window", self.on_jam_window),
                         ("ctx_expiry", self.controller.on_expiry), ("attack", self.adversary.on_attack),
                         ("storm_tx", self.adversary.on_storm_tx), ("command", self.on_command),
                         ("cmd_deliver", self.on_cmd_deliver), ("attest", self.on_attest),
                         ("broadcast", self.on_broadcast), ("ctrl_notify", self.on_ctrl_notify)):
            eng.on(kind, fn)

        self._build_devices()
        self.adversary.schedule(cfg.attacks)
        eng.schedule(cfg.window, "csgn", "window")
        if self.fog:
            if any(cl.offers("detection") for cl in self.cloudlets.values()):
                eng.schedule(p.jam_window, "cloudlets", "jam_window")
            for cl in self.cloudlets.values():
                eng.schedule(0, cl.id, "broadcast")
                if cl.offers("attestation"):
                    eng.schedule(p.attest_interval, cl.id, "attest")
            if self.servers:
                eng.schedule(p.attest_interval, "controller", "attest")

    # -- setup --------------------------------------------------------------

    def _build_devices(self) -> None:
        cfg = self.cfg
        net = self.network
        speeds = {}
        for dev_id, g, cell in cfg.placements():
            dev = Device(dev_id, g.domain, net.techs[g.tech], "I" + token(cfg.seed, dev_id, "imsi"),
                         speed=g.speed, peer_group=g.peer_group, mission_critical=g.mission_critical,
                         group=g.prefix)
            net.add_device(dev)
            self.security.provision(dev, rogue=g.rogue)
            self.traffic.add_device(dev, cfg.traffic.profiles[g.domain])
            if g.peer_group:
                self.peer_groups[dev_id] = g.peer_group
                self.peer_group_members.setdefault(g.peer_group, []).append(dev_id)
            if g.speed > 0:
                speeds[dev_id] = g.speed
            self.engine.schedule(self.traffic.attach_offset(dev_id), dev_id, "attach", cell)
        for dev_id, v in speeds.items():
            self.crossing[dev_id] = max(1, round(mean_handover_interval_ms(v, cfg.cell_size_m)))

    def _on_identity(self, dev_id: str, tok: str) -> None:
        self.identity_log.setdefault(dev_id, []).append(tok)
        self.truth.emit(dev_id, "identity", tok=tok)

    # -- helpers used by the traffic and defense modules ---------------------

    def congestion_multiplier(self, dev: Device, now: int) -> float:
        m = 1.0
        for c in self.cfg.congestion:
            if c.start <= now < c.end and dev.attached_cell in c.cells and dev.tech.name == "LTE-V2V":
                m *= c.load_multiplier
        return m

    def congestion_flag(self, cell: str, start: int, end: int) -> bool:
        return any(c.flagged and cell in c.cells and c.start < end and start < c.end for c in self.cfg.congestion)

    def notify_controller(self, alarm: Alarm) -> None:
        self.engine.schedule(self.engine.now + self.cfg.defense.controller_latency, "controller",
                             "ctrl_notify", alarm)

    def on_ctrl_notify(self, ev) -> None:
        self.controller.receive(ev.data)

    def desks(self):
        yield self.controller.desk
        for cl in self.cloudlets.values():
            yield cl.desk

    def observe(self, dev: Device, message_class: str) -> None:
        adv = self.adversary
        if not adv.tracking_cells:
            return
        cell = dev.attached_cell
        end = adv.tracking_cells.get(cell)
        if end is not None and self.engine.now <= end:
            tok = dev.current_temporary_id
            self.trace.emit(dev.id, "ota", cell=cell, tok=tok, cls=message_class)
            if self.keep_observations:
                self.observations.append(AdversaryObservation(self.engine.now, cell, tok, message_class))

    def _nas_only(self, dev: Device) -> bool:
        prof = self.traffic.state[dev.id].profile
        return prof.transport == NAS_SMALL_DATA and self.features["nas_small_data"]

    def _aka(self, dev: Device, nas_only: bool, cause: str) -> None:
        self.observe(dev, SIGNALING)
        self.security.run_aka(dev.id, nas_only=nas_only, cause=cause)

    def _hear(self, dev: Device) -> None:
        cl = self.cloudlet_of.get(dev.attached_cell)
        if cl is not None:
            self.heard.setdefault(dev.id, {})[cl.id] = tuple(cl.service_set)

    def _watch_reports(self, dev: Device) -> None:
        cl = self.cloudlet_of.get(dev.attached_cell)
        if cl is None or not cl.offers("detection"):
            return
        prof = self.traffic.state[dev.id].profile
        slow = 1.0 - min(self.cfg.traffic.diurnal_amplitude, 0.5)
        cl.interval_max[dev.id] = math.ceil(prof.report_interval[1] / slow)

    # -- device lifecycle ---------------------------------------------------

    def on_attach(self, ev) -> None:
        dev = self.network.devices[ev.target]
        if dev.suspended:
            return
        try:
            self.network.attach_device(dev, ev.data)
        except CapacityExceeded:
            self.stats["attach_rejected"] += 1
            self.trace.emit(dev.id, "attach_rejected", cell=ev.data)
            return
        self.trace.emit(dev.id, "attach", cell=ev.data, domain=dev.domain, tech=dev.tech.name)
        self._hear(dev)
        self._watch_reports(dev)
        try:
            self._aka(dev, self._nas_only(dev), "registration")
        except (AuthFailure, Jammed):
            self.stats["auth_failed"] += 1
        self.traffic.generate_traffic(dev)
        if dev.id in self.crossing:
            ct = self.crossing[dev.id]
            first = self.rng.stream(f"dev/{dev.id}/mobility").randint(1, ct)
            self.engine.schedule(self.engine.now + first, dev.id, "move")

    def on_move(self, ev) -> None:
        dev = self.network.devices[ev.target]
        if dev.suspended or dev.attached_cell is None:
            return
        old = dev.attached_cell
        to = self.network.next_cell(old)
        if to != old:
            try:
                self.network.handover(dev, to)
                self.stats["handovers"] += 1
                self.trace.emit(dev.id, "handover", frm=old, to=to)
                self._hear(dev)
                self._watch_reports(dev)
            except CapacityExceeded:
                self.stats["handover_rejected"] += 1
                self.trace.emit(dev.id, "handover_rejected", frm=old, to=to)
        self.engine.schedule(self.engine.now + self.crossing[dev.id], dev.id, "move")

    def on_aka_invoke(self, ev) -> None:
        dev = self.network.devices[ev.target]
        if dev.attached_cell is None:
            return
        try:
            self._aka(dev, self._nas_only(dev), ev.data or "handover")
        except (AuthFailure, Jammed):
            self.stats["auth_failed"] += 1

    # -- traffic ------------------------------------------------------------

    def on_report(self, ev) -> None:
        dev = self.network.devices[ev.target]
        if dev.suspended or dev.attached_cell is None:
            return
        st = self.traffic.state[dev.id]
        now = self.engine.now
        st.report_no += 1
        self.stats["reports"] += 1
        value, falsified = self.traffic.measurement(dev.id, st, now)
        size = self.traffic.draw_size(st)
        self.trace.emit(dev.id, "report", n=st.report_no, bytes=size)
        if falsified:
            self.truth.emit(dev.id, "falsified", n=st.report_no, value=value)
        self.send(dev, size, st.profile.transport, st.profile.deadline, st.report_no, value)
        nxt = now + self.traffic.next_interval(dev, st, now)
        st.next_at = nxt
        self.engine.schedule(nxt, dev.id, "report")

    def send_small_data(self, dev: Device, storm: bool = False) -> None:
        """One extra small-data packet, used by the storm adversary."""
        if dev.suspended or dev.attached_cell is None:
            return
        prof = self.traffic.state[dev.id].profile
        size = min(prof.report_size[0], self.cfg.security.packet_ceiling)
        self.send(dev, size, NAS_SMALL_DATA, prof.deadline, -1, None)

    def send(self, dev: Device, size: int, transport: str, deadline, report_no: int, value) -> None:
        if transport == NAS_SMALL_DATA and (not self.features["nas_small_data"]
                                           or size > self.cfg.security.packet_ceiling):
            transport = STORED_CONTEXT_DATA
        sec = self.security
        net = self.network
        self.stats["sent"] += 1
        try:
            if transport == NAS_SMALL_DATA:
                nas = sec.context(dev.id, NAS)
                if nas is None or nas.validity_deadline <= self.engine.now:
                    if nas is not None:
                        sec.expire_or_revoke(dev.id, NAS, "timer")
                    self._aka(dev, True, "data")
                self.observe(dev, SIGNALING)
                pkt = sec.nas_small_data_transfer(dev.id, size, report_no=report_no, value=value)
            else:
                if transport == STORED_CONTEXT_DATA and self.features["context_reuse"]:
                    try:
                        self.observe(dev, SIGNALING)
                        sec.service_request_stored_context(dev.id)
                    except (NoStoredContext, ContextExpired):
                        self._aka(dev, False, "data")
                else:
                    self._aka(dev, False, "data")
                net.check_radio(dev, DATA)
                self.observe(dev, DATA)
                pkt = sec.protect_uplink(dev.id, AS, size, transport, report_no=report_no, value=value)
                net.charge(dev, 0, size)
                self.trace.emit(dev.id, "tx", cell=dev.attached_cell, domain=dev.domain, bytes=size,
                                ctr=pkt.counter)
            out = net.transmit_uplink(dev, size, DATA, deadline)
        except Jammed:
            self.stats["jammed"] += 1
            self.trace.emit(dev.id, "tx_fail", cell=dev.attached_cell, reason="jammed")
            return
        except AuthFailure:
            self.stats["auth_failed"] += 1
            self.trace.emit(dev.id, "tx_fail", cell=dev.attached_cell, reason="auth")
            return
        except (NoNasContext, NoStoredContext, NotAttached):
            self.stats["no_context"] += 1
            self.trace.emit(dev.id, "tx_fail", cell=dev.attached_cell, reason="no_context")
            return
        ok = out.status == "Delivered"
        if ok:
            # the C-SGN checks key and counter when the transmission arrives at the air interface
            try:
                sec.receive_uplink(pkt)
            except CounterReplay:
                self.stats["replay_rejected"] += 1
                return
        self.engine.schedule(out.delivered_at, dev.id, "deliver", (pkt, ok, out.latency))

    def on_deliver(self, ev) -> None:
        pkt, ok, latency = ev.data
        dev = self.network.devices[pkt.device]
        if ok:
            self.stats["delivered"] += 1
            self.network.count_data(dev, pkt.nbytes, pkt.cell)
        else:
            self.stats["deadline_missed"] += 1
        self.trace.emit(dev.id, "deliver", cell=pkt.cell, domain=dev.domain, bytes=pkt.nbytes,
                        status="Delivered" if ok else "DeadlineMissed", latency=latency)
        if ok and pkt.value is not None and self.fog:
            cl = self.cloudlet_of.get(pkt.cell)
            if cl is not None and cl.offers("plausibility") and cl.device_knows(dev.id, "plausibility"):
                try:
                    cl.update_and_check_plausibility(Measurement(dev.id, self.engine.now, pkt.value))
                except ModelNotBootstrapped:
                    pass

    # -- commands -----------------------------------------------------------

    def on_command(self, ev) -> None:
        target, cmd = ev.data
        server = ev.target
        unauthorized = cmd not in self.cfg.command_whitelist
        self.stats["commands"] += 1
        self.truth.emit(server, "command", dev=target, cmd=cmd, unauthorized=unauthorized)
        dev = self.network.devices[target]
        sec = self.security
        try:
            kind = AS if sec.context(target, AS) is not None else NAS
            pkt = sec.protect_downlink(target, kind, COMMAND_BYTES, "command", command=cmd)
            out = self.network.transmit_downlink(dev, COMMAND_BYTES, DATA)
        except (NoNasContext, NoStoredContext, NotAttached, Jammed) as e:
            self.trace.emit(server, "cmd_fail", dev=target, reason=type(e).__name__)
            return
        self.engine.schedule(out.delivered_at, target, "cmd_deliver", (server, pkt))

    def on_cmd_deliver(self, ev) -> None:
        server, pkt = ev.data
        try:
            self.security.receive_downlink(pkt)
        except CounterReplay:
            return
        self.trace.emit(pkt.device, "cmd", server=server, cmd=pkt.command)

    # -- periodic jobs ------------------------------------------------------

    def on_window(self, ev) -> None:
        net = self.network
        ctrl = self.controller
        devices = net.devices
        auth: dict[str, int] = {}
        for dev_id, kind in ctrl.registry:
            if kind == NAS:
                cell = devices[dev_id].attached_cell
                if cell is not None:
                    auth[cell] = auth.get(cell, 0) + 1
        net.roll_window(auth)
        c = net.csgn
        self.trace.emit("csgn", "load", start=c.last_window_start,
                        cells={cell: c.last_window.get(cell, [0, 0, 0]) for cell in net.strip})
        ctrl.audit()
        ctrl.close_window()
        if self.fog:
            stats = {cell: net.snapshot_load(cell) for cell in net.strip}
            ctrl.detect_signaling_storm(stats)
            ctrl.check_identity_age()
            for cl in self.cloudlets.values():
                if not cl.offers("detection"):
                    continue
                for cell in sorted(cl.covered_cells):
                    if any(s.tech.name == "LTE-V2V" for s in net.cells[cell].sectors):
                        flag = self.congestion_flag(cell, c.last_window_start, self.engine.now)
                        cl.detect_v2v_anomaly(cell, net.snapshot_load(cell, tech="LTE-V2V"), flag)
        nxt = self.engine.now + self.cfg.window
        if nxt <= self.cfg.duration:
            self.engine.schedule(nxt, "csgn", "window")

    def on_jam_window(self, ev) -> None:
        for cl in self.cloudlets.values():
            if cl.offers("detection"):
                cl.detect_jamming()
        nxt = self.engine.now + self.cfg.defense.jam_window
        if nxt <= self.cfg.duration:
            self.engine.schedule(nxt, "cloudlets", "jam_window")

    def on_broadcast(self, ev) -> None:
        self.cloudlets[ev.target].broadcast_service_set()
        nxt = self.engine.now + self.cfg.defense.broadcast_interval
        if nxt <= self.cfg.duration:
            self.engine.schedule(nxt, ev.target, "broadcast")

    def on_attest(self, ev) -> None:
        if ev.target == "controller":
            self.controller.attest_servers()
        else:
            self.cloudlets[ev.target].attest_all()
        nxt = self.engine.now + self.cfg.defense.attest_interval
        if nxt <= self.cfg.duration:
            self.engine.schedule(nxt, ev.target, "attest")

    # -- running ------------------------------------------------------------

    def run(self, until: int | None = None) -> int:
        end = self.cfg.duration if until is None else until
        return self.engine.run_until(end)

    def truth_histories(self) -> dict[str, list[str]]:
        """Device -> temporary tokens in order of issue (evaluator-only)."""
        return {d: list(toks) for d, toks in self.identity_log.items()}
