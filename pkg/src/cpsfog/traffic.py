"""Benign CPS traffic generation and the adversary models.

Each device gets a periodic report generator. Reports carry a measurement
drawn from a mean-reverting Gaussian walk. Attacks are scheduled from
:class:`AttackSpec` records and always act through the normal protocol
paths, so e.g. storm traffic is cryptographically valid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .engine import DAY, MINUTE, SECOND, RngStream
from .errors import NoCompromisedServer, TargetNotCompromised, UnknownDevice

NAS_SMALL_DATA = "nas_small_data"
STORED_CONTEXT_DATA = "stored_context_data"
FULL_SESSION = "full_session"
TRANSPORTS = (NAS_SMALL_DATA, STORED_CONTEXT_DATA, FULL_SESSION)

ATTACK_KINDS = ("SignalingStorm", "FalsifiedMeasurement", "UnauthorizedCommand",
                "Jamming", "Tracking", "CompromiseDevice")


@dataclass(frozen=True)
class TrafficProfile:
    domain: str
    report_size: tuple[int, int]  # bytes
    report_interval: tuple[int, int]  # ms
    transport: str
    deadline: int | None = None  # ms; None means the access tech's max latency
    measure_mean: float = 0.0
    measure_sigma: float = 1.0
    measure_persistence: float = 0.5

    def __post_init__(self):
        lo, hi = self.report_size
        if not 0 <= lo <= hi:
            raise ValueError(f"bad report_size range {self.report_size}")
        lo, hi = self.report_interval
        if not 0 < lo <= hi:
            raise ValueError(f"bad report_interval range {self.report_interval}")
        if self.transport not in TRANSPORTS:
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.measure_sigma < 0 or not 0 <= self.measure_persistence < 1:
            raise ValueError("measurement sigma must be >= 0 and persistence in [0, 1)")

    @property
    def mean_interval(self) -> float:
        return (self.report_interval[0] + self.report_interval[1]) / 2


# SmartGrid metering and the ITS latency budget follow published figures;
# the rest are representative picks.
DEFAULT_PROFILES: dict[str, TrafficProfile] = {
    "SmartGrid": TrafficProfile("SmartGrid", (20_000, 200_000), (30 * MINUTE, 30 * MINUTE),
                                STORED_CONTEXT_DATA, None, 1.2, 0.3),
    "ICS": TrafficProfile("ICS", (100, 1_000), (5 * MINUTE, 5 * MINUTE), STORED_CONTEXT_DATA,
                          SECOND, 5.0, 0.2),
    "ITS": TrafficProfile("ITS", (200, 300), (SECOND, SECOND), STORED_CONTEXT_DATA, 100, 90.0, 10.0),
    "SmartHealthcare": TrafficProfile("SmartHealthcare", (200, 1_000), (MINUTE, MINUTE),
                                      NAS_SMALL_DATA, SECOND, 72.0, 6.0),
    "SmartEnvironment": TrafficProfile("SmartEnvironment", (50, 500), (30 * MINUTE, 30 * MINUTE),
                                       NAS_SMALL_DATA, None, 21.0, 1.5),
    "SmartHome": TrafficProfile("SmartHome", (50, 500), (15 * MINUTE, 15 * MINUTE),
                                NAS_SMALL_DATA, None, 21.0, 1.0),
}

DEFAULT_TECH = {
    "SmartGrid": "eMTC",
    "ICS": "eMTC",
    "ITS": "LTE-V2V",
    "SmartHealthcare": "eMTC",
    "SmartEnvironment": "NB-IoT",
    "SmartHome": "EC-GSM-IoT",
}


class MeasurementProcess:
    """Mean-reverting Gaussian walk with stationary mean and sigma.

    ``x' = mean + rho*(x - mean) + sigma*sqrt(1 - rho^2)*eps``; with
    ``rho = 0`` the values are i.i.d. normal.
    """

    def __init__(self, rng: RngStream, mean: float, sigma: float, persistence: float = 0.5):
        self.rng = rng
        self.mean = mean
        self.sigma = sigma
        self.rho = persistence
        self._innov = sigma * math.sqrt(1.0 - persistence * persistence)
        self.value = rng.gauss(mean, sigma)

    def next(self) -> float:
        x = self.mean + self.rho * (self.value - self.mean) + self._innov * self.rng.gauss()
        self.value = x
        return x


@dataclass
class AttackSpec:
    kind: str
    targets: list[str]
    start: int
    end: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not self.start < self.end:
            raise ValueError(f"attack window needs start < end, got [{self.start}, {self.end}]")


@dataclass(frozen=True)
class AdversaryObservation:
    """What a passive radio listener sees: never keys, payloads or permanent ids."""

    time: int
    cell: str
    observed_token: str
    message_class: str


@dataclass(frozen=True)
class Measurement:
    device: str
    time: int
    value: float
    falsified: bool = False  # ground truth, evaluator-only


@dataclass
class DeviceTraffic:
    """Per-device generator state."""

    profile: TrafficProfile
    rng: RngStream
    process: MeasurementProcess
    report_no: int = 0
    rate_multiplier: float = 1.0
    falsify: tuple | None = None  # (mode, amount, until)
    next_at: int | None = None


class TrafficGenerator:
    """Schedules periodic report events for benign devices."""

    def __init__(self, sim, diurnal_amplitude: float = 0.0, registration_lead: int = SECOND):
        self.sim = sim
        self.diurnal_amplitude = diurnal_amplitude
        self.registration_lead = registration_lead
        self.state: dict[str, DeviceTraffic] = {}
        self.diurnal_phase = sim.rng.stream("traffic/diurnal").uniform(0.0, 2 * math.pi)

    def add_device(self, dev, profile: TrafficProfile) -> DeviceTraffic:
        rng = self.sim.rng.stream(f"dev/{dev.id}/traffic")
        proc = MeasurementProcess(self.sim.rng.stream(f"dev/{dev.id}/measure"),
                                  profile.measure_mean, profile.measure_sigma, profile.measure_persistence)
        st = DeviceTraffic(profile, rng, proc)
        self.state[dev.id] = st
        return st

    def attach_offset(self, dev_id: str) -> int:
        """Registration time, spread uniformly over the first report interval."""
        st = self.state[dev_id]
        span = max(st.profile.report_interval[0] - self.registration_lead, 1)
        return st.rng.randint(0, span - 1)

    def generate_traffic(self, dev, profile: TrafficProfile | None = None) -> int:
        """Start the report cadence for an attached device; returns first send time."""
        st = self.state[dev.id] if profile is None else self.add_device(dev, profile)
        first = self.sim.engine.now + self.registration_lead
        st.next_at = first
        self.sim.engine.schedule(first, dev.id, "report")
        return first

    def next_interval(self, dev, st: DeviceTraffic, now: int) -> int:
        lo, hi = st.profile.report_interval
        base = lo if lo == hi else st.rng.uniform(lo, hi)
        rate = st.rate_multiplier * self.sim.congestion_multiplier(dev, now)
        if self.diurnal_amplitude:
            rate *= 1.0 + self.diurnal_amplitude * math.sin(2 * math.pi * now / DAY + self.diurnal_phase)
        return max(1, round(base / rate))

    def draw_size(self, st: DeviceTraffic) -> int:
        lo, hi = st.profile.report_size
        return lo if lo == hi else st.rng.randint(lo, hi)

    def measurement(self, dev_id: str, st: DeviceTraffic, now: int) -> tuple[float, bool]:
        value = st.process.next()
        f = st.falsify
        if f is not None and now <= f[2]:
            mode, amount, _ = f
            return (value + amount if mode == "bias" else amount), True
        return value, False


class Adversary:
    """Schedules and executes every attack in the scenario."""

    def __init__(self, sim):
        self.sim = sim
        self.rng = sim.rng.stream("adversary")
        self.compromised_servers: set[str] = set()
        self.evasion: dict[str, float] = {}
        self._attest_rng: dict = {}
        self.tracking_cells: dict[str, int] = {}  # monitored cell -> watch end
        self.storm_tx = 0
        self.unauthorized = 0

    # -- scheduling ---------------------------------------------------------

    def schedule(self, specs: list[AttackSpec]) -> None:
        for i, spec in enumerate(specs):
            self.sim.engine.schedule(spec.start, "adversary", "attack", (i, "start"))
            if spec.kind in ("FalsifiedMeasurement", "Tracking"):
                self.sim.engine.schedule(spec.end, "adversary", "attack", (i, "end"))

    def on_attack(self, ev) -> None:
        i, phase = ev.data
        spec = self.sim.cfg.attacks[i]
        if phase == "end":
            if spec.kind == "Tracking":
                for c in spec.targets:
                    self.tracking_cells.pop(c, None)
            return
        sim = self.sim
        sim.truth.emit("adversary", "attack_start", index=i, attack=spec.kind, targets=list(spec.targets),
                       start=spec.start, end=spec.end, units=self.units(spec))
        if spec.kind == "CompromiseDevice":
            for t in spec.targets:
                self.compromise_device(t, spec.start, **spec.params)
        elif spec.kind == "SignalingStorm":
            self.inject_signaling_storm(spec)
        elif spec.kind == "FalsifiedMeasurement":
            self.inject_falsified_measurements(spec)
        elif spec.kind == "UnauthorizedCommand":
            self.inject_unauthorized_command(spec, i)
        elif spec.kind == "Jamming":
            mode = spec.params.get("mode", "uplink_data_only_outage")
            for cell in spec.targets:
                sim.network.apply_jamming(cell, mode, spec.end - spec.start)
                sim.trace.emit(cell, "jam", mode=mode, until=spec.end)
        elif spec.kind == "Tracking":
            for cell in spec.targets:
                self.tracking_cells[cell] = spec.end

    def units(self, spec: AttackSpec) -> dict:
        """Ground-truth positives: what a perfect detector would have to name."""
        devices = self.sim.network.devices
        if spec.kind == "SignalingStorm":
            return {"cells": sorted({devices[t].attached_cell for t in spec.targets
                                     if devices[t].attached_cell is not None})}
        if spec.kind == "Jamming":
            return {"cells": sorted(spec.targets)}
        if spec.kind == "Tracking":
            return {}
        if spec.kind == "UnauthorizedCommand":
            server = spec.params.get("server") or next(iter(sorted(self.compromised_servers)), None)
            return {"nodes": [server] if server else []}
        out = {"nodes": sorted(spec.targets)}
        if spec.kind == "CompromiseDevice":
            # a compromised car shows up as a V2V load anomaly in its cell
            out["v2v_cells"] = {t: devices[t].attached_cell for t in sorted(spec.targets)
                                if t in devices and devices[t].tech.name == "LTE-V2V"
                                and spec.params.get("traffic_multiplier", 1.0) != 1.0}
        return out

    # -- operations ---------------------------------------------------------

    def compromise_device(self, dev_id: str, at: int, evasion_p: float = 0.0,
                          traffic_multiplier: float = 1.0, **_) -> None:
        sim = self.sim
        if not 0.0 <= evasion_p <= 1.0:
            raise ValueError(f"evasion_p must lie in [0, 1], got {evasion_p}")
        self.evasion[dev_id] = evasion_p
        if dev_id in sim.servers:
            self.compromised_servers.add(dev_id)
            sim.truth.emit(dev_id, "compromised", since=at, evasion_p=evasion_p)
            return
        dev = sim.network.devices.get(dev_id)
        if dev is None:
            raise UnknownDevice(dev_id)
        dev.compromised = True
        dev.compromised_at = at
        if traffic_multiplier != 1.0:
            sim.traffic.state[dev_id].rate_multiplier = traffic_multiplier
        sim.truth.emit(dev_id, "compromised", since=at, evasion_p=evasion_p,
                       tech=dev.tech.name, cell=dev.attached_cell)

    def _require_compromised(self, targets) -> None:
        devices = self.sim.network.devices
        bad = [t for t in targets if t not in devices or not devices[t].compromised]
        if bad:
            raise TargetNotCompromised(", ".join(bad))

    def inject_signaling_storm(self, spec: AttackSpec) -> None:
        """Each target raises its small-data rate to ``multiplier`` x benign."""
        self._require_compromised(spec.targets)
        mult = float(spec.params.get("multiplier", 100.0))
        if mult <= 1.0:
            return  # nothing beyond benign traffic
        sim = self.sim
        for t in spec.targets:
            st = sim.traffic.state[t]
            gap = max(1, round(st.profile.mean_interval / (mult - 1.0)))
            first = spec.start + self.rng.randint(0, gap - 1)
            if first <= spec.end:
                sim.engine.schedule(first, t, "storm_tx", (gap, spec.end))

    def on_storm_tx(self, ev) -> None:
        gap, end = ev.data
        sim = self.sim
        dev_id = ev.target
        self.storm_tx += 1
        sim.truth.emit(dev_id, "storm_tx")
        sim.send_small_data(sim.network.devices[dev_id], storm=True)
        nxt = sim.engine.now + gap
        if nxt <= end:
            sim.engine.schedule(nxt, dev_id, "storm_tx", ev.data)

    def inject_falsified_measurements(self, spec: AttackSpec) -> None:
        self._require_compromised(spec.targets)
        sim = self.sim
        mode = spec.params.get("mode", "bias")
        for t in spec.targets:
            st = sim.traffic.state[t]
            if mode == "constant":
                amount = float(spec.params.get("value", st.profile.measure_mean))
            elif "bias_sigma" in spec.params:
                amount = float(spec.params["bias_sigma"]) * st.profile.measure_sigma
            else:
                amount = float(spec.params.get("bias", 0.0))
            st.falsify = (mode, amount, spec.end)

    def inject_unauthorized_command(self, spec: AttackSpec, index: int) -> None:
        sim = self.sim
        server = spec.params.get("server")
        if server is None:
            server = next(iter(sorted(self.compromised_servers)), None)
        if server not in self.compromised_servers:
            raise NoCompromisedServer(f"no compromised application server ({server})")
        commands = list(spec.params.get("commands", ["actuate:open"]))
        count = int(spec.params.get("count", len(commands)))
        span = spec.end - spec.start
        for j in range(count):
            at = spec.start + (span * j) // max(count, 1)
            target = spec.targets[j % len(spec.targets)]
            sim.engine.schedule(at, server, "command", (target, commands[j % len(commands)]))

    def attestation_response_valid(self, node_id: str, compromised: bool) -> bool:
        """Compromised nodes answer wrongly with probability ``1 - evasion_p``."""
        if not compromised:
            return True
        p = self.evasion.get(node_id, 0.0)
        if p <= 0.0:
            return False
        if p >= 1.0:
            return True
        rng = self._attest_rng.get(node_id)
        if rng is None:
            rng = self._attest_rng[node_id] = self.sim.rng.stream(f"attest/{node_id}")
        return rng.bernoulli(p)
