"""Cloudlets and the cellular cloud controller.

Cloudlets attest devices, check measurement plausibility and watch their
cells for jamming and V2V load anomalies. The controller owns the
security-context registry, correlates per-cell signaling load into storm
alarms, and applies the minimum-downtime isolation response.

Every alarm carries the numbers needed to re-evaluate its predicate;
:func:`recheck` does exactly that.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import asdict, dataclass, field

from .errors import DeviceUnreachable, ModelNotBootstrapped, NoPeerGroup, RegistryDesync
from .network import SIGNALING, LoadCounters
from .security import AS, NAS, token

ALARM_KINDS = ("SignalingStorm", "DoS", "Jamming", "ImplausibleState", "AttestationFailure",
               "V2VAnomaly", "TrackingRisk")
SERVICES = ("attestation", "plausibility", "context_cache", "detection")

PLAUSIBLE = "Plausible"
IMPLAUSIBLE = "Implausible"

FIRMWARE = "fw-1"


@dataclass
class Alarm:
    kind: str
    scope: str
    raised_at: int
    evidence: dict
    source: str
    id: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


# -- predicates ---------------------------------------------------------------


def std_floor(mean: float) -> float:
    # counting noise: a window count cannot be steadier than Poisson
    return math.sqrt(max(mean, 1.0))


def _storm(e):
    return e["signaling_msgs"] > e["baseline_mean"] + e["k"] * max(e["baseline_std"], e["std_floor"])


def _jam(e):
    return e["expected"] >= e["min_expected"] and e["missing"] >= e["fraction"] * e["expected"]


def _v2v(e):
    return (not e["congestion_flag"]) and e["baseline_mean"] > 0 and \
        e["load"] >= e["ratio_threshold"] * e["baseline_mean"]


def _implausible(e):
    return abs(e["value"] - e["estimate"]) > e["k"] * math.sqrt(e["variance"])


_PREDICATES = {
    "SignalingStorm": _storm,
    "DoS": lambda e: len(e["cells"]) >= e["min_cells"],
    "Jamming": _jam,
    "ImplausibleState": _implausible,
    "AttestationFailure": lambda e: e["response"] != e["expected"],
    "V2VAnomaly": _v2v,
    "TrackingRisk": lambda e: e["identity_age"] > e["limit"],
}


def recheck(alarm: Alarm | dict) -> bool:
    """Recompute an alarm's triggering predicate from its evidence alone."""
    if isinstance(alarm, dict):
        return _PREDICATES[alarm["kind"]](alarm["evidence"])
    return _PREDICATES[alarm.kind](alarm.evidence)


# -- statistics -------------------------------------------------------------


class EwmaBaseline:
    """Exponentially weighted mean/variance seeded from the first windows."""

    def __init__(self, alpha: float = 0.2, warm: int = 12):
        if not 0 < alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        self.alpha = alpha
        self.warm = warm
        self.samples: list[float] = []
        self.mean = 0.0
        self.var = 0.0

    @property
    def ready(self) -> bool:
        return len(self.samples) >= self.warm

    @property
    def std(self) -> float:
        return math.sqrt(max(self.var, 0.0))

    def update(self, x: float) -> None:
        if len(self.samples) < self.warm:
            self.samples.append(x)
            n = len(self.samples)
            self.mean = sum(self.samples) / n
            self.var = sum((s - self.mean) ** 2 for s in self.samples) / n
            return
        diff = x - self.mean
        incr = self.alpha * diff
        self.mean += incr
        self.var = (1 - self.alpha) * (self.var + diff * incr)


@dataclass
class PlausibilityModel:
    """Per-device EWMA estimate of the next measurement and its spread.

    The first ``bootstrap`` values seed the model. Afterwards weights are
    ``max(smoothing, 1/n)`` so early updates behave like running averages.
    """

    device: str
    smoothing: float = 0.01
    variance_smoothing: float = 0.002
    tolerance_multiplier: float = 4.0
    bootstrap: int = 20
    estimate: float = 0.0
    variance_estimate: float = 0.0
    n: int = 0
    frozen: bool = False
    samples: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not 0 < self.smoothing <= 1 or not 0 < self.variance_smoothing <= 1:
            raise ValueError("smoothing must lie in (0, 1]")
        if self.tolerance_multiplier <= 0:
            raise ValueError("k must be positive")

    @property
    def ready(self) -> bool:
        return self.n >= self.bootstrap

    def check(self, value: float) -> str:
        if self.n < self.bootstrap:
            self.samples.append(value)
            self.n += 1
            if self.n == self.bootstrap:
                m = sum(self.samples) / self.n
                self.estimate = m
                self.variance_estimate = (sum((s - m) ** 2 for s in self.samples) / (self.n - 1)
                                          if self.n > 1 else 0.0)
                self.samples = []
            raise ModelNotBootstrapped(f"{self.device}: {self.n}/{self.bootstrap} samples")
        diff = value - self.estimate
        if abs(diff) > self.tolerance_multiplier * math.sqrt(self.variance_estimate):
            self.frozen = True
            return IMPLAUSIBLE
        if not self.frozen:
            self.n += 1
            a = max(self.smoothing, 1.0 / self.n)
            b = max(self.variance_smoothing, 1.0 / self.n)
            self.estimate += a * diff
            self.variance_estimate = (1 - b) * self.variance_estimate + b * diff * diff
        return PLAUSIBLE


@dataclass(frozen=True)
class AttestationRecord:
    device: str
    nonce: str
    response_valid: bool
    at: int


@dataclass
class ContextRegistryEntry:
    device: str
    kind: str
    validity_deadline: int
    reuse_counter: int
    domain: str

    def validity_timer(self, now: int) -> int:
        return max(0, self.validity_deadline - now)


@dataclass(frozen=True)
class ResponsePolicy:
    isolate_peers: bool = True
    report: bool = True


@dataclass(frozen=True)
class Action:
    kind: str  # "revoke" | "suspend" | "report"
    device: str
    detail: str = ""


@dataclass
class SystemStateReport:
    at: int
    authenticated_by_domain: dict
    open_alarms: list
    alarms_total: int
    device_states: dict
    suspect: list
    isolated: list
    plausibility: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))


# -- alarm plumbing -------------------------------------------------------


class AlarmDesk:
    """Deduplicates alarms per (kind, scope) until the condition clears."""

    def __init__(self, sim, source: str):
        self.sim = sim
        self.source = source
        self.open: set[tuple[str, str]] = set()

    def raise_(self, kind: str, scope: str, evidence: dict) -> Alarm | None:
        key = (kind, scope)
        if key in self.open:
            return None
        self.open.add(key)
        sim = self.sim
        alarm = Alarm(kind, scope, sim.engine.now, evidence, self.source, len(sim.alarms))
        sim.alarms.append(alarm)
        sim.trace.emit(self.source, "alarm", alarm=kind, scope=scope, id=alarm.id, evidence=evidence)
        return alarm

    def clear(self, kind: str, scope: str) -> bool:
        """Close an open alarm; True if one was open."""
        was_open = (kind, scope) in self.open
        self.open.discard((kind, scope))
        return was_open


# -- cloudlet -------------------------------------------------------------


class Cloudlet:
    def __init__(self, sim, cloudlet_id: str, covered_cells, service_set, params):
        if not covered_cells:
            raise ValueError(f"cloudlet {cloudlet_id} must cover at least one cell")
        self.sim = sim
        self.id = cloudlet_id
        self.covered_cells = set(covered_cells)
        self.service_set = list(service_set)
        self.p = params
        self.local_models: dict[str, PlausibilityModel] = {}
        self.attestation_log: list[AttestationRecord] = []
        self.desk = AlarmDesk(sim, cloudlet_id)
        self._nonce = 0
        self.used_nonces: set[str] = set()
        # jamming bookkeeping for the current jam window
        self.hits: dict[str, int] = {}
        self.sig: dict[str, int] = {}
        self.unreachable: dict[str, set[str]] = {}
        self.silent: set[str] = set()  # overdue devices, until they deliver again
        self.sig_baseline: dict[str, EwmaBaseline] = {}
        self.due: list[tuple[int, str, int]] = []
        self.due_version: dict[str, int] = {}
        self.interval_max: dict[str, int] = {}
        self.v2v_baseline: dict[str, EwmaBaseline] = {}
        self.window_start = 0

    def offers(self, service: str) -> bool:
        return service in self.service_set

    # -- service set --------------------------------------------------------

    def broadcast_service_set(self) -> int:
        sim = self.sim
        heard = 0
        for cell in sorted(self.covered_cells):
            for sec in sim.network.cells[cell].sectors:
                for dev_id in sec.attached:
                    sim.heard.setdefault(dev_id, {})[self.id] = tuple(self.service_set)
                    heard += 1
        sim.trace.emit(self.id, "broadcast", services=self.service_set, devices=heard)
        return heard

    def device_knows(self, dev_id: str, service: str) -> bool:
        return service in self.sim.heard.get(dev_id, {}).get(self.id, ())

    # -- attestation --------------------------------------------------------

    def _next_nonce(self) -> str:
        self._nonce += 1
        nonce = token(self.sim.cfg.seed, self.id, "nonce", self._nonce)
        assert nonce not in self.used_nonces
        self.used_nonces.add(nonce)
        return nonce

    def attest_device(self, dev_id: str) -> AttestationRecord:
        sim = self.sim
        dev = sim.network.devices[dev_id]
        if dev.attached_cell not in self.covered_cells:
            raise ValueError(f"{dev_id} is not attached in cells covered by {self.id}")
        if sim.network.blocks(dev.attached_cell, SIGNALING):
            self.unreachable.setdefault(dev.attached_cell, set()).add(dev_id)
            self.silent.add(dev_id)
            sim.trace.emit(self.id, "attest", dev=dev_id, result="unreachable")
            raise DeviceUnreachable(dev_id)
        nonce = self._next_nonce()
        honest = sim.adversary.attestation_response_valid(dev_id, dev.compromised)
        expected = token(nonce, FIRMWARE)
        response = expected if honest else token(nonce, "tampered")
        rec = AttestationRecord(dev_id, nonce, response == expected, sim.engine.now)
        self.attestation_log.append(rec)
        sim.trace.emit(self.id, "attest", dev=dev_id, result="valid" if rec.response_valid else "invalid")
        if not rec.response_valid:
            alarm = self.desk.raise_("AttestationFailure", dev_id,
                                     {"nonce": nonce, "response": response, "expected": expected})
            if alarm is not None:
                sim.notify_controller(alarm)
        return rec

    def attest_all(self) -> None:
        sim = self.sim
        for cell in sorted(self.covered_cells):
            for sec in sim.network.cells[cell].sectors:
                for dev_id in sorted(sec.attached):
                    if not self.device_knows(dev_id, "attestation"):
                        continue
                    try:
                        self.attest_device(dev_id)
                    except DeviceUnreachable:
                        pass

    # -- plausibility -------------------------------------------------------

    def update_and_check_plausibility(self, m) -> str:
        model = self.local_models.get(m.device)
        if model is None:
            p = self.p
            model = self.local_models[m.device] = PlausibilityModel(
                m.device, p.plausibility_alpha, p.plausibility_variance_alpha, p.k_plausibility, p.bootstrap)
        est, var = model.estimate, model.variance_estimate
        verdict = model.check(m.value)
        if verdict == IMPLAUSIBLE:
            alarm = self.desk.raise_("ImplausibleState", m.device,
                                     {"value": m.value, "estimate": est, "variance": var,
                                      "k": model.tolerance_multiplier})
            if alarm is not None:
                self.sim.notify_controller(alarm)
        return verdict

    # -- load feeds (called by the network model) ---------------------------

    def note_signaling(self, cell: str, msgs: int) -> None:
        self.sig[cell] = self.sig.get(cell, 0) + msgs

    def note_data(self, cell: str, dev_id: str) -> None:
        self.hits[cell] = self.hits.get(cell, 0) + 1
        self.silent.discard(dev_id)
        imax = self.interval_max.get(dev_id)
        if imax is not None:
            v = self.due_version.get(dev_id, 0) + 1
            self.due_version[dev_id] = v
            heapq.heappush(self.due, (self.sim.engine.now + imax + self.p.jam_grace, dev_id, v))

    def detect_jamming(self) -> list[Alarm]:
        """Close a jam window: compare delivered against expected reports per cell.

        A device counts as missing from the moment its next report is overdue,
        or an attestation found it unreachable, until it delivers again. When
        an open alarm clears, devices still silent from that episode are
        forgiven, so their next report rather than the old gap decides.
        """
        sim = self.sim
        now = sim.engine.now
        due = self.due
        while due and due[0][0] < now:
            _, dev_id, v = heapq.heappop(due)
            if self.due_version.get(dev_id) == v:
                self.silent.add(dev_id)
        devices = sim.network.devices
        missing_by_cell: dict[str, set[str]] = {}
        for dev_id in self.silent:
            cell = devices[dev_id].attached_cell
            if cell in self.covered_cells:
                missing_by_cell.setdefault(cell, set()).add(dev_id)
        p = self.p
        raised = []
        for cell in sorted(self.covered_cells):
            hits = self.hits.get(cell, 0)
            unreachable = self.unreachable.get(cell, set())
            missing = len(missing_by_cell.get(cell, set()) | unreachable)
            expected = hits + missing
            sig = self.sig.get(cell, 0)
            base = self.sig_baseline.setdefault(cell, EwmaBaseline(p.alpha, p.baseline_windows))
            if base.ready and base.mean > 0:
                mode = ("signaling normal, data absent" if sig >= (1 - p.jam_fraction) * base.mean
                        else "all traffic ceased" if sig == 0 else "signaling degraded")
            else:
                mode = "no signaling baseline"
            evidence = {"window_start": self.window_start, "window_end": now, "expected": expected,
                        "missing": missing, "hits": hits, "unreachable": len(unreachable),
                        "fraction": p.jam_fraction, "min_expected": p.jam_min_expected,
                        "signaling": sig, "signaling_baseline": base.mean, "mode": mode}
            if _jam(evidence):
                alarm = self.desk.raise_("Jamming", cell, evidence)
                if alarm is not None:
                    raised.append(alarm)
                    sim.notify_controller(alarm)
            else:
                if self.desk.clear("Jamming", cell):
                    self.silent -= missing_by_cell.get(cell, set())
                if now >= p.warmup:
                    base.update(sig)
        self.hits.clear()
        self.sig.clear()
        self.unreachable.clear()
        self.window_start = now
        return raised

    # -- V2V ------------------------------------------------------------------

    def detect_v2v_anomaly(self, cell: str, v2v_load: LoadCounters, congestion_flag: bool) -> Alarm | None:
        if cell not in self.covered_cells:
            raise ValueError(f"{cell} is outside {self.id}'s coverage")
        p = self.p
        base = self.v2v_baseline.setdefault(cell, EwmaBaseline(p.alpha, p.baseline_windows))
        load = v2v_load.data_msgs
        if not base.ready:
            base.update(load)
            return None
        evidence = {"load": load, "baseline_mean": base.mean, "ratio_threshold": p.v2v_ratio,
                    "congestion_flag": bool(congestion_flag), "window_start": v2v_load.window_start}
        deviates = base.mean > 0 and load >= p.v2v_ratio * base.mean
        if not deviates:
            self.desk.clear("V2VAnomaly", cell)
            base.update(load)
            return None
        if congestion_flag:
            return None
        alarm = self.desk.raise_("V2VAnomaly", cell, evidence)
        if alarm is not None:
            self.sim.notify_controller(alarm)
        return alarm


# -- controller -----------------------------------------------------------


class Controller:
    def __init__(self, sim, params, detection: bool = True):
        self.sim = sim
        self.p = params
        self.detection = detection
        self.owner = "controller" if detection else "csgn"
        self.registry: dict[tuple[str, str], ContextRegistryEntry] = {}
        self.registry_ops = 0
        self.desk = AlarmDesk(sim, "controller")
        self.received: list[Alarm] = []
        self.storm_baseline: dict[str, EwmaBaseline] = {}
        self.isolated: set[str] = set()
        self.actions: list[Action] = []
        self.domain_window_counts: dict[str, list[int]] = {}
        self.windows = 0
        self._nonce = 0

    # -- registry -------------------------------------------------------------

    def manage_context_registry(self, what: str, ctx, cause: str = "") -> None:
        sim = self.sim
        key = (ctx.device, ctx.kind)
        self.registry_ops += 1
        if what == "established":
            dev = sim.network.devices[ctx.device]
            self.registry[key] = ContextRegistryEntry(ctx.device, ctx.kind, ctx.validity_deadline, 0, dev.domain)
            sim.engine.schedule(ctx.validity_deadline, ctx.device, "ctx_expiry", (ctx.kind, ctx.key_id))
        elif what == "reused":
            self.registry[key].reuse_counter = ctx.reuse_count
        elif what == "removed":
            self.registry.pop(key, None)

    def on_expiry(self, ev) -> None:
        kind, key_id = ev.data
        ctx = self.sim.security.context(ev.target, kind)
        if ctx is not None and ctx.key_id == key_id:
            self.sim.security.expire_or_revoke(ev.target, kind, "timer")

    def audit(self) -> None:
        live = self.sim.security.live_contexts()
        mirror = {k: (e.validity_deadline, e.reuse_counter) for k, e in self.registry.items()}
        if live != mirror:
            missing = sorted(set(live) ^ set(mirror))[:5]
            raise RegistryDesync(f"registry differs from live contexts (e.g. {missing})")

    def close_window(self) -> dict[str, int]:
        """Per-domain authenticated counts for the window just closed."""
        counts: dict[str, int] = {}
        devices = self.sim.network.devices
        for dev_id, kind in self.registry:
            if kind == NAS:
                d = devices[dev_id].domain
                counts[d] = counts.get(d, 0) + 1
        for d in set(counts) | set(self.domain_window_counts):
            self.domain_window_counts.setdefault(d, [0] * self.windows).append(counts.get(d, 0))
        self.windows += 1
        return counts

    def average_authenticated(self) -> dict[str, float]:
        return {d: sum(v) / len(v) for d, v in sorted(self.domain_window_counts.items()) if v}

    # -- detection --------------------------------------------------------

    def detect_signaling_storm(self, window_stats: dict[str, LoadCounters]) -> list[Alarm]:
        p = self.p
        raised = []
        storming = []
        for cell in sorted(window_stats):
            lc = window_stats[cell]
            base = self.storm_baseline.setdefault(cell, EwmaBaseline(p.alpha, p.baseline_windows))
            x = lc.signaling_msgs
            if not base.ready:
                if self.sim.engine.now >= p.warmup:
                    base.update(x)
                continue
            evidence = {"window_start": lc.window_start, "signaling_msgs": x, "baseline_mean": base.mean,
                        "baseline_std": base.std, "std_floor": std_floor(base.mean), "k": p.k_storm}
            if _storm(evidence):
                storming.append(cell)
                alarm = self.desk.raise_("SignalingStorm", cell, evidence)
                if alarm is not None:
                    raised.append(alarm)
                    self.received.append(alarm)
            else:
                self.desk.clear("SignalingStorm", cell)
                base.update(x)
        if len(storming) >= p.dos_min_cells:
            alarm = self.desk.raise_("DoS", "network", {"cells": storming, "min_cells": p.dos_min_cells})
            if alarm is not None:
                raised.append(alarm)
                self.received.append(alarm)
        else:
            self.desk.clear("DoS", "network")
        return raised

    def receive(self, alarm: Alarm) -> None:
        self.received.append(alarm)
        if alarm.kind == "AttestationFailure":
            self.respond_isolate_peers(alarm.scope, self.sim.policy)

    def check_identity_age(self) -> list[Alarm]:
        """Flag domains whose devices keep one temporary identity for too long."""
        sim = self.sim
        now = sim.engine.now
        limit = self.p.identity_age_limit
        issued = sim.security.identity_at
        worst: dict[str, list[int]] = {}
        for dev in sim.network.devices.values():
            if dev.attached_cell is None:
                continue
            age = now - issued.get(dev.id, now)
            w = worst.setdefault(dev.domain, [0, 0])
            if age > w[0]:
                w[0] = age
            if age > limit:
                w[1] += 1
        raised = []
        for domain in sorted(worst):
            age, over = worst[domain]
            if age > limit:
                alarm = self.desk.raise_("TrackingRisk", domain,
                                         {"identity_age": age, "limit": limit, "devices": over})
                if alarm is not None:
                    raised.append(alarm)
                    self.received.append(alarm)
            else:
                self.desk.clear("TrackingRisk", domain)
        return raised

    def attest_servers(self) -> list[AttestationRecord]:
        """Same challenge-response as device attestation, run by the controller."""
        sim = self.sim
        out = []
        for server in sorted(sim.servers):
            self._nonce += 1
            nonce = token(sim.cfg.seed, "controller", "nonce", self._nonce)
            honest = sim.adversary.attestation_response_valid(
                server, server in sim.adversary.compromised_servers)
            expected = token(nonce, FIRMWARE)
            response = expected if honest else token(nonce, "tampered")
            rec = AttestationRecord(server, nonce, honest, sim.engine.now)
            out.append(rec)
            sim.trace.emit("controller", "attest", dev=server, result="valid" if honest else "invalid")
            if not honest:
                alarm = self.desk.raise_("AttestationFailure", server,
                                         {"nonce": nonce, "response": response, "expected": expected})
                if alarm is not None:
                    self.receive(alarm)
        return out

    # -- response ---------------------------------------------------------

    def respond_isolate_peers(self, dev_id: str, policy: ResponsePolicy | None = None) -> list[Action]:
        """Isolate the compromised device's peers; the device itself keeps running."""
        sim = self.sim
        policy = policy or ResponsePolicy()
        actions: list[Action] = []
        group = sim.peer_groups.get(dev_id)
        peers = [] if group is None else [d for d in sim.peer_group_members[group] if d != dev_id]
        if policy.isolate_peers:
            for peer in peers:
                if peer in self.isolated:
                    continue
                self.isolated.add(peer)
                for kind in (NAS, AS):
                    if sim.security.context(peer, kind) is not None:
                        sim.security.expire_or_revoke(peer, kind, "revocation")
                        actions.append(Action("revoke", peer, kind))
                pdev = sim.network.devices[peer]
                pdev.suspended = True
                if pdev.attached_cell is not None:
                    sim.network.detach_device(pdev)
                actions.append(Action("suspend", peer))
        if policy.report:
            detail = "operators: take manual control" if group else "no peer group: report only"
            actions.append(Action("report", dev_id, detail))
        assert all(a.device != dev_id for a in actions if a.kind in ("suspend", "revoke"))
        for a in actions:
            sim.trace.emit("controller", "action", action=a.kind, dev=a.device, detail=a.detail, trigger=dev_id)
        self.actions.extend(actions)
        if group is None and policy.isolate_peers:
            sim.trace.emit("controller", "no_peer_group", dev=dev_id)
        return actions

    # -- reporting --------------------------------------------------------

    def report_system_state(self, at: int | None = None) -> SystemStateReport:
        sim = self.sim
        at = sim.engine.now if at is None else at
        auth: dict[str, int] = {}
        for dev_id, kind in self.registry:
            if kind == NAS:
                d = sim.network.devices[dev_id].domain
                auth[d] = auth.get(d, 0) + 1
        suspect = sorted({a.scope for a in self.received
                          if a.scope in sim.network.devices and a.scope not in self.isolated})
        isolated = sorted(self.isolated)
        n = len(sim.network.devices)
        states = {"clean": n - len(suspect) - len(isolated), "suspect": len(suspect), "isolated": len(isolated)}
        open_alarms = []
        for a in self.received:
            desk_open = any((a.kind, a.scope) in d.open for d in sim.desks())
            if desk_open:
                open_alarms.append({"id": a.id, "kind": a.kind, "scope": a.scope, "raised_at": a.raised_at,
                                    "evidence": a.evidence})
        models = [m for c in sim.cloudlets.values() for m in c.local_models.values()]
        plaus = {"models": len(models), "bootstrapped": sum(m.ready for m in models),
                 "frozen": sum(m.frozen for m in models)}
        return SystemStateReport(at, dict(sorted(auth.items())), open_alarms, len(self.received), states,
                                 suspect, isolated, plaus)


def respond_or_report(controller: Controller, dev_id: str, policy: ResponsePolicy | None = None):
    """Like ``respond_isolate_peers`` but raises NoPeerGroup when nothing could be isolated."""
    actions = controller.respond_isolate_peers(dev_id, policy)
    if dev_id not in controller.sim.peer_groups:
        raise NoPeerGroup(dev_id)
    return actions
