"""Aggregate a trace plus its ground-truth sidecar into a metrics report.

Everything here is recomputed from the two files, so a report can be
regenerated after the run (``cpsfog report``).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .errors import RunIdMismatch
from .tracking import run_tracking_adversary
from .traffic import AdversaryObservation
from .trace import iter_records

# which attack kind an alarm kind speaks to
ALARM_TO_ATTACK = {
    "SignalingStorm": "SignalingStorm",
    "DoS": "SignalingStorm",
    "Jamming": "Jamming",
    "ImplausibleState": "FalsifiedMeasurement",
    "AttestationFailure": "CompromiseDevice",
    "V2VAnomaly": "CompromiseDevice",
}
SCORED_ATTACKS = ("SignalingStorm", "Jamming", "FalsifiedMeasurement", "CompromiseDevice", "UnauthorizedCommand")


@dataclass
class MetricsReport:
    run_id: str
    records: int = 0
    signaling: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    energy: dict = field(default_factory=dict)
    contexts: dict = field(default_factory=dict)
    latency: dict = field(default_factory=dict)
    alarms: list = field(default_factory=list)
    confusion: dict = field(default_factory=dict)
    tracking: dict | None = None
    commands: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _add(d: dict, k, n) -> None:
    d[k] = d.get(k, 0) + n


def _read_header(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        line = fh.readline()
    return json.loads(line) if line.strip() else {}


def _unit_matches(kind: str, units: dict, alarm: dict) -> list:
    """Ground-truth units an alarm names for an attack of ``kind``."""
    a_kind, scope = alarm["kind"], alarm["scope"]
    if kind == "SignalingStorm" and a_kind == "SignalingStorm" and scope in units.get("cells", ()):
        return [scope]
    if kind == "Jamming" and a_kind == "Jamming" and scope in units.get("cells", ()):
        return [scope]
    if kind == "FalsifiedMeasurement" and a_kind == "ImplausibleState" and scope in units.get("nodes", ()):
        return [scope]
    if kind in ("CompromiseDevice", "UnauthorizedCommand") and a_kind == "AttestationFailure" \
            and scope in units.get("nodes", ()):
        return [scope]
    if kind == "CompromiseDevice" and a_kind == "V2VAnomaly":
        return [d for d, c in units.get("v2v_cells", {}).items() if c == scope]
    return []


def confusion_counts(attacks: list[dict], alarms: list[dict]) -> dict:
    """TP/FP/FN per attack kind. TP + FN always equals the positive count."""
    out = {k: {"positives": 0, "TP": 0, "FP": 0, "FN": 0, "latency": None} for k in SCORED_ATTACKS}
    explained = set()
    for atk in attacks:
        kind = atk["attack"]
        if kind not in out:
            continue
        units = atk["units"]
        positives = units.get("cells") if kind in ("SignalingStorm", "Jamming") else units.get("nodes", [])
        detected = set()
        first = None
        for al in alarms:
            if al["raised_at"] < atk["start"]:
                continue
            hit = _unit_matches(kind, units, al)
            if hit or (kind == "SignalingStorm" and al["kind"] == "DoS"):
                explained.add(al["id"])
            if hit:
                detected.update(hit)
                lat = al["raised_at"] - atk["start"]
                first = lat if first is None else min(first, lat)
        row = out[kind]
        row["positives"] += len(positives)
        tp = len(detected.intersection(positives))
        row["TP"] += tp
        row["FN"] += len(positives) - tp
        if first is not None:
            row["latency"] = first if row["latency"] is None else min(row["latency"], first)
    for al in alarms:
        kind = ALARM_TO_ATTACK.get(al["kind"])
        if kind is not None and al["id"] not in explained:
            out[kind]["FP"] += 1
    return out


def summarize_metrics(trace_path, truth_path, tracking_method: str = "greedy") -> MetricsReport:
    th = _read_header(trace_path)
    uh = _read_header(truth_path)
    if th.get("run_id") != uh.get("run_id"):
        raise RunIdMismatch(f"trace run {th.get('run_id')} vs truth run {uh.get('run_id')}")
    rep = MetricsReport(th.get("run_id", ""))
    sig = {"total": 0, "by_cell": {}, "by_domain": {}, "by_type": {}, "by_device": {}}
    data = {"sent": 0, "delivered_msgs": 0, "delivered_bytes": 0, "deadline_missed": 0, "jammed": 0,
            "failed_other": 0, "by_cell": {}, "by_domain": {}, "reports": 0}
    energy_by_dev: dict[str, int] = {}
    ctx = {"aka": 0, "aka_failed": 0, "aka_jammed": 0, "reuse": 0, "expired": 0, "revoked": 0,
           "as_created": 0, "nas_created": 0, "replay_rejects": 0, "identity_rotations": 0}
    domain_of: dict[str, str] = {}
    latencies: list[int] = []
    alarms: list[dict] = []
    ota: list[AdversaryObservation] = []
    commands = {"delivered": 0, "failed": 0}
    n = 0
    for r in iter_records(trace_path):
        n += 1
        k = r["kind"]
        node = r["node"]
        if k in ("aka", "svc_req", "nas_tx"):
            msgs = r["msgs"]
            _add(energy_by_dev, node, 1000 * msgs + r.get("bytes", 0))
            domain_of[node] = r["domain"]
            if k == "aka":
                res = r["result"]
                if res == "jammed":
                    ctx["aka_jammed"] += 1
                    continue
                ctx["aka" if res == "ok" else "aka_failed"] += 1
                typ = "aka" if res == "ok" else "aka_failure"
            elif k == "svc_req":
                ctx["reuse"] += 1
                typ = "service_request"
            else:
                typ = "nas_small_data"
                data["sent"] += 1
            sig["total"] += msgs
            _add(sig["by_cell"], r["cell"], msgs)
            _add(sig["by_domain"], r["domain"], msgs)
            _add(sig["by_type"], typ, msgs)
            _add(sig["by_device"], node, msgs)
        elif k == "tx":
            data["sent"] += 1
            _add(energy_by_dev, node, r["bytes"])
        elif k == "deliver":
            if r["status"] == "Delivered":
                data["delivered_msgs"] += 1
                data["delivered_bytes"] += r["bytes"]
                _add(data["by_cell"], r["cell"], r["bytes"])
                _add(data["by_domain"], r["domain"], r["bytes"])
                latencies.append(r["latency"])
            else:
                data["deadline_missed"] += 1
        elif k == "tx_fail":
            if r["reason"] == "jammed":
                data["jammed"] += 1
            else:
                data["failed_other"] += 1
        elif k == "report":
            data["reports"] += 1
        elif k == "ctx_created":
            ctx["as_created" if r["ctx"] == "AS" else "nas_created"] += 1
        elif k == "ctx_removed":
            if r["cause"] == "timer":
                ctx["expired"] += 1
            elif r["cause"] == "revocation":
                ctx["revoked"] += 1
        elif k == "ctr_reject":
            ctx["replay_rejects"] += 1
        elif k == "tmsi":
            ctx["identity_rotations"] += 1
        elif k == "alarm":
            alarms.append({"id": r["id"], "kind": r["alarm"], "scope": r["scope"], "raised_at": r["at"],
                           "source": node, "evidence": r["evidence"]})
        elif k == "ota":
            ota.append(AdversaryObservation(r["at"], r["cell"], r["tok"], r["cls"]))
        elif k == "cmd":
            commands["delivered"] += 1
        elif k == "cmd_fail":
            commands["failed"] += 1
    rep.records = n

    attacks: list[dict] = []
    histories: dict[str, list[str]] = {}
    unauthorized = 0
    for r in iter_records(truth_path):
        if r["kind"] == "attack_start":
            attacks.append(r)
        elif r["kind"] == "identity":
            histories.setdefault(r["node"], []).append(r["tok"])
        elif r["kind"] == "command" and r["unauthorized"]:
            unauthorized += 1
    commands["unauthorized_issued"] = unauthorized

    energy = {"total": sum(energy_by_dev.values()) / 1000.0, "by_domain": {}}
    for dev, e in energy_by_dev.items():
        _add(energy["by_domain"], domain_of.get(dev, "?"), e / 1000.0)
    rep.signaling = sig
    rep.data = data
    rep.energy = energy
    rep.contexts = ctx
    if latencies:
        latencies.sort()
        rep.latency = {"mean": sum(latencies) / len(latencies), "max": latencies[-1],
                       "p95": latencies[min(len(latencies) - 1, int(0.95 * len(latencies)))]}
    else:
        rep.latency = {"mean": None, "max": None, "p95": None}
    for al in alarms:
        al["latency"] = None
        for atk in attacks:
            if al["raised_at"] >= atk["start"] and _unit_matches(atk["attack"], atk["units"], al):
                lat = al["raised_at"] - atk["start"]
                al["latency"] = lat if al["latency"] is None else min(al["latency"], lat)
    rep.alarms = alarms
    rep.confusion = confusion_counts(attacks, alarms)
    rep.commands = commands
    if ota:
        cells = th.get("cells", [])
        report = run_tracking_adversary(ota, histories, {c: i for i, c in enumerate(cells)}, tracking_method)
        rep.tracking = report.to_dict()
    return rep
