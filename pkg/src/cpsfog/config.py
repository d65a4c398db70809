"""Scenario configuration: YAML schema, defaults, validation and echo.

A scenario file can be three lines long; every omitted field falls back to
the defaults below. Validation collects every problem before raising.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .engine import DAY, HOUR, MINUTE, SECOND
from .errors import ParseError, ValidationError
from .network import DEFAULT_TECHS, DOMAINS, JAM_MODES, MAX_ITS_SPEED_KMH, AccessTech
from .traffic import DEFAULT_PROFILES, DEFAULT_TECH, AttackSpec, TrafficProfile

SCHEMA_VERSION = 1
SERVICES = ("attestation", "plausibility", "context_cache", "detection")
FEATURES = ("context_reuse", "nas_small_data", "identity_rotation", "fog_defense")

_UNITS = {"ms": 1, "s": SECOND, "min": MINUTE, "h": HOUR, "d": DAY}
_DURATION = re.compile(r"^(?:\d+(?:\.\d+)?(?:ms|s|min|h|d))+$")
_PART = re.compile(r"(\d+(?:\.\d+)?)(ms|s|min|h|d)")


def parse_duration(v) -> int:
    """``90`` (ms), ``"30min"``, ``"1.5h"``, ``"4h5min"`` -> integer milliseconds."""
    if isinstance(v, bool):
        raise ValueError(f"not a duration: {v!r}")
    if isinstance(v, int):
        return v
    if isinstance(v, float) and v.is_integer():
        return int(v)
    if isinstance(v, str):
        text = v.replace(" ", "")
        if _DURATION.match(text):
            ms = sum(float(n) * _UNITS[u] for n, u in _PART.findall(text))
            if ms.is_integer():
                return int(ms)
    raise ValueError(f"not a duration: {v!r}")


def format_duration(ms: int) -> str | int:
    if ms == 0:
        return 0
    for unit in ("d", "h", "min", "s"):
        if ms % _UNITS[unit] == 0:
            return f"{ms // _UNITS[unit]}{unit}"
    return f"{ms}ms"


@dataclass
class CellSpec:
    id: str
    techs: list[str] = field(default_factory=lambda: list(DEFAULT_TECHS))
    enb: str = ""


@dataclass
class CloudletSpec:
    id: str
    cells: list[str]
    services: list[str] = field(default_factory=lambda: list(SERVICES))


@dataclass
class DeviceGroup:
    domain: str
    count: int = 1
    tech: str = ""
    prefix: str = ""
    cells: list[str] = field(default_factory=list)
    speed: float = 0.0
    peer_group: str | None = None
    mission_critical: bool = False
    rogue: bool = False

    def ids(self) -> list[str]:
        if self.count == 1 and self.prefix and not self.prefix.endswith("-"):
            return [self.prefix]
        return [f"{self.prefix}{i}" for i in range(self.count)]


@dataclass
class CongestionSpec:
    cells: list[str]
    start: int
    end: int
    load_multiplier: float = 3.0
    flagged: bool = True  # what the operator's ground truth reports


@dataclass
class SecurityParams:
    n_full: int = 8
    n_reuse: int = 3
    as_validity: int = 24 * HOUR
    nas_validity: int = 7 * DAY
    packet_ceiling: int = 1500
    keep_as_on_handover: bool = False


@dataclass
class ResponseParams:
    isolate_peers: bool = True
    report: bool = True


@dataclass
class DefenseParams:
    alpha: float = 0.2
    k_storm: float = 6.0
    baseline_windows: int = 12
    warmup: int = HOUR
    dos_min_cells: int = 2
    k_plausibility: float = 4.0
    plausibility_alpha: float = 0.01
    plausibility_variance_alpha: float = 0.002
    bootstrap: int = 20
    jam_window: int = MINUTE
    jam_fraction: float = 0.5
    jam_min_expected: int = 3
    jam_grace: int = 10 * SECOND
    v2v_ratio: float = 2.0
    attest_interval: int = HOUR
    broadcast_interval: int = HOUR
    controller_latency: int = 20
    identity_age_limit: int = DAY
    response: ResponseParams = field(default_factory=ResponseParams)


@dataclass
class TrafficParams:
    diurnal_amplitude: float = 0.0
    registration_lead: int = SECOND
    profiles: dict[str, TrafficProfile] = field(default_factory=lambda: dict(DEFAULT_PROFILES))


@dataclass
class ScenarioConfig:
    seed: int = 0
    duration: int = DAY
    window: int = 5 * MINUTE
    cell_size_m: float = 1000.0
    cells: list[CellSpec] = field(default_factory=lambda: [CellSpec("cell0")])
    techs: dict[str, AccessTech] = field(default_factory=lambda: dict(DEFAULT_TECHS))
    cloudlets: list[CloudletSpec] = field(default_factory=list)
    devices: list[DeviceGroup] = field(default_factory=list)
    servers: list[str] = field(default_factory=list)
    traffic: TrafficParams = field(default_factory=TrafficParams)
    security: SecurityParams = field(default_factory=SecurityParams)
    features: dict[str, bool] = field(default_factory=lambda: {f: True for f in FEATURES})
    defense: DefenseParams = field(default_factory=DefenseParams)
    command_whitelist: list[str] = field(default_factory=lambda: ["report:read", "config:get"])
    congestion: list[CongestionSpec] = field(default_factory=list)
    attacks: list[AttackSpec] = field(default_factory=list)

    def feature(self, name: str) -> bool:
        return self.features[name]

    def with_features(self, **toggles) -> "ScenarioConfig":
        unknown = set(toggles) - set(FEATURES)
        if unknown:
            raise ValueError(f"unknown feature toggles {sorted(unknown)}")
        return replace(self, features={**self.features, **toggles})

    def cell_ids(self) -> list[str]:
        return [c.id for c in self.cells]

    def device_cells(self, group: DeviceGroup) -> list[str]:
        if group.cells:
            return list(group.cells)
        return [c.id for c in self.cells if group.tech in c.techs]

    def placements(self):
        """Yield ``(device_id, group, cell_id)`` in a fixed order."""
        for g in self.devices:
            cells = self.device_cells(g)
            for i, dev_id in enumerate(g.ids()):
                yield dev_id, g, cells[i % len(cells)] if cells else None


# -- parsing ---------------------------------------------------------------


def _line_index(node, path=(), out=None) -> dict[tuple, int]:
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            _line_index(v, path + (k.value,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, path + (i,), out)
    return out


class _Reader:
    """Walks the raw mapping, recording every problem with its location."""

    def __init__(self, lines: dict[tuple, int]):
        self.lines = lines
        self.errors: list[str] = []

    def err(self, path: tuple, msg: str) -> None:
        line = self.lines.get(path)
        where = ".".join(map(str, path)) or "<root>"
        self.errors.append(f"{where}" + (f" (line {line})" if line else "") + f": {msg}")

    def mapping(self, raw, path, allowed) -> dict:
        if raw is None:
            return {}
        if not isinstance(raw, dict):
            self.err(path, "expected a mapping")
            return {}
        for k in raw:
            if k not in allowed:
                self.err(path + (k,), f"unknown field (allowed: {', '.join(sorted(allowed))})")
        return raw

    def get(self, raw: dict, key, path, conv, default):
        if key not in raw:
            return default
        try:
            return conv(raw[key])
        except (TypeError, ValueError) as e:
            self.err(path + (key,), str(e))
            return default


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError(f"expected an integer, got {v!r}")
    return v


def _num(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"expected a number, got {v!r}")
    return float(v)


def _bool(v):
    if not isinstance(v, bool):
        raise ValueError(f"expected true/false, got {v!r}")
    return v


def _str(v):
    if not isinstance(v, (str, int)) or isinstance(v, bool):
        raise ValueError(f"expected a string, got {v!r}")
    return str(v)


def _strlist(v):
    if isinstance(v, (str, int)) and not isinstance(v, bool):
        return [str(v)]
    if not isinstance(v, list):
        raise ValueError(f"expected a list, got {v!r}")
    return [_str(x) for x in v]


def _range(conv):
    def f(v):
        if isinstance(v, list) and len(v) == 2:
            return (conv(v[0]), conv(v[1]))
        x = conv(v)
        return (x, x)
    return f


def _dataclass_from(reader: _Reader, cls, raw, path, base=None, convs=None):
    base = base if base is not None else cls()
    allowed = {f.name for f in fields(cls)}
    raw = reader.mapping(raw, path, allowed)
    changes = {}
    for f in fields(cls):
        if f.name in raw and f.name in (convs or {}):
            changes[f.name] = reader.get(raw, f.name, path, convs[f.name], getattr(base, f.name))
    return replace(base, **changes)


_DEFENSE_CONV = {
    "alpha": _num, "k_storm": _num, "baseline_windows": _int, "warmup": parse_duration,
    "dos_min_cells": _int, "k_plausibility": _num, "plausibility_alpha": _num,
    "plausibility_variance_alpha": _num, "bootstrap": _int, "jam_window": parse_duration,
    "jam_fraction": _num, "jam_min_expected": _int, "jam_grace": parse_duration, "v2v_ratio": _num,
    "attest_interval": parse_duration, "broadcast_interval": parse_duration,
    "controller_latency": parse_duration, "identity_age_limit": parse_duration,
}
_SECURITY_CONV = {
    "n_full": _int, "n_reuse": _int, "as_validity": parse_duration, "nas_validity": parse_duration,
    "packet_ceiling": _int, "keep_as_on_handover": _bool,
}
_TECH_CONV = {
    "capacity_per_cell_sector": _int, "uplink_rate": _int, "max_latency": parse_duration,
    "mobility_supported": _bool, "access_delay": parse_duration, "coverage_enhanced": _bool,
}
_PROFILE_CONV = {
    "report_size": _range(_int), "report_interval": _range(parse_duration), "transport": _str,
    "deadline": lambda v: None if v is None else parse_duration(v), "measure_mean": _num,
    "measure_sigma": _num, "measure_persistence": _num,
}


def _cells(r: _Reader, raw, path) -> list[CellSpec]:
    if raw is None:
        return [CellSpec("cell0", enb="enb0")]
    if isinstance(raw, int) and not isinstance(raw, bool):
        return [CellSpec(f"cell{i}", enb=f"enb{i}") for i in range(raw)]
    if not isinstance(raw, list):
        r.err(path, "expected a cell count or a list of cells")
        return []
    out = []
    for i, c in enumerate(raw):
        p = path + (i,)
        if isinstance(c, str):
            out.append(CellSpec(c, enb=f"enb-{c}"))
            continue
        c = r.mapping(c, p, {"id", "techs", "enb"})
        cid = r.get(c, "id", p, _str, f"cell{i}")
        techs = r.get(c, "techs", p, _strlist, list(DEFAULT_TECHS))
        out.append(CellSpec(cid, techs, r.get(c, "enb", p, _str, f"enb-{cid}")))
    return out


def _targets(r: _Reader, raw, path, groups: list[DeviceGroup]):
    """A target list, or ``{group: <prefix>, count: n}`` meaning the group's first n devices.

    Placement is round-robin over the group's cells, so the first n devices
    cover the cells as evenly as possible.
    """
    if isinstance(raw, dict):
        raw = r.mapping(raw, path, {"group", "count"})
        prefix = r.get(raw, "group", path, _str, "")
        n = r.get(raw, "count", path, _int, 0)
        for g in groups:
            if g.prefix == prefix:
                ids = g.ids()
                if n > len(ids):
                    r.err(path + ("count",), f"group {prefix!r} has only {len(ids)} devices")
                    n = len(ids)
                return ids[:n]
        r.err(path + ("group",), f"no device group with prefix {prefix!r}")
        return []
    try:
        return _strlist(raw)
    except ValueError as e:
        r.err(path, str(e))
        return []


def config_from_dict(data, lines: dict[tuple, int] | None = None) -> ScenarioConfig:
    r = _Reader(lines or {})
    top = r.mapping(data, (), {"version", "seed", "duration", "window", "topology", "devices", "servers",
                               "traffic", "security", "features", "defense", "command_whitelist",
                               "congestion", "attacks"})
    version = top.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        r.err(("version",), f"unsupported schema version {version!r} (expected {SCHEMA_VERSION})")
    cfg = ScenarioConfig()
    cfg.seed = r.get(top, "seed", (), _int, 0)
    cfg.duration = r.get(top, "duration", (), parse_duration, DAY)
    cfg.window = r.get(top, "window", (), parse_duration, 5 * MINUTE)

    topo = r.mapping(top.get("topology"), ("topology",), {"cells", "cell_size_m", "techs", "cloudlets"})
    cfg.cells = _cells(r, topo.get("cells"), ("topology", "cells"))
    cfg.cell_size_m = r.get(topo, "cell_size_m", ("topology",), _num, 1000.0)
    tech_raw = r.mapping(topo.get("techs"), ("topology", "techs"), set(DEFAULT_TECHS))
    for name, over in tech_raw.items():
        cfg.techs[name] = _dataclass_from(r, AccessTech, over, ("topology", "techs", name),
                                          DEFAULT_TECHS[name], _TECH_CONV)
    cl_raw = topo.get("cloudlets")
    if cl_raw is not None:
        if not isinstance(cl_raw, list):
            r.err(("topology", "cloudlets"), "expected a list")
            cl_raw = []
        for i, c in enumerate(cl_raw):
            p = ("topology", "cloudlets", i)
            c = r.mapping(c, p, {"id", "cells", "services"})
            cfg.cloudlets.append(CloudletSpec(r.get(c, "id", p, _str, f"cloudlet{i}"),
                                              r.get(c, "cells", p, _strlist, []),
                                              r.get(c, "services", p, _strlist, list(SERVICES))))
    else:
        cfg.cloudlets = [CloudletSpec("cloudlet0", cfg.cell_ids())]

    dev_raw = top.get("devices") or []
    if not isinstance(dev_raw, list):
        r.err(("devices",), "expected a list of device groups")
        dev_raw = []
    for i, d in enumerate(dev_raw):
        p = ("devices", i)
        d = r.mapping(d, p, {f.name for f in fields(DeviceGroup)} | {"id"})
        domain = r.get(d, "domain", p, _str, "")
        if "domain" not in d:
            r.err(p, "missing field domain")
        g = DeviceGroup(domain)
        g.count = r.get(d, "count", p, _int, 1)
        g.tech = r.get(d, "tech", p, _str, DEFAULT_TECH.get(domain, ""))
        if "id" in d:
            g.prefix = r.get(d, "id", p, _str, "")
            if g.count != 1:
                r.err(p + ("id",), "an explicit id needs count 1")
        else:
            g.prefix = r.get(d, "prefix", p, _str, f"{domain.lower()}-" if len(dev_raw) == 1 else
                             f"{domain.lower()}{i}-")
        g.cells = r.get(d, "cells", p, _strlist, [])
        g.speed = r.get(d, "speed", p, _num, 0.0)
        g.peer_group = r.get(d, "peer_group", p, lambda v: None if v is None else _str(v), None)
        g.mission_critical = r.get(d, "mission_critical", p, _bool, False)
        g.rogue = r.get(d, "rogue", p, _bool, False)
        cfg.devices.append(g)
    cfg.servers = r.get(top, "servers", (), _strlist, [])

    tr = r.mapping(top.get("traffic"), ("traffic",), {"diurnal_amplitude", "registration_lead", "profiles"})
    cfg.traffic.diurnal_amplitude = r.get(tr, "diurnal_amplitude", ("traffic",), _num, 0.0)
    cfg.traffic.registration_lead = r.get(tr, "registration_lead", ("traffic",), parse_duration, SECOND)
    prof_raw = r.mapping(tr.get("profiles"), ("traffic", "profiles"), set(DOMAINS))
    for dom, over in prof_raw.items():
        p = ("traffic", "profiles", dom)
        over = r.mapping(over, p, set(_PROFILE_CONV))
        base = DEFAULT_PROFILES[dom]
        changes = {k: r.get(over, k, p, conv, getattr(base, k)) for k, conv in _PROFILE_CONV.items() if k in over}
        try:
            cfg.traffic.profiles[dom] = replace(base, **changes)
        except ValueError as e:
            r.err(p, str(e))

    cfg.security = _dataclass_from(r, SecurityParams, top.get("security"), ("security",), None, _SECURITY_CONV)
    feat = r.mapping(top.get("features"), ("features",), set(FEATURES))
    for name in FEATURES:
        cfg.features[name] = r.get(feat, name, ("features",), _bool, True)

    draw = top.get("defense")
    resp = None
    if isinstance(draw, dict) and "response" in draw:
        draw = dict(draw)
        resp = draw.pop("response")
    cfg.defense = _dataclass_from(r, DefenseParams, draw, ("defense",), None, _DEFENSE_CONV)
    if resp is not None:
        cfg.defense.response = _dataclass_from(r, ResponseParams, resp, ("defense", "response"), None,
                                               {"isolate_peers": _bool, "report": _bool})
    cfg.command_whitelist = r.get(top, "command_whitelist", (), _strlist, cfg.command_whitelist)

    for i, c in enumerate(top.get("congestion") or []):
        p = ("congestion", i)
        c = r.mapping(c, p, {"cells", "start", "end", "load_multiplier", "flagged"})
        cfg.congestion.append(CongestionSpec(r.get(c, "cells", p, _strlist, []),
                                             r.get(c, "start", p, parse_duration, 0),
                                             r.get(c, "end", p, parse_duration, 0),
                                             r.get(c, "load_multiplier", p, _num, 3.0),
                                             r.get(c, "flagged", p, _bool, True)))

    att_raw = top.get("attacks") or []
    if not isinstance(att_raw, list):
        r.err(("attacks",), "expected a list")
        att_raw = []
    for i, a in enumerate(att_raw):
        p = ("attacks", i)
        a = r.mapping(a, p, {"kind", "targets", "start", "end", "params"})
        kind = r.get(a, "kind", p, _str, "")
        targets = _targets(r, a.get("targets", []), p + ("targets",), cfg.devices)
        start = r.get(a, "start", p, parse_duration, 0)
        end = r.get(a, "end", p, parse_duration, cfg.duration)
        params = a.get("params") or {}
        if not isinstance(params, dict):
            r.err(p + ("params",), "expected a mapping")
            params = {}
        try:
            cfg.attacks.append(AttackSpec(kind, targets, start, end, dict(params)))
        except ValueError as e:
            r.err(p, str(e))

    r.errors.extend(validate(cfg))
    if r.errors:
        raise ValidationError(r.errors)
    return cfg


def validate(cfg: ScenarioConfig) -> list[str]:
    """Semantic checks on a structurally sound config; returns every problem."""
    errs: list[str] = []
    if cfg.duration <= 0:
        errs.append(f"duration: must be positive, got {cfg.duration} ms")
    if cfg.window <= 0:
        errs.append("window: must be positive")
    cell_ids = cfg.cell_ids()
    cells = {c.id: c for c in cfg.cells}
    if len(cells) != len(cell_ids):
        errs.append("topology.cells: duplicate cell ids")
    if not cells:
        errs.append("topology.cells: at least one cell is required")
    for c in cfg.cells:
        for t in c.techs:
            if t not in cfg.techs:
                errs.append(f"topology.cells.{c.id}: unknown access technology {t!r}")
    for cl in cfg.cloudlets:
        if not cl.cells:
            errs.append(f"cloudlet {cl.id}: covered cells must not be empty")
        for c in cl.cells:
            if c not in cells:
                errs.append(f"cloudlet {cl.id}: unknown cell {c!r}")
        for s in cl.services:
            if s not in SERVICES:
                errs.append(f"cloudlet {cl.id}: unknown service {s!r}")
    owners: dict[str, str] = {}
    for cl in cfg.cloudlets:
        for c in cl.cells:
            if c in owners:
                errs.append(f"cell {c} is covered by both {owners[c]} and {cl.id}")
            owners[c] = cl.id
    sec = cfg.security
    if not 1 < sec.n_reuse < sec.n_full:
        errs.append(f"security: need 1 < n_reuse < n_full (got {sec.n_reuse}, {sec.n_full})")
    d = cfg.defense
    for name in ("alpha", "plausibility_alpha", "plausibility_variance_alpha"):
        if not 0 < getattr(d, name) <= 1:
            errs.append(f"defense.{name}: must lie in (0, 1]")
    if d.k_storm <= 0 or d.k_plausibility <= 0:
        errs.append("defense: thresholds k must be positive")
    if not 0 < d.jam_fraction <= 1:
        errs.append("defense.jam_fraction: must lie in (0, 1]")
    if d.bootstrap < 2:
        errs.append("defense.bootstrap: need at least 2 samples")

    occupancy: dict[tuple[str, str], int] = {}
    seen: set[str] = set()
    for g in cfg.devices:
        if g.domain not in DOMAINS:
            errs.append(f"devices: unknown domain {g.domain!r}")
            continue
        if g.tech not in cfg.techs:
            errs.append(f"devices.{g.prefix}: unknown access technology {g.tech!r}")
            continue
        if g.count < 1:
            errs.append(f"devices.{g.prefix}: count must be >= 1")
            continue
        if g.speed and g.domain != "ITS":
            errs.append(f"devices.{g.prefix}: only ITS devices move")
        if g.speed < 0 or g.speed > MAX_ITS_SPEED_KMH:
            errs.append(f"devices.{g.prefix}: speed {g.speed} km/h outside [0, {MAX_ITS_SPEED_KMH:g}]")
        if g.speed and not cfg.techs[g.tech].mobility_supported:
            errs.append(f"devices.{g.prefix}: {g.tech} does not support mobility")
        group_cells = cfg.device_cells(g)
        if not group_cells:
            errs.append(f"devices.{g.prefix}: no cell offers a {g.tech} sector")
            continue
        for c in group_cells:
            if c not in cells:
                errs.append(f"devices.{g.prefix}: unknown cell {c!r}")
            elif g.tech not in cells[c].techs:
                errs.append(f"devices.{g.prefix}: cell {c} has no {g.tech} sector")
        ids = g.ids()
        dup = seen.intersection(ids)
        if dup:
            errs.append(f"devices.{g.prefix}: duplicate device ids, e.g. {sorted(dup)[0]}")
        seen.update(ids)
        n = len(group_cells)
        for j, c in enumerate(group_cells):
            share = g.count // n + (1 if j < g.count % n else 0)
            occupancy[(c, g.tech)] = occupancy.get((c, g.tech), 0) + share
        prof = cfg.traffic.profiles[g.domain]
        if prof.transport == "nas_small_data" and prof.report_size[1] > sec.packet_ceiling:
            errs.append(f"traffic.profiles.{g.domain}: nas_small_data reports up to {prof.report_size[1]} B "
                        f"exceed the {sec.packet_ceiling} B packet ceiling; use stored_context_data")
    for (c, t), n in sorted(occupancy.items()):
        cap = cfg.techs[t].capacity_per_cell_sector
        if n > cap:
            errs.append(f"cell {c}: {n:,} {t} devices exceed the sector capacity of {cap:,}")
    for s in cfg.servers:
        if s in seen or s in cells:
            errs.append(f"servers: id {s!r} clashes with a device or cell")

    for i, c in enumerate(cfg.congestion):
        for cell in c.cells:
            if cell not in cells:
                errs.append(f"congestion.{i}: unknown cell {cell!r}")
        if not c.start < c.end:
            errs.append(f"congestion.{i}: need start < end")
        if c.load_multiplier <= 0:
            errs.append(f"congestion.{i}: load_multiplier must be positive")

    compromised_at: dict[str, int] = {}
    for i, a in enumerate(cfg.attacks):
        where = f"attacks.{i} ({a.kind})"
        if not a.targets and a.kind != "UnauthorizedCommand":
            errs.append(f"{where}: no targets")
        if a.kind in ("Jamming", "Tracking"):
            for t in a.targets:
                if t not in cells:
                    errs.append(f"{where}: unknown cell {t!r}")
            if a.kind == "Jamming" and a.params.get("mode", "uplink_data_only_outage") not in JAM_MODES:
                errs.append(f"{where}: unknown jam mode {a.params.get('mode')!r}")
            continue
        for t in a.targets:
            if t not in seen and not (a.kind == "CompromiseDevice" and t in cfg.servers):
                errs.append(f"{where}: unknown target {t!r}")
        if a.kind == "CompromiseDevice":
            for t in a.targets:
                compromised_at.setdefault(t, a.start)
            p = a.params.get("evasion_p", 0.0)
            if not isinstance(p, (int, float)) or not 0 <= p <= 1:
                errs.append(f"{where}: evasion_p must lie in [0, 1]")
        elif a.kind in ("SignalingStorm", "FalsifiedMeasurement"):
            for t in a.targets:
                if t in seen and compromised_at.get(t, a.start + 1) > a.start:
                    errs.append(f"{where}: target {t} is not compromised by an earlier CompromiseDevice attack")
        elif a.kind == "UnauthorizedCommand":
            server = a.params.get("server")
            comp_servers = [s for s in cfg.servers if compromised_at.get(s, a.start + 1) <= a.start]
            if server is not None and server not in comp_servers or server is None and not comp_servers:
                errs.append(f"{where}: no compromised application server")
    return errs


def load_config(text: str) -> ScenarioConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ParseError(str(getattr(e, "problem", e)), mark.line + 1 if mark else None) from None
    if data is None:
        data = {}
    lines = _line_index(node) if node is not None else {}
    return config_from_dict(data, lines)


def parse_scenario(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return load_config(fh.read())


# -- emission --------------------------------------------------------------


def config_to_dict(cfg: ScenarioConfig) -> dict:
    """Full, explicit form: every default is written out."""
    dur = format_duration
    out = {
        "version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "duration": dur(cfg.duration),
        "window": dur(cfg.window),
        "topology": {
            "cells": [{"id": c.id, "techs": list(c.techs), "enb": c.enb} for c in cfg.cells],
            "cell_size_m": cfg.cell_size_m,
            "techs": {name: {"capacity_per_cell_sector": t.capacity_per_cell_sector,
                             "uplink_rate": t.uplink_rate, "max_latency": dur(t.max_latency),
                             "mobility_supported": t.mobility_supported, "access_delay": dur(t.access_delay),
                             "coverage_enhanced": t.coverage_enhanced}
                      for name, t in cfg.techs.items()},
            "cloudlets": [{"id": c.id, "cells": list(c.cells), "services": list(c.services)}
                          for c in cfg.cloudlets],
        },
        "devices": [],
        "servers": list(cfg.servers),
        "traffic": {
            "diurnal_amplitude": cfg.traffic.diurnal_amplitude,
            "registration_lead": dur(cfg.traffic.registration_lead),
            "profiles": {d: {"report_size": list(p.report_size),
                             "report_interval": [dur(x) for x in p.report_interval],
                             "transport": p.transport,
                             "deadline": None if p.deadline is None else dur(p.deadline),
                             "measure_mean": p.measure_mean, "measure_sigma": p.measure_sigma,
                             "measure_persistence": p.measure_persistence}
                         for d, p in cfg.traffic.profiles.items()},
        },
        "security": {k: (dur(v) if k.endswith("validity") else v) for k, v in asdict(cfg.security).items()},
        "features": dict(cfg.features),
        "defense": {k: (dur(v) if k in _DEFENSE_CONV and _DEFENSE_CONV[k] is parse_duration else v)
                    for k, v in asdict(cfg.defense).items()},
        "command_whitelist": list(cfg.command_whitelist),
        "congestion": [{"cells": list(c.cells), "start": dur(c.start), "end": dur(c.end),
                        "load_multiplier": c.load_multiplier, "flagged": c.flagged} for c in cfg.congestion],
        "attacks": [{"kind": a.kind, "targets": list(a.targets), "start": dur(a.start), "end": dur(a.end),
                     "params": dict(a.params)} for a in cfg.attacks],
    }
    for g in cfg.devices:
        d = {"domain": g.domain, "count": g.count, "tech": g.tech, "prefix": g.prefix, "cells": list(g.cells),
             "speed": g.speed, "peer_group": g.peer_group, "mission_critical": g.mission_critical,
             "rogue": g.rogue}
        out["devices"].append(d)
    return out


def emit_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=None, width=100)
