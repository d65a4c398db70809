"""Cells, access technologies, devices and the C-SGN load counters.

Radio propagation is not modelled. An uplink transmission takes
``serialization + access_delay`` where serialization is ``bytes*8/rate``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from .engine import MINUTE, SECOND, Engine
from .errors import (
    AlreadyAttached,
    CapacityExceeded,
    Jammed,
    NotAttached,
    SameCell,
    UnknownCell,
    UnknownScope,
)

DOMAINS = ("SmartGrid", "ICS", "ITS", "SmartHealthcare", "SmartEnvironment", "SmartHome")

CLEAR = "clear"
FULL_OUTAGE = "full_outage"
DATA_ONLY_OUTAGE = "uplink_data_only_outage"
JAM_MODES = (FULL_OUTAGE, DATA_ONLY_OUTAGE)

SIGNALING = "signaling"
DATA = "data"

MAX_ITS_SPEED_KMH = 250.0


@dataclass(frozen=True)
class AccessTech:
    name: str
    capacity_per_cell_sector: int
    uplink_rate: int  # bits/s
    max_latency: int  # ms
    mobility_supported: bool
    access_delay: int  # ms
    coverage_enhanced: bool = False  # carried for eMTC, no behavioural effect


DEFAULT_TECHS: dict[str, AccessTech] = {
    "EC-GSM-IoT": AccessTech("EC-GSM-IoT", 50_000, 70_000, 10 * SECOND, False, 50),
    "eMTC": AccessTech("eMTC", 50_000, 1_000_000, 10 * SECOND, True, 50, coverage_enhanced=True),
    "NB-IoT": AccessTech("NB-IoT", 52_547, 50_000, 10 * SECOND, False, 50),
    "LTE-V2V": AccessTech("LTE-V2V", 5_000, 1_000_000, 100, True, 10),
}


def serialization_ms(nbytes: int, rate_bps: int) -> int:
    """Whole milliseconds needed to clock ``nbytes`` out at ``rate_bps``."""
    return -(-nbytes * 8 * 1000 // rate_bps)


def mean_handover_interval_ms(speed_kmh: float, cell_size_m: float) -> float:
    """Time to cross one cell of a 1-D strip at constant speed."""
    if speed_kmh <= 0:
        return math.inf
    return cell_size_m / (speed_kmh / 3.6) * 1000.0


@dataclass(slots=True)
class Device:
    id: str
    domain: str
    tech: AccessTech
    permanent_id: str
    current_temporary_id: str = ""
    attached_cell: str | None = None
    sector: int | None = None
    compromised: bool = False
    compromised_at: int | None = None
    energy_milli: int = 0  # 1 unit == 1000 milli-units
    speed: float = 0.0  # km/h, ITS only
    suspended: bool = False
    group: str = ""
    peer_group: str | None = None
    mission_critical: bool = False

    @property
    def energy_spent(self) -> float:
        return self.energy_milli / 1000.0


@dataclass
class Sector:
    tech: AccessTech
    attached: set[str] = field(default_factory=set)


@dataclass
class Cell:
    id: str
    enb: str
    sectors: list[Sector]
    index: int = 0  # position on the mobility strip
    jam_state: str = CLEAR
    jam_until: int = 0
    jam_generation: int = 0


@dataclass(slots=True)
class LoadCounters:
    window_start: int = 0
    signaling_msgs: int = 0
    data_msgs: int = 0
    data_bytes: int = 0
    authenticated_devices: int = 0


@dataclass(frozen=True)
class AttachResult:
    device: str
    cell: str
    sector: int
    count: int  # sector occupancy after the attach


@dataclass(frozen=True)
class DeliveryOutcome:
    status: str  # "Delivered" | "DeadlineMissed"
    sent_at: int
    delivered_at: int
    latency: int
    deadline: int


@dataclass(frozen=True)
class HandoverResult:
    device: str
    from_cell: str
    to_cell: str
    sector: int


class Csgn:
    """Core gateway tallies: cumulative and per-window, per cell and device."""

    def __init__(self) -> None:
        self.nas_contexts: dict = {}  # filled by the security manager
        self.totals: dict[str, list[int]] = {}  # scope -> [sig, data, bytes]
        self.by_type: dict[tuple[str, str], int] = {}
        self.window: dict[str, list[int]] = {}
        self.v2v_window: dict[str, list[int]] = {}
        self.last_window: dict[str, list[int]] = {}
        self.last_v2v: dict[str, list[int]] = {}
        self.last_auth: dict[str, int] = {}
        self.window_start = 0
        self.last_window_start = 0
        self.completed_windows = 0


class NetworkModel:
    def __init__(self, engine: Engine, window: int = 5 * MINUTE, techs: dict[str, AccessTech] | None = None):
        self.engine = engine
        self.window = window
        self.techs = dict(techs or DEFAULT_TECHS)
        self.cells: dict[str, Cell] = {}
        self.strip: list[str] = []
        self.devices: dict[str, Device] = {}
        self.csgn = Csgn()
        self.rejections: dict[str, int] = {}
        self.handover_hooks: list[Callable[[Device, str, str], None]] = []
        self.watchers: dict = {}  # cell -> observer with note_signaling/note_data
        engine.on("jam_end", self._on_jam_end)

    # -- topology -----------------------------------------------------------

    def add_cell(self, cell_id: str, enb: str, techs: list[str]) -> Cell:
        cell = Cell(cell_id, enb, [Sector(self.techs[t]) for t in techs], index=len(self.strip))
        self.cells[cell_id] = cell
        self.strip.append(cell_id)
        return cell

    def add_device(self, dev: Device) -> Device:
        if dev.domain == "ITS" and dev.speed > MAX_ITS_SPEED_KMH:
            raise ValueError(f"{dev.id}: ITS speed {dev.speed} km/h exceeds {MAX_ITS_SPEED_KMH}")
        self.devices[dev.id] = dev
        return dev

    def _cell(self, cell_id: str) -> Cell:
        try:
            return self.cells[cell_id]
        except KeyError:
            raise UnknownCell(cell_id) from None

    def _sector_for(self, cell: Cell, dev: Device, sector: int | None) -> int:
        if sector is not None:
            if not 0 <= sector < len(cell.sectors):
                raise UnknownCell(f"{cell.id} has no sector {sector}")
            if cell.sectors[sector].tech.name != dev.tech.name:
                raise ValueError(f"sector {sector} of {cell.id} is {cell.sectors[sector].tech.name}, "
                                 f"device {dev.id} uses {dev.tech.name}")
            return sector
        for i, s in enumerate(cell.sectors):
            if s.tech.name == dev.tech.name:
                return i
        raise CapacityExceeded(f"{cell.id} has no {dev.tech.name} sector")

    def next_cell(self, cell_id: str) -> str:
        i = self.cells[cell_id].index
        return self.strip[(i + 1) % len(self.strip)]

    # -- attachment ---------------------------------------------------------

    def attach_device(self, dev: Device, cell_id: str, sector: int | None = None) -> AttachResult:
        if dev.attached_cell is not None:
            raise AlreadyAttached(dev.id)
        cell = self._cell(cell_id)
        idx = self._sector_for(cell, dev, sector)
        sec = cell.sectors[idx]
        if len(sec.attached) >= sec.tech.capacity_per_cell_sector:
            self.rejections[cell_id] = self.rejections.get(cell_id, 0) + 1
            raise CapacityExceeded(
                f"{cell_id}/{idx}: {sec.tech.name} sector full "
                f"({sec.tech.capacity_per_cell_sector} devices)")
        sec.attached.add(dev.id)
        dev.attached_cell = cell_id
        dev.sector = idx
        return AttachResult(dev.id, cell_id, idx, len(sec.attached))

    def detach_device(self, dev: Device) -> None:
        if dev.attached_cell is None:
            raise NotAttached(dev.id)
        self.cells[dev.attached_cell].sectors[dev.sector].attached.discard(dev.id)
        dev.attached_cell = None
        dev.sector = None

    def attached_count(self, cell_id: str, sector: int = 0) -> int:
        return len(self._cell(cell_id).sectors[sector].attached)

    def handover(self, dev: Device, to_cell: str) -> HandoverResult:
        if dev.attached_cell is None:
            raise NotAttached(dev.id)
        target = self._cell(to_cell)
        if to_cell == dev.attached_cell:
            raise SameCell(f"{dev.id} already in {to_cell}")
        idx = self._sector_for(target, dev, None)
        sec = target.sectors[idx]
        if len(sec.attached) >= sec.tech.capacity_per_cell_sector:
            self.rejections[to_cell] = self.rejections.get(to_cell, 0) + 1
            raise CapacityExceeded(f"{to_cell}/{idx} full")
        old = dev.attached_cell
        self.cells[old].sectors[dev.sector].attached.discard(dev.id)
        sec.attached.add(dev.id)
        dev.attached_cell = to_cell
        dev.sector = idx
        for hook in self.handover_hooks:
            hook(dev, old, to_cell)
        self.engine.schedule(self.engine.now, dev.id, "aka_invoke", "handover")
        return HandoverResult(dev.id, old, to_cell, idx)

    # -- jamming ------------------------------------------------------------

    def apply_jamming(self, cell_id: str, mode: str, duration: int) -> None:
        if duration <= 0:
            raise ValueError(f"jamming duration must be positive, got {duration}")
        if mode not in JAM_MODES:
            raise ValueError(f"unknown jam mode {mode!r}")
        cell = self._cell(cell_id)
        cell.jam_generation += 1
        cell.jam_state = mode
        cell.jam_until = self.engine.now + duration
        self.engine.schedule(cell.jam_until, cell_id, "jam_end", cell.jam_generation)

    def _on_jam_end(self, ev) -> None:
        cell = self.cells[ev.target]
        if cell.jam_generation == ev.data:
            cell.jam_state = CLEAR

    def jam_state(self, cell_id: str) -> str:
        cell = self.cells[cell_id]
        if cell.jam_state != CLEAR and self.engine.now >= cell.jam_until:
            return CLEAR
        return cell.jam_state

    def blocks(self, cell_id: str, msg_class: str) -> bool:
        state = self.jam_state(cell_id)
        return state == FULL_OUTAGE or (state == DATA_ONLY_OUTAGE and msg_class == DATA)

    def check_radio(self, dev: Device, msg_class: str) -> None:
        if dev.attached_cell is None:
            raise NotAttached(dev.id)
        if self.blocks(dev.attached_cell, msg_class):
            raise Jammed(f"{dev.attached_cell} under {self.jam_state(dev.attached_cell)}")

    # -- transmission -------------------------------------------------------

    def transmit_uplink(self, dev: Device, nbytes: int, msg_class: str = DATA,
                        deadline: int | None = None) -> DeliveryOutcome:
        self.check_radio(dev, msg_class)
        tech = dev.tech
        latency = serialization_ms(nbytes, tech.uplink_rate) + tech.access_delay
        budget = tech.max_latency if deadline is None else min(deadline, tech.max_latency)
        now = self.engine.now
        status = "Delivered" if latency <= budget else "DeadlineMissed"
        return DeliveryOutcome(status, now, now + latency, latency, budget)

    # Downlink reuses the uplink delay model.
    transmit_downlink = transmit_uplink

    def charge(self, dev: Device, signaling_msgs: int = 0, nbytes: int = 0) -> None:
        dev.energy_milli += 1000 * signaling_msgs + nbytes

    # -- C-SGN counters -----------------------------------------------------

    def _bump(self, table: dict, key: str, i: int, n: int) -> None:
        row = table.get(key)
        if row is None:
            row = table[key] = [0, 0, 0]
        row[i] += n

    def count_signaling(self, dev: Device, msgs: int, msg_type: str, cell: str | None = None) -> None:
        cell = cell or dev.attached_cell
        c = self.csgn
        for table in (c.window, c.totals):
            self._bump(table, cell, 0, msgs)
            self._bump(table, dev.id, 0, msgs)
        key = (cell, msg_type)
        c.by_type[key] = c.by_type.get(key, 0) + msgs
        w = self.watchers.get(cell)
        if w is not None:
            w.note_signaling(cell, msgs)

    def count_data(self, dev: Device, nbytes: int, cell: str | None = None) -> None:
        cell = cell or dev.attached_cell
        c = self.csgn
        for table in (c.window, c.totals):
            row = table.get(cell)
            if row is None:
                row = table[cell] = [0, 0, 0]
            row[1] += 1
            row[2] += nbytes
            row = table.get(dev.id)
            if row is None:
                row = table[dev.id] = [0, 0, 0]
            row[1] += 1
            row[2] += nbytes
        if dev.tech.name == "LTE-V2V":
            row = c.v2v_window.get(cell)
            if row is None:
                row = c.v2v_window[cell] = [0, 0, 0]
            row[1] += 1
            row[2] += nbytes
        w = self.watchers.get(cell)
        if w is not None:
            w.note_data(cell, dev.id)

    def roll_window(self, authenticated_by_cell: dict[str, int] | None = None) -> None:
        """Close the current counting window at the engine clock."""
        c = self.csgn
        c.last_window, c.window = c.window, {}
        c.last_v2v, c.v2v_window = c.v2v_window, {}
        c.last_auth = dict(authenticated_by_cell or {})
        c.last_window_start = c.window_start
        c.window_start = self.engine.now
        c.completed_windows += 1

    def snapshot_load(self, scope: str, window: int | None = None, tech: str | None = None) -> LoadCounters:
        if window is not None and window != self.window:
            raise ValueError(f"counters are kept for {self.window} ms windows, not {window}")
        if scope not in self.cells and scope not in self.devices:
            raise UnknownScope(scope)
        c = self.csgn
        if tech is not None:
            if tech != "LTE-V2V":
                raise ValueError("per-tech snapshots are kept for LTE-V2V only")
            row = c.last_v2v.get(scope, (0, 0, 0))
        else:
            row = c.last_window.get(scope, (0, 0, 0))
        return LoadCounters(c.last_window_start, row[0], row[1], row[2], c.last_auth.get(scope, 0))

    def totals(self, scope: str) -> LoadCounters:
        row = self.csgn.totals.get(scope, (0, 0, 0))
        return LoadCounters(0, row[0], row[1], row[2], 0)


