"""AKA state machine and the AS/NAS security-context lifecycle.

Cryptography is tokenised. "Encrypting" a message tags it with
``(key_id, counter)``; the receiver "decrypts" when it holds a context with
the same ``key_id`` and the counter is fresh. Each side keeps its own copy of
a context. For a direction, the sender's copy holds the last counter sent and
the receiver's copy the last counter accepted.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

from .engine import DAY, HOUR
from .errors import (
    AuthFailure,
    ContextExpired,
    CounterReplay,
    NoContext,
    NoNasContext,
    NoStoredContext,
    NotAttached,
    NotAuthenticated,
    PacketTooLarge,
)
from .network import DATA, SIGNALING, Device, NetworkModel
from .trace import NullTrace

AS = "AS"
NAS = "NAS"
UP = "up"
DOWN = "down"

IDLE = "Idle"
CHALLENGE_SENT = "ChallengeSent"
AUTHENTICATED = "Authenticated"
FAILED = "Failed"

_AKA_TRANSITIONS = {
    IDLE: {CHALLENGE_SENT},
    CHALLENGE_SENT: {AUTHENTICATED, FAILED},
    AUTHENTICATED: set(),
    FAILED: set(),
}

# challenge plus the rejected response
AKA_FAILURE_MSGS = 2


def token(*parts) -> str:
    return hashlib.blake2b("/".join(map(str, parts)).encode(), digest_size=8).hexdigest()


@dataclass(slots=True)
class SecurityContext:
    kind: str
    device: str
    key_id: str
    algorithms: tuple[str, str]
    uplink_counter: int = 0
    downlink_counter: int = 0
    next_hop: str | None = None
    established_at: int = 0
    validity_deadline: int = 0
    reuse_count: int = 0

    def counter(self, direction: str) -> int:
        return self.uplink_counter if direction == UP else self.downlink_counter


@dataclass(slots=True)
class RootKey:
    device_id: str
    K: str


@dataclass(slots=True)
class AkaSession:
    device: str
    started_at: int
    state: str = IDLE

    def advance(self, new_state: str) -> None:
        if new_state not in _AKA_TRANSITIONS[self.state]:
            raise RuntimeError(f"illegal AKA transition {self.state} -> {new_state}")
        self.state = new_state


@dataclass(slots=True)
class Packet:
    """An over-the-air message protected by one security context."""

    device: str
    ctx_kind: str
    key_id: str
    direction: str
    counter: int
    nbytes: int
    sent_at: int
    transport: str
    cell: str
    report_no: int = -1
    value: float | None = None
    command: str | None = None
    storm: bool = False


class SecurityManager:
    """Owns root keys, AKA sessions and both copies of every context."""

    def __init__(
        self,
        network: NetworkModel,
        seed: int = 0,
        n_full: int = 8,
        n_reuse: int = 3,
        as_validity: int = 24 * HOUR,
        nas_validity: int = 7 * DAY,
        rotate_identity: bool = True,
        packet_ceiling: int = 1500,
        keep_as_on_handover: bool = False,
        trace=None,
        algorithms: tuple[str, str] = ("128-EEA2", "128-EIA2"),
    ):
        if not 1 < n_reuse < n_full:
            raise ValueError(f"need 1 < n_reuse < n_full, got n_reuse={n_reuse}, n_full={n_full}")
        self.network = network
        self.engine = network.engine
        self.seed = seed
        self.n_full = n_full
        self.n_reuse = n_reuse
        self.as_validity = as_validity
        self.nas_validity = nas_validity
        self.rotate_identity = rotate_identity
        self.packet_ceiling = packet_ceiling
        self.keep_as_on_handover = keep_as_on_handover
        self.algorithms = algorithms
        self.trace = trace or NullTrace()

        self.hss: dict[str, RootKey] = {}
        self.sim: dict[str, RootKey] = {}
        self.net: dict[str, dict[str, SecurityContext]] = {}
        self.dev: dict[str, dict[str, SecurityContext]] = {}
        self.sessions: dict[str, AkaSession] = {}
        self.generation: dict[str, int] = {}
        self.identity_generation: dict[str, int] = {}
        self.issued_tokens: set[str] = set()
        self.identity_at: dict[str, int] = {}
        self.identity_hooks: list[Callable[[str, str], None]] = []
        self.seen_keys: set[str] = set()
        self.listeners: list[Callable[[str, SecurityContext, str], None]] = []
        self.stats = {"aka": 0, "aka_failed": 0, "reuse": 0, "expired": 0, "revoked": 0,
                      "replay_rejects": 0, "as_created": 0, "nas_created": 0}

        network.csgn.nas_contexts = _NasView(self.net)
        network.handover_hooks.append(self._on_handover)

    # -- provisioning -------------------------------------------------------

    def provision(self, dev: Device, rogue: bool = False) -> None:
        """Create the HSS record and SIM key; a rogue SIM carries a wrong K."""
        k = token(self.seed, dev.permanent_id, "K")
        self.hss[dev.id] = RootKey(dev.id, k)
        self.sim[dev.id] = RootKey(dev.id, token(self.seed, dev.permanent_id, "K-clone") if rogue else k)
        if not dev.current_temporary_id:
            self._issue_identity(dev)

    def _issue_identity(self, dev: Device) -> str:
        gen = self.identity_generation.get(dev.id, -1) + 1
        self.identity_generation[dev.id] = gen
        new = "T" + token(self.seed, dev.permanent_id, "tmsi", gen)
        while new in self.issued_tokens:  # never hand out a token twice
            gen += 1
            self.identity_generation[dev.id] = gen
            new = "T" + token(self.seed, dev.permanent_id, "tmsi", gen)
        self.issued_tokens.add(new)
        dev.current_temporary_id = new
        self.identity_at[dev.id] = self.engine.now
        for fn in self.identity_hooks:
            fn(dev.id, new)
        return new

    # -- queries ------------------------------------------------------------

    def context(self, dev_id: str, kind: str, side: str = "net") -> SecurityContext | None:
        table = self.net if side == "net" else self.dev
        return table.get(dev_id, {}).get(kind)

    def is_authenticated(self, dev_id: str) -> bool:
        ctx = self.context(dev_id, NAS)
        return ctx is not None and ctx.validity_deadline > self.engine.now

    def live_contexts(self) -> dict[tuple[str, str], tuple[int, int]]:
        """(device, kind) -> (validity_deadline, reuse_count) for every live context."""
        out = {}
        for dev_id, ctxs in self.net.items():
            for kind, ctx in ctxs.items():
                out[(dev_id, kind)] = (ctx.validity_deadline, ctx.reuse_count)
        return out

    def _notify(self, what: str, ctx: SecurityContext, cause: str = "") -> None:
        for fn in self.listeners:
            fn(what, ctx, cause)

    def _device(self, dev_id: str) -> Device:
        return self.network.devices[dev_id]

    def _signal(self, dev: Device, msgs: int, msg_type: str) -> None:
        self.network.charge(dev, msgs)
        self.network.count_signaling(dev, msgs, msg_type)

    # -- AKA ----------------------------------------------------------------

    def run_aka(self, dev_id: str, nas_only: bool = False, cause: str = "registration"):
        """Authenticate and establish fresh contexts.

        Returns ``(nas, as_)``; ``as_`` is None on the NAS-only path.
        Raises AuthFailure on a root-key mismatch, Jammed under full outage.
        """
        dev = self._device(dev_id)
        if dev.attached_cell is None:
            raise NotAttached(dev_id)
        if dev_id not in self.hss:
            raise AuthFailure(f"no HSS record for {dev_id}")
        now = self.engine.now
        try:
            self.network.check_radio(dev, SIGNALING)
        except Exception:
            self.network.charge(dev, 1)
            self.trace.emit(dev_id, "aka", cell=dev.attached_cell, domain=dev.domain, msgs=1,
                            result="jammed", cause=cause)
            raise
        session = AkaSession(dev_id, now)
        self.sessions[dev_id] = session
        session.advance(CHALLENGE_SENT)

        if self.sim[dev_id].K != self.hss[dev_id].K:
            session.advance(FAILED)
            self.stats["aka_failed"] += 1
            self._signal(dev, AKA_FAILURE_MSGS, "aka_failure")
            self.trace.emit(dev_id, "aka", cell=dev.attached_cell, domain=dev.domain,
                            msgs=AKA_FAILURE_MSGS, result="auth_failure", cause=cause)
            raise AuthFailure(f"{dev_id}: root key mismatch")

        session.advance(AUTHENTICATED)
        self.stats["aka"] += 1
        self._signal(dev, self.n_full, "aka")
        self.trace.emit(dev_id, "aka", cell=dev.attached_cell, domain=dev.domain, msgs=self.n_full,
                        result="ok", cause=cause)

        gen = self.generation.get(dev_id, 0) + 1
        self.generation[dev_id] = gen
        k = self.hss[dev_id].K
        nas = self._establish(dev, NAS, token(k, gen, NAS), None, now + self.nas_validity)
        as_ = None
        if nas_only:
            # a stale AS context cannot outlive a fresh NAS context
            if AS in self.net.get(dev_id, {}):
                self._remove(dev_id, AS, "replaced")
        else:
            as_ = self._establish(dev, AS, token(k, gen, AS), token(k, gen, "NH"), now + self.as_validity)
        if self.rotate_identity:
            self.rotate_temporary_identity(dev_id)
        return nas, as_

    def _establish(self, dev: Device, kind: str, key_id: str, next_hop, deadline: int) -> SecurityContext:
        now = self.engine.now
        assert key_id not in self.seen_keys, "key generation must be fresh"
        self.seen_keys.add(key_id)
        ctx = SecurityContext(kind, dev.id, key_id, self.algorithms, 0, 0, next_hop, now, deadline, 0)
        twin = SecurityContext(kind, dev.id, key_id, self.algorithms, 0, 0, next_hop, now, deadline, 0)
        self.net.setdefault(dev.id, {})[kind] = ctx
        self.dev.setdefault(dev.id, {})[kind] = twin
        self.stats["as_created" if kind == AS else "nas_created"] += 1
        self.trace.emit(dev.id, "ctx_created", ctx=kind, key=key_id, deadline=deadline)
        self._notify("established", ctx)
        return ctx

    # -- stored AS context --------------------------------------------------

    def service_request_stored_context(self, dev_id: str) -> SecurityContext:
        dev = self._device(dev_id)
        ctx = self.context(dev_id, AS)
        if ctx is None:
            raise NoStoredContext(dev_id)
        if self.engine.now >= ctx.validity_deadline:
            self.expire_or_revoke(dev_id, AS, "timer")
            raise ContextExpired(dev_id)
        self.network.check_radio(dev, SIGNALING)
        ctx.reuse_count += 1
        self.dev[dev_id][AS].reuse_count = ctx.reuse_count
        self.stats["reuse"] += 1
        self._signal(dev, self.n_reuse, "service_request")
        self.trace.emit(dev_id, "svc_req", cell=dev.attached_cell, domain=dev.domain, msgs=self.n_reuse,
                        reuse=ctx.reuse_count)
        self._notify("reused", ctx)
        return ctx

    # -- protected messages -------------------------------------------------

    def protect_uplink(self, dev_id: str, kind: str, nbytes: int, transport: str, **extra) -> Packet:
        """Device side: tag an uplink message with the next counter."""
        dctx = self.dev.get(dev_id, {}).get(kind)
        if dctx is None:
            raise (NoNasContext if kind == NAS else NoStoredContext)(dev_id)
        dctx.uplink_counter += 1
        dev = self._device(dev_id)
        return Packet(dev_id, kind, dctx.key_id, UP, dctx.uplink_counter, nbytes, self.engine.now,
                      transport, dev.attached_cell, **extra)

    def nas_small_data_transfer(self, dev_id: str, packet_bytes: int, **extra) -> Packet:
        """Send one IP packet inside the NAS signaling transaction.

        No AS context is needed. The returned packet is checked by the C-SGN
        in :meth:`receive_uplink`.
        """
        if packet_bytes > self.packet_ceiling:
            raise PacketTooLarge(f"{packet_bytes} B exceeds the {self.packet_ceiling} B single-packet ceiling")
        ctx = self.context(dev_id, NAS)
        if ctx is None or ctx.validity_deadline <= self.engine.now:
            raise NoNasContext(dev_id)
        dev = self._device(dev_id)
        # the packet rides on signaling but carries user data, so smart jamming drops it
        self.network.check_radio(dev, DATA)
        pkt = self.protect_uplink(dev_id, NAS, packet_bytes, "nas_small_data", **extra)
        self.network.charge(dev, 1, packet_bytes)
        self.network.count_signaling(dev, 1, "nas_small_data")
        self.trace.emit(dev_id, "nas_tx", cell=dev.attached_cell, domain=dev.domain, msgs=1,
                        bytes=packet_bytes, ctr=pkt.counter)
        return pkt

    def verify_counter(self, ctx: SecurityContext, direction: str, counter: int) -> bool:
        """Accept iff ``counter`` exceeds the last accepted one; update on accept."""
        if direction == UP:
            if counter > ctx.uplink_counter:
                ctx.uplink_counter = counter
                return True
            return False
        if counter > ctx.downlink_counter:
            ctx.downlink_counter = counter
            return True
        return False

    def receive_uplink(self, pkt: Packet) -> SecurityContext:
        """C-SGN side of an uplink packet. Raises CounterReplay on rejection."""
        ctx = self.context(pkt.device, pkt.ctx_kind)
        if ctx is None or ctx.key_id != pkt.key_id:
            self._reject(pkt, "unknown_key")
        if not self.verify_counter(ctx, UP, pkt.counter):
            self._reject(pkt, "replay")
        return ctx

    def protect_downlink(self, dev_id: str, kind: str, nbytes: int, transport: str, **extra) -> Packet:
        ctx = self.context(dev_id, kind)
        if ctx is None:
            raise (NoNasContext if kind == NAS else NoStoredContext)(dev_id)
        ctx.downlink_counter += 1
        dev = self._device(dev_id)
        return Packet(dev_id, kind, ctx.key_id, DOWN, ctx.downlink_counter, nbytes, self.engine.now,
                      transport, dev.attached_cell, **extra)

    def receive_downlink(self, pkt: Packet) -> SecurityContext:
        dctx = self.dev.get(pkt.device, {}).get(pkt.ctx_kind)
        if dctx is None or dctx.key_id != pkt.key_id:
            self._reject(pkt, "unknown_key")
        if not self.verify_counter(dctx, DOWN, pkt.counter):
            self._reject(pkt, "replay")
        return dctx

    def _reject(self, pkt: Packet, reason: str):
        self.stats["replay_rejects"] += 1
        self.trace.emit(pkt.device, "ctr_reject", dir=pkt.direction, ctx=pkt.ctx_kind, ctr=pkt.counter,
                        reason=reason)
        raise CounterReplay(f"{pkt.device}: {reason} (counter {pkt.counter})")

    # -- lifecycle ----------------------------------------------------------

    def expire_or_revoke(self, dev_id: str, kind: str, cause: str) -> None:
        if kind not in self.net.get(dev_id, {}):
            raise NoContext(f"{dev_id} has no {kind} context")
        self._remove(dev_id, kind, cause)

    def _remove(self, dev_id: str, kind: str, cause: str) -> None:
        ctx = self.net[dev_id].pop(kind)
        self.dev.get(dev_id, {}).pop(kind, None)
        if cause == "timer":
            self.stats["expired"] += 1
        elif cause == "revocation":
            self.stats["revoked"] += 1
        self.trace.emit(dev_id, "ctx_removed", ctx=kind, key=ctx.key_id, cause=cause)
        self._notify("removed", ctx, cause)

    def _on_handover(self, dev: Device, old: str, new: str) -> None:
        if not self.keep_as_on_handover and AS in self.net.get(dev.id, {}):
            self._remove(dev.id, AS, "handover")

    def rotate_temporary_identity(self, dev_id: str) -> str:
        if not self.is_authenticated(dev_id):
            raise NotAuthenticated(dev_id)
        dev = self._device(dev_id)
        old = dev.current_temporary_id
        new = self._issue_identity(dev)
        self.trace.emit(dev_id, "tmsi", old=old, new=new)
        return new


class _NasView:
    """Read-only mapping DeviceId -> network-side NAS context, for the C-SGN."""

    def __init__(self, net):
        self._net = net

    def __getitem__(self, dev_id):
        return self._net[dev_id][NAS]

    def get(self, dev_id, default=None):
        return self._net.get(dev_id, {}).get(NAS, default)

    def __contains__(self, dev_id):
        return NAS in self._net.get(dev_id, {})

    def __len__(self):
        return sum(1 for c in self._net.values() if NAS in c)
