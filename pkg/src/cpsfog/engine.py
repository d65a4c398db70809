"""Deterministic discrete-event core.

Simulated time is an integer number of milliseconds since scenario start.
Events are totally ordered by ``(at, seq)``; ``seq`` is assigned at
scheduling time, so equal-time events run in insertion order.
"""

from __future__ import annotations

import hashlib
import heapq
import math
import random
from bisect import bisect_right
from dataclasses import dataclass, field
from itertools import accumulate
from statistics import NormalDist
from typing import Any, Callable

from .errors import ScheduleError

MS = 1
SECOND = 1000
MINUTE = 60 * SECOND
HOUR = 60 * MINUTE
DAY = 24 * HOUR

_STD_NORMAL = NormalDist()


class Event:
    """A timestamped event aimed at one node."""

    __slots__ = ("at", "seq", "target", "kind", "data")

    def __init__(self, at: int, seq: int, target: str, kind: str, data: Any = None):
        self.at = at
        self.seq = seq
        self.target = target
        self.kind = kind
        self.data = data

    def __lt__(self, other: "Event") -> bool:
        return (self.at, self.seq) < (other.at, other.seq)

    def __repr__(self) -> str:
        return f"Event(at={self.at}, seq={self.seq}, target={self.target!r}, kind={self.kind!r})"


class Engine:
    """Single-threaded event loop with a virtual millisecond clock.

    Handlers are registered per event kind and receive the event. They may
    schedule further events at or after the current clock.
    """

    def __init__(self) -> None:
        self.now = 0
        self._queue: list[tuple[int, int, Event]] = []
        self._seq = 0
        self._handlers: dict[str, Callable[[Event], None]] = {}
        self.dispatched = 0

    def on(self, kind: str, handler: Callable[[Event], None]) -> None:
        self._handlers[kind] = handler

    def schedule(self, at: int, target: str, kind: str, data: Any = None) -> Event:
        if at < self.now:
            raise ScheduleError(f"cannot schedule {kind!r} at t={at} when clock is {self.now}")
        ev = Event(at, self._seq, target, kind, data)
        self._seq += 1
        heapq.heappush(self._queue, (at, ev.seq, ev))
        return ev

    def schedule_in(self, delay: int, target: str, kind: str, data: Any = None) -> Event:
        return self.schedule(self.now + delay, target, kind, data)

    def pending(self) -> int:
        return len(self._queue)

    def peek_time(self) -> int | None:
        return self._queue[0][0] if self._queue else None

    def run_until(self, end: int) -> int:
        """Dispatch every event with ``at <= end``; return how many ran.

        Afterwards the clock is ``end`` if later events remain queued, else
        the time of the last dispatched event.
        """
        if end < self.now:
            raise ScheduleError(f"run_until({end}) is before the clock ({self.now})")
        queue = self._queue
        handlers = self._handlers
        pop = heapq.heappop
        count = 0
        while queue and queue[0][0] <= end:
            at, _, ev = pop(queue)
            self.now = at
            handler = handlers.get(ev.kind)
            if handler is None:
                raise KeyError(f"no handler registered for event kind {ev.kind!r}")
            handler(ev)
            count += 1
        if queue:
            self.now = end
        self.dispatched += count
        return count


# ---------------------------------------------------------------------------
# Random streams


@dataclass(frozen=True)
class Uniform:
    a: float
    b: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)) or self.b < self.a:
            raise ValueError(f"uniform needs finite a <= b, got ({self.a}, {self.b})")


@dataclass(frozen=True)
class Exponential:
    mean: float

    def __post_init__(self):
        if not (self.mean > 0 and math.isfinite(self.mean)):
            raise ValueError(f"exponential mean must be positive, got {self.mean}")


@dataclass(frozen=True)
class Bernoulli:
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"bernoulli p must lie in [0, 1], got {self.p}")


@dataclass(frozen=True)
class Discrete:
    weights: tuple[float, ...]
    _cum: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if not w or any(x < 0 or not math.isfinite(x) for x in w) or sum(w) <= 0:
            raise ValueError("discrete weights must be non-negative with a positive sum")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "_cum", tuple(accumulate(w)))


class RngStream:
    """Named pseudorandom stream. Every draw consumes exactly one variate."""

    __slots__ = ("stream_id", "_rng", "draws")

    def __init__(self, seed: int, stream_id: str):
        self.stream_id = stream_id
        digest = hashlib.sha256(f"{seed}/{stream_id}".encode()).digest()
        self._rng = random.Random(int.from_bytes(digest[:16], "big"))
        self.draws = 0

    def random(self) -> float:
        self.draws += 1
        return self._rng.random()

    def uniform(self, a: float, b: float) -> float:
        return a + (b - a) * self.random()

    def randint(self, a: int, b: int) -> int:
        """Integer in [a, b] from a single variate."""
        if b < a:
            raise ValueError(f"empty integer range [{a}, {b}]")
        return a + min(int(self.random() * (b - a + 1)), b - a)

    def exponential(self, mean: float) -> float:
        return -mean * math.log(1.0 - self.random())

    def bernoulli(self, p: float) -> bool:
        return self.random() < p

    def gauss(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        # inverse-CDF keeps the one-variate-per-draw property
        u = self.random()
        u = min(max(u, 1e-300), 1.0 - 1e-16)
        return mu + sigma * _STD_NORMAL.inv_cdf(u)

    def draw(self, dist) -> float | bool | int:
        if isinstance(dist, Uniform):
            return self.uniform(dist.a, dist.b)
        if isinstance(dist, Exponential):
            return self.exponential(dist.mean)
        if isinstance(dist, Bernoulli):
            return self.bernoulli(dist.p)
        if isinstance(dist, Discrete):
            u = self.random() * dist._cum[-1]
            return min(bisect_right(dist._cum, u), len(dist._cum) - 1)
        raise ValueError(f"unsupported distribution {dist!r}")


class RngFactory:
    """Hands out one stream per label, all derived from the scenario seed."""

    def __init__(self, seed: int):
        self.seed = seed
        self._streams: dict[str, RngStream] = {}

    def stream(self, stream_id: str) -> RngStream:
        s = self._streams.get(stream_id)
        if s is None:
            s = self._streams[stream_id] = RngStream(self.seed, stream_id)
        return s
