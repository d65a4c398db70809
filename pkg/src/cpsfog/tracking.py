"""Passive tracking adversary: links rotating temporary identities.

Each observed token becomes a segment (first/last sighting). A link A -> B
is feasible when B first appears after A was last seen, within ``max_gap``.
Its cost is the time gap plus ``cell_weight`` per cell of strip distance.

``greedy`` walks tokens in order of first sighting and attaches each to the
cheapest still-open predecessor. ``optimal`` solves the same problem
exactly: the most links, ties broken by total cost. It runs a linear
assignment per connected component. ``exhaustive`` reaches the same optimum
by brute-force search and is kept as the reference for small instances.

:func:`oracle_accuracy` is different: it scores the best linkage any
adversary could form under the same feasibility rule, so it bounds the
accuracy of every linker above.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linear_sum_assignment

from .engine import SECOND
from .traffic import AdversaryObservation

ORACLE_MAX_COMPONENT = 20


@dataclass(frozen=True)
class Segment:
    token: str
    first: int
    last: int
    first_cell: str
    last_cell: str


@dataclass
class LinkageReport:
    accuracy: float
    devices: int
    reconstructed: int
    tokens: int
    links: dict[str, str]
    method: str

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "devices": self.devices, "reconstructed": self.reconstructed,
                "tokens": self.tokens, "links": len(self.links), "method": self.method}


def segments(observations: list[AdversaryObservation]) -> dict[str, Segment]:
    segs: dict[str, Segment] = {}
    for o in sorted(observations, key=lambda o: (o.time, o.observed_token)):
        s = segs.get(o.observed_token)
        if s is None:
            segs[o.observed_token] = Segment(o.observed_token, o.time, o.time, o.cell, o.cell)
        else:
            segs[o.observed_token] = Segment(s.token, s.first, o.time, s.first_cell, o.cell)
    return segs


def _cost(a: Segment, b: Segment, cell_index, max_gap, cell_weight):
    gap = b.first - a.last
    if gap <= 0 or gap > max_gap:
        return None
    dist = abs(cell_index.get(b.first_cell, 0) - cell_index.get(a.last_cell, 0))
    return gap + cell_weight * dist


def link_greedy(segs: dict[str, Segment], cell_index: dict[str, int],
                max_gap: int = 30 * SECOND, cell_weight: float = 1000.0) -> dict[str, str]:
    """Return predecessor -> successor links."""
    order = sorted(segs.values(), key=lambda s: (s.first, s.token))
    open_ends: dict[str, Segment] = {}
    links: dict[str, str] = {}
    for b in order:
        stale = [t for t, a in open_ends.items() if a.last < b.first - max_gap]
        for t in stale:
            del open_ends[t]
        best = None
        for a in open_ends.values():
            c = _cost(a, b, cell_index, max_gap, cell_weight)
            if c is not None and (best is None or (c, a.token) < best):
                best = (c, a.token)
        if best is not None:
            links[best[1]] = b.token
            del open_ends[best[1]]
        open_ends[b.token] = b
    return links


def _edges(segs, cell_index, max_gap, cell_weight) -> dict[str, dict[str, float]]:
    order = sorted(segs.values(), key=lambda s: (s.first, s.token))
    firsts = [s.first for s in order]
    edges: dict[str, dict[str, float]] = {}
    for a in segs.values():
        lo = bisect.bisect_right(firsts, a.last)
        hi = bisect.bisect_right(firsts, a.last + max_gap)
        for b in order[lo:hi]:
            if b.token != a.token:
                c = _cost(a, b, cell_index, max_gap, cell_weight)
                if c is not None:
                    edges.setdefault(a.token, {})[b.token] = c
    return edges


def _components(edges) -> list[tuple[list[str], list[str]]]:
    # union-find over ("end", a) and ("start", b) nodes
    parent: dict[tuple, tuple] = {}

    def find(x):
        parent.setdefault(x, x)
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, outs in edges.items():
        for b in outs:
            parent[find(("end", a))] = find(("start", b))

    comps: dict[tuple, tuple[list, list]] = {}
    for node in sorted(parent):
        ends, starts = comps.setdefault(find(node), ([], []))
        (ends if node[0] == "end" else starts).append(node[1])
    return [(sorted(e), sorted(s)) for e, s in comps.values()]


def link_optimal(segs: dict[str, Segment], cell_index: dict[str, int],
                 max_gap: int = 30 * SECOND, cell_weight: float = 1000.0) -> dict[str, str]:
    """Maximum-cardinality, minimum-cost linking via linear assignment."""
    edges = _edges(segs, cell_index, max_gap, cell_weight)
    links: dict[str, str] = {}
    for ends, starts in _components(edges):
        col = {b: j for j, b in enumerate(starts)}
        big = 1.0 + sum(c for a in ends for c in edges[a].values())
        m = np.zeros((len(ends), len(starts)))
        for i, a in enumerate(ends):
            for b, c in edges[a].items():
                m[i, col[b]] = c - big  # every link outweighs any cost saving
        rows, cols = linear_sum_assignment(m)
        for i, j in zip(rows, cols):
            if m[i, j] < 0:
                links[ends[i]] = starts[j]
    return links


def link_exhaustive(segs: dict[str, Segment], cell_index: dict[str, int],
                    max_gap: int = 30 * SECOND, cell_weight: float = 1000.0) -> dict[str, str]:
    """Brute-force search over matchings, one connected component at a time."""
    edges = _edges(segs, cell_index, max_gap, cell_weight)
    links: dict[str, str] = {}
    for ends, starts in _components(edges):
        if len(starts) > ORACLE_MAX_COMPONENT:
            raise ValueError(f"component with {len(starts)} successor tokens is too large for exhaustive search")
        bit = {s: 1 << i for i, s in enumerate(starts)}
        options = [[(bit[b], b, c) for b, c in sorted(edges.get(a, {}).items())] for a in ends]

        @lru_cache(maxsize=None)
        def best(i: int, mask: int):
            # -> (links, -cost, choice tuple)
            if i == len(ends):
                return (0, 0.0, ())
            skip = best(i + 1, mask)
            top = skip
            for m, b, c in options[i]:
                if mask & m:
                    continue
                n, negc, rest = best(i + 1, mask | m)
                cand = (n + 1, negc - c, ((ends[i], b),) + rest)
                if cand[:2] > top[:2]:
                    top = cand
            return top

        links.update(dict(best(0, 0)[2]))
        best.cache_clear()
    return links


def chains(links: dict[str, str], tokens) -> list[tuple[str, ...]]:
    has_pred = set(links.values())
    out = []
    for t in sorted(tokens):
        if t in has_pred:
            continue
        chain = [t]
        while chain[-1] in links:
            chain.append(links[chain[-1]])
        out.append(tuple(chain))
    return out


def run_tracking_adversary(observations: list[AdversaryObservation], truth: dict[str, list[str]],
                           cell_index: dict[str, int] | None = None, method: str = "greedy",
                           max_gap: int = 30 * SECOND, cell_weight: float = 1000.0) -> LinkageReport:
    """Link tokens, then score against the hidden device -> token history.

    ``truth`` maps each device to its tokens in order of use. A device
    counts as reconstructed when one linked chain equals its full history.
    """
    cell_index = cell_index or {}
    segs = segments(observations)
    linker = {"greedy": link_greedy, "optimal": link_optimal, "exhaustive": link_exhaustive}[method]
    links = linker(segs, cell_index, max_gap, cell_weight)
    found = set(chains(links, segs))
    histories = [tuple(t for t in toks if t in segs) for toks in truth.values()]
    histories = [h for h in histories if h]
    hit = sum(1 for h in histories if h in found)
    acc = hit / len(histories) if histories else 1.0
    return LinkageReport(acc, len(histories), hit, len(segs), links, method)


def oracle_accuracy(observations: list[AdversaryObservation], truth: dict[str, list[str]],
                    max_gap: int = 30 * SECOND) -> LinkageReport:
    """Highest accuracy reachable by any feasible linkage.

    True histories are token-disjoint, so the union of their feasible links
    is itself a valid linkage. A device can be reconstructed iff every
    consecutive pair of its observed tokens is a feasible link, and all such
    devices can be reconstructed at once.
    """
    segs = segments(observations)
    links: dict[str, str] = {}
    histories = [tuple(t for t in toks if t in segs) for toks in truth.values()]
    histories = [h for h in histories if h]
    hit = 0
    for h in histories:
        pairs = list(zip(h, h[1:]))
        if all(_cost(segs[a], segs[b], {}, max_gap, 0.0) is not None for a, b in pairs):
            hit += 1
            links.update(pairs)
    acc = hit / len(histories) if histories else 1.0
    return LinkageReport(acc, len(histories), hit, len(segs), links, "oracle")


def subsample(observations: list[AdversaryObservation], truth: dict[str, list[str]], devices):
    """Restrict observations and truth to the given devices' tokens."""
    keep = set(devices)
    truth = {d: toks for d, toks in truth.items() if d in keep}
    tokens = {t for toks in truth.values() for t in toks}
    return [o for o in observations if o.observed_token in tokens], truth
