"""Line-delimited JSON traces and the ground-truth sidecar.

The first line of each file is a header carrying the run id; every
following line is one record ``{"at", "seq", "node", "kind", ...}`` in
strictly increasing ``(at, seq)`` order.
"""

from __future__ import annotations

import hashlib
import json

TRACE_FORMAT = "cpsfog-trace/1"
TRUTH_FORMAT = "cpsfog-truth/1"

_dumps = json.JSONEncoder(separators=(",", ":"), ensure_ascii=False).encode


def run_id_for(config_text: str) -> str:
    return hashlib.sha256(config_text.encode()).hexdigest()[:16]


class NullTrace:
    """Drops everything; used for fast in-memory replications."""

    records = 0

    def bind(self, engine) -> None:
        pass

    def emit(self, node, kind, **fields) -> None:
        pass

    def close(self) -> None:
        pass


class MemoryTrace:
    """Keeps records as dicts; convenient for tests and small runs."""

    def __init__(self, header: dict | None = None):
        self.header = header or {}
        self.rows: list[dict] = []
        self._engine = None

    def bind(self, engine) -> None:
        self._engine = engine

    @property
    def records(self) -> int:
        return len(self.rows)

    def emit(self, node, kind, **fields) -> None:
        at = self._engine.now if self._engine is not None else 0
        self.rows.append({"at": at, "seq": len(self.rows), "node": node, "kind": kind, **fields})

    def of(self, kind: str) -> list[dict]:
        return [r for r in self.rows if r["kind"] == kind]

    def close(self) -> None:
        pass


class TraceWriter:
    """Streams records to a file; ``seq`` is the record's position."""

    def __init__(self, path, header: dict, buffer_lines: int = 4096):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8", newline="\n")
        self._fh.write(_dumps(header) + "\n")
        self._buf: list[str] = []
        self._limit = buffer_lines
        self._engine = None
        self.records = 0

    def bind(self, engine) -> None:
        self._engine = engine

    def emit(self, node, kind, **fields) -> None:
        rec = {"at": self._engine.now if self._engine is not None else 0, "seq": self.records,
               "node": node, "kind": kind}
        rec.update(fields)
        self.records += 1
        self._buf.append(_dumps(rec))
        if len(self._buf) >= self._limit:
            self.flush()

    def flush(self) -> None:
        if self._buf:
            self._fh.write("\n".join(self._buf) + "\n")
            self._buf.clear()

    def close(self) -> None:
        if not self._fh.closed:
            self.flush()
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_jsonl(path) -> tuple[dict, list[dict]]:
    """Return ``(header, records)`` of a trace or truth file."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        header = json.loads(first) if first.strip() else {}
        return header, [json.loads(line) for line in fh if line.strip()]


def iter_records(path):
    with open(path, encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            if line.strip():
                yield json.loads(line)
