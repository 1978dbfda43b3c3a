"""Append-only event log with newline-delimited persistence and replay loading.

The log is the runtime's single source of truth: every external input is
itself an event, so a run can be reconstructed from (header, events) alone.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from typing import Callable, Iterable, List, Optional

from .errors import SchemaMismatch, SeqOutOfRange
from .model import Event, EventKind, canonical_json

LOG_SCHEMA_VERSION = 1

# Kinds that originate outside the runtime; replay re-injects exactly these.
EXTERNAL_INPUT_KINDS = frozenset(
    {EventKind.TASK_SUBMITTED, EventKind.CLARIFICATION_ANSWERED}
)


class EventLog:
    """In-memory ordered event store with optional file sink.

    Appends are serialized under a lock; reads take consistent snapshots,
    so concurrent consumers (the gateway's stream fan-out) each see the
    same strictly increasing sequence.
    """

    def __init__(self, sink_path: Optional[str] = None, header: Optional[dict] = None):
        self._events: List[Event] = []
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._sink = None
        if sink_path is not None:
            self._sink = open(sink_path, "w", encoding="utf-8")
            self._sink.write(canonical_json(header or {"schema_version": LOG_SCHEMA_VERSION}) + "\n")
            self._sink.flush()
            os.fsync(self._sink.fileno())

    def append(self, sim_time: int, kind: EventKind, payload: dict) -> Event:
        with self._cond:
            ev = Event(seq=len(self._events), sim_time=sim_time, kind=kind, payload=payload)
            self._events.append(ev)
            if self._sink is not None:
                self._sink.write(ev.canonical() + "\n")
                self._sink.flush()
            self._cond.notify_all()
            return ev

    def __len__(self) -> int:
        with self._lock:
            return len(self._events)

    def snapshot(self) -> List[Event]:
        with self._lock:
            return list(self._events)

    def read_from(self, from_seq: int = 0) -> List[Event]:
        """Events with seq >= from_seq. from_seq may point one past the head
        (an empty tail); anything beyond that is out of range."""
        with self._lock:
            if from_seq < 0 or from_seq > len(self._events):
                raise SeqOutOfRange(f"from_seq {from_seq} outside [0, {len(self._events)}]")
            return list(self._events[from_seq:])

    def wait_beyond(self, seq: int, timeout: float = 1.0) -> bool:
        """Block until an event with seq >= `seq` exists. Returns False on timeout."""
        with self._cond:
            if len(self._events) > seq:
                return True
            return self._cond.wait_for(lambda: len(self._events) > seq, timeout=timeout)

    def close(self):
        if self._sink is not None:
            self._sink.flush()
            os.fsync(self._sink.fileno())
            self._sink.close()
            self._sink = None


def events_hash(events: Iterable[Event]) -> str:
    """sha256 over the canonical serialization of the whole stream."""
    h = hashlib.sha256()
    for ev in events:
        h.update(ev.canonical().encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def load_run_log(path: str) -> tuple[dict, List[Event]]:
    """Read a run log: header line plus one event per line.

    A torn trailing line (crash mid-append) is tolerated by truncation;
    a missing or wrong-version header raises SchemaMismatch.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read()
    lines = raw.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise SchemaMismatch("empty log file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"unreadable log header: {exc}") from exc
    if header.get("schema_version") != LOG_SCHEMA_VERSION:
        raise SchemaMismatch(
            f"log schema version {header.get('schema_version')!r}, expected {LOG_SCHEMA_VERSION}"
        )
    events: List[Event] = []
    for line in lines[1:]:
        try:
            doc = json.loads(line)
            events.append(Event.from_doc(doc))
        except (json.JSONDecodeError, KeyError, ValueError):
            break  # torn tail record: keep everything before it
    return header, events
