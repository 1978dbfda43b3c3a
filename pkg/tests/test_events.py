import json

import pytest

from fleetloop.errors import SchemaMismatch, SeqOutOfRange
from fleetloop.events import (
    LOG_SCHEMA_VERSION,
    EventLog,
    events_hash,
    load_run_log,
)
from fleetloop.model import EventKind


def fill(log, n=5):
    for i in range(n):
        log.append(i, EventKind.CRITIC_SCORED, {"i": i})


class TestEventLog:
    def test_seq_gapless_from_zero(self):
        log = EventLog()
        fill(log, 10)
        seqs = [e.seq for e in log.snapshot()]
        assert seqs == list(range(10))

    def test_read_from_offset(self):
        log = EventLog()
        fill(log, 5)
        assert [e.seq for e in log.read_from(3)] == [3, 4]

    def test_read_from_head_is_empty(self):
        log = EventLog()
        fill(log, 5)
        assert log.read_from(5) == []

    def test_read_beyond_head_raises(self):
        log = EventLog()
        fill(log, 5)
        with pytest.raises(SeqOutOfRange):
            log.read_from(6)
        with pytest.raises(SeqOutOfRange):
            log.read_from(-1)

    def test_hash_sensitive_to_any_change(self):
        a, b = EventLog(), EventLog()
        fill(a, 4)
        fill(b, 4)
        assert events_hash(a.snapshot()) == events_hash(b.snapshot())
        b.append(9, EventKind.CRITIC_SCORED, {"i": 99})
        assert events_hash(a.snapshot()) != events_hash(b.snapshot())


class TestRunLogFile:
    def test_roundtrip(self, tmp_path):
        path = str(tmp_path / "run.log.jsonl")
        log = EventLog(path, header={"schema_version": LOG_SCHEMA_VERSION, "seed": 42})
        fill(log, 6)
        log.close()
        header, events = load_run_log(path)
        assert header["seed"] == 42
        assert [e.seq for e in events] == list(range(6))

    def test_torn_tail_truncated(self, tmp_path):
        path = str(tmp_path / "run.log.jsonl")
        log = EventLog(path, header={"schema_version": LOG_SCHEMA_VERSION})
        fill(log, 3)
        log.close()
        with open(path, "a", encoding="utf-8") as fh:
            fh.write('{"seq": 3, "sim_time": 9, "kind": "critic_sco')  # simulated crash
        header, events = load_run_log(path)
        assert len(events) == 3

    def test_missing_header_rejected(self, tmp_path):
        path = str(tmp_path / "bad.log.jsonl")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("not json at all\n")
        with pytest.raises(SchemaMismatch):
            load_run_log(path)

    def test_newer_schema_rejected(self, tmp_path):
        path = str(tmp_path / "future.log.jsonl")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"schema_version": LOG_SCHEMA_VERSION + 1}) + "\n")
        with pytest.raises(SchemaMismatch):
            load_run_log(path)

    def test_empty_file_rejected(self, tmp_path):
        path = str(tmp_path / "empty.log.jsonl")
        open(path, "w").close()
        with pytest.raises(SchemaMismatch):
            load_run_log(path)
