"""Replay: re-execute a run from its log header (seed + embedded scenario +
config) plus the recorded external inputs, then verify the regenerated
event stream is identical.

Any edit to a derived event shows up as DivergenceDetected at its seq; the
report carries both hashes either way.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

from .config import RuntimeConfig
from .events import EXTERNAL_INPUT_KINDS, events_hash, load_run_log
from .model import Event, EventKind
from .runtime import Runtime
from .scenario import scenario_from_doc


@dataclass(frozen=True)
class ReplayReport:
    scenario_name: str
    seed: int
    logged_events: int
    regenerated_events: int
    logged_hash: str
    regenerated_hash: str
    divergence_seq: Optional[int]

    @property
    def hash_equal(self) -> bool:
        return self.logged_hash == self.regenerated_hash

    def to_doc(self) -> dict:
        return {
            "scenario_name": self.scenario_name,
            "seed": self.seed,
            "logged_events": self.logged_events,
            "regenerated_events": self.regenerated_events,
            "logged_hash": self.logged_hash,
            "regenerated_hash": self.regenerated_hash,
            "divergence_seq": self.divergence_seq,
            "hash_equal": self.hash_equal,
        }


def _inputs_by_tick(events: List[Event]) -> Dict[int, list]:
    inputs: Dict[int, list] = {}
    for event in events:
        if event.kind not in EXTERNAL_INPUT_KINDS:
            continue
        kind = "submit" if event.kind is EventKind.TASK_SUBMITTED else "answer"
        inputs.setdefault(event.sim_time, []).append((kind, dict(event.payload)))
    return inputs


def replay_run(log_path: str, guard_ticks: int = 50) -> ReplayReport:
    """Re-run the log and diff. Raises SchemaMismatch for unreadable logs;
    divergence is reported, not raised, so callers can inspect."""
    header, logged = load_run_log(log_path)
    scenario = scenario_from_doc(header["scenario"])
    config = RuntimeConfig.from_doc(header.get("config", {}))
    runtime = Runtime(
        scenario,
        config=config,
        seed=header.get("seed", 0),
        mode="replay",
        replay_inputs=_inputs_by_tick(logged),
    )
    horizon = max((e.sim_time for e in logged), default=0) + guard_ticks
    while runtime.world.tick < horizon:
        runtime.tick()
        if runtime.idle() and len(runtime.log) >= len(logged):
            break
    regenerated = runtime.log.snapshot()
    divergence = _first_divergence(logged, regenerated)
    return ReplayReport(
        scenario_name=header.get("name", "unknown"),
        seed=header.get("seed", 0),
        logged_events=len(logged),
        regenerated_events=len(regenerated),
        logged_hash=events_hash(logged),
        regenerated_hash=events_hash(regenerated),
        divergence_seq=divergence,
    )


def _first_divergence(logged: List[Event], regenerated: List[Event]) -> Optional[int]:
    for i, (a, b) in enumerate(zip(logged, regenerated)):
        if a.canonical() != b.canonical():
            return i
    if len(logged) != len(regenerated):
        return min(len(logged), len(regenerated))
    return None
