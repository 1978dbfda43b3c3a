import os

import pytest

from fleetloop import load_scenario, run_scenario

SCENARIO_DIR = os.path.join(os.path.dirname(__file__), "..", "scenarios")

SCENARIO_NAMES = [
    "search_partial_observability",
    "pick_something_sour",
    "delivery_room_207",
    "quadruped_inspection",
    "visitor_reception",
    "prepare_reception",
]


def scenario_path(name: str) -> str:
    return os.path.abspath(os.path.join(SCENARIO_DIR, f"{name}.json"))


@pytest.fixture(scope="session")
def scenario_runs(tmp_path_factory):
    """Every fixture scenario run once, logs kept for log-level assertions."""
    base = tmp_path_factory.mktemp("scenario-logs")
    runs = {}
    for name in SCENARIO_NAMES:
        sc = load_scenario(scenario_path(name))
        log_path = str(base / f"{name}.log.jsonl")
        runtime = run_scenario(sc, seed=42, log_path=log_path, max_ticks=400)
        runs[name] = (runtime, log_path)
    return runs


def null_emit(kind, payload):
    pass


class CollectingEmitter:
    """Stand-in event sink for module-level tests."""

    def __init__(self):
        self.events = []

    def __call__(self, kind, payload):
        self.events.append((kind, payload))

    def of(self, kind):
        return [p for k, p in self.events if k is kind]
