#!/usr/bin/env python3
"""Run every fixture scenario headless, verify its log replays hash-equal,
and print one summary row each.

Usage: python scripts/run_scenarios.py [--seed N] [--out DIR]
"""

import argparse
import pathlib
import sys
import time

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from fleetloop import load_scenario, run_scenario  # noqa: E402
from fleetloop.model import TaskState  # noqa: E402
from fleetloop.replay import replay_run  # noqa: E402

SCENARIOS = [
    "search_partial_observability",
    "pick_something_sour",
    "delivery_room_207",
    "quadruped_inspection",
    "visitor_reception",
    "prepare_reception",
]


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--out", default="run-logs")
    args = parser.parse_args()

    scenario_dir = pathlib.Path(__file__).resolve().parents[1] / "scenarios"
    out_dir = pathlib.Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    print(f"{'scenario':<32} {'ticks':>6} {'events':>7} {'wall':>8} {'tasks':<18} replay")
    failures = 0
    for name in SCENARIOS:
        scenario = load_scenario(str(scenario_dir / f"{name}.json"))
        log_path = str(out_dir / f"{name}-seed{args.seed}.log.jsonl")
        started = time.perf_counter()
        runtime = run_scenario(scenario, seed=args.seed, log_path=log_path, max_ticks=600)
        wall = time.perf_counter() - started
        states = [
            runtime.orchestrator.tasks[t].record.state for t in runtime.orchestrator.order
        ]
        ok = bool(states) and all(s is TaskState.DONE for s in states)
        report = replay_run(log_path)
        replay_ok = report.hash_equal
        if not (ok and replay_ok):
            failures += 1
        print(
            f"{name:<32} {runtime.world.tick:>6} {len(runtime.log):>7} {wall:>7.2f}s "
            f"{'/'.join(s.value for s in states):<18} "
            f"{'hash-equal' if replay_ok else 'DIVERGED'}"
        )
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
