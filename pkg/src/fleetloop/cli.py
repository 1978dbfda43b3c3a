"""Command line entry points.

`serve` runs the gateway over a live scenario; `sim` runs one headless and
writes the event log; `replay` verifies a log; `submit`, `answer`, `fleet`,
and `memory` are thin HTTP clients against a running gateway. Exit codes:
0 success, 2 scenario failure, 3 replay divergence.
"""

from __future__ import annotations

import json
import sys
from typing import Optional

import click

from .config import load_config
from .errors import DivergenceDetected, SchemaMismatch
from .gateway import WIRE_VERSION, RuntimeService, make_app
from .model import TaskState, canonical_json
from .replay import replay_run
from .runtime import Runtime, ScenarioDriver, run_scenario
from .scenario import load_scenario

EXIT_OK = 0
EXIT_SCENARIO_FAILURE = 2
EXIT_REPLAY_DIVERGENCE = 3


@click.group()
def main():
    """Multi-embodiment orchestration runtime."""


def _envelope(kind: str, body: dict) -> dict:
    return {"version": WIRE_VERSION, "kind": kind, "correlation_id": "cli", "body": body}


def _post(url: str, path: str, kind: str, body: dict) -> dict:
    import httpx

    response = httpx.post(f"{url.rstrip('/')}{path}", json=_envelope(kind, body), timeout=10.0)
    doc = response.json()
    if response.status_code >= 400:
        raise click.ClickException(doc.get("body", {}).get("message", response.text))
    return doc.get("body", {})


def _get(url: str, path: str) -> dict:
    import httpx

    response = httpx.get(f"{url.rstrip('/')}{path}", timeout=10.0)
    if response.status_code >= 400:
        raise click.ClickException(response.text)
    return response.json().get("body", {})


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Runtime config file (JSON); FLEETLOOP_CONFIG also works.")
@click.option("--scenario", "scenario_path", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8080, show_default=True)
@click.option("--log", "log_path", type=click.Path(), default=None,
              help="Event log destination (defaults to <scenario>-seed<seed>.log.jsonl).")
def serve(config_path, scenario_path, seed, host, port, log_path):
    """Serve a live runtime over HTTP, ticking in real time."""
    import uvicorn

    config = load_config(config_path)
    scenario = load_scenario(scenario_path)
    log_path = log_path or f"{scenario.name}-seed{seed}.log.jsonl"
    runtime = Runtime(scenario, config=config, seed=seed, log_path=log_path)
    service = RuntimeService(runtime, driver=ScenarioDriver(runtime, scenario),
                             tick_rate=config.tick_rate)
    service.start()
    click.echo(f"serving scenario '{scenario.name}' (seed {seed}) on http://{host}:{port}")
    click.echo(f"event log: {log_path}")
    try:
        uvicorn.run(make_app(service), host=host, port=port, log_level="warning")
    finally:
        service.stop()
        runtime.close()


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--scenario", "scenario_path", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--log", "log_path", type=click.Path(), default=None)
@click.option("--max-ticks", type=int, default=600, show_default=True)
@click.option("--porcelain", is_flag=True, help="Machine-readable JSON output.")
def sim(config_path, scenario_path, seed, log_path, max_ticks, porcelain):
    """Run a scenario headless to completion and write its event log."""
    config = load_config(config_path)
    scenario = load_scenario(scenario_path)
    log_path = log_path or f"{scenario.name}-seed{seed}.log.jsonl"
    runtime = run_scenario(
        scenario, config=config, seed=seed, log_path=log_path, max_ticks=max_ticks
    )
    tasks = [runtime.orchestrator.tasks[tid].record for tid in runtime.orchestrator.order]
    ok = bool(tasks) and all(t.state is TaskState.DONE for t in tasks)
    if porcelain:
        click.echo(canonical_json({
            "scenario": scenario.name,
            "seed": seed,
            "log": log_path,
            "ticks": runtime.world.tick,
            "events": len(runtime.log),
            "tasks": [{"task_id": t.task_id, "state": t.state.value} for t in tasks],
            "ok": ok,
        }))
    else:
        click.echo(f"scenario '{scenario.name}' seed {seed}: "
                   f"{runtime.world.tick} ticks, {len(runtime.log)} events -> {log_path}")
        for t in tasks:
            click.echo(f"  {t.task_id} [{t.state.value}] {t.instruction}")
    sys.exit(EXIT_OK if ok else EXIT_SCENARIO_FAILURE)


@main.command()
@click.argument("log_path", type=click.Path(exists=True))
@click.option("--porcelain", is_flag=True)
def replay(log_path, porcelain):
    """Re-execute a run log and verify the regenerated events hash-equal."""
    try:
        report = replay_run(log_path)
    except SchemaMismatch as exc:
        raise click.ClickException(f"schema mismatch: {exc}")
    if porcelain:
        click.echo(canonical_json(report.to_doc()))
    else:
        click.echo(f"replay of '{report.scenario_name}' seed {report.seed}: "
                   f"{report.regenerated_events}/{report.logged_events} events")
        if report.hash_equal:
            click.echo(f"hash-equal: {report.logged_hash}")
        else:
            click.echo(f"DIVERGED at seq {report.divergence_seq}")
    sys.exit(EXIT_OK if report.hash_equal else EXIT_REPLAY_DIVERGENCE)


@main.command()
@click.argument("text")
@click.option("--url", default="http://127.0.0.1:8080", show_default=True)
@click.option("--priority", type=int, default=0)
@click.option("--robot", "explicit_robot", default=None, help="Pin execution to one robot.")
@click.option("--tau", "tau_override", type=float, default=None)
@click.option("--porcelain", is_flag=True)
def submit(text, url, priority, explicit_robot, tau_override, porcelain):
    """Submit an instruction to a serving runtime."""
    body = _post(url, "/instructions", "submit_instruction", {
        "text": text,
        "priority": priority,
        "explicit_robot": explicit_robot,
        "tau_override": tau_override,
    })
    click.echo(canonical_json(body) if porcelain else f"submitted: {body.get('task_id')}")


@main.command()
@click.argument("clarification_id")
@click.argument("answer_text")
@click.option("--url", default="http://127.0.0.1:8080", show_default=True)
@click.option("--porcelain", is_flag=True)
def answer(clarification_id, answer_text, url, porcelain):
    """Answer an open clarification."""
    body = _post(url, f"/clarifications/{clarification_id}", "answer_clarification",
                 {"answer": answer_text})
    click.echo(canonical_json(body) if porcelain else "accepted")


@main.command()
@click.option("--url", default="http://127.0.0.1:8080", show_default=True)
@click.option("--porcelain", is_flag=True)
def fleet(url, porcelain):
    """Show the fleet snapshot of a serving runtime."""
    body = _get(url, "/fleet")
    if porcelain:
        click.echo(canonical_json(body))
        return
    for robot in body.get("robots", []):
        pose = robot["pose"]
        click.echo(
            f"{robot['robot_id']:<12} {robot['morphology']:<10} {robot['liveness']:<12} "
            f"load {robot['active_subtasks']}/{robot['max_concurrent']} "
            f"at ({pose['x']:.2f}, {pose['y']:.2f}, {pose['z']:.2f})"
        )


@main.group()
def memory():
    """Query the shared memory of a serving runtime."""


@memory.command("semantic")
@click.argument("query")
@click.option("-k", type=int, default=5, show_default=True)
@click.option("--url", default="http://127.0.0.1:8080", show_default=True)
@click.option("--porcelain", is_flag=True)
def memory_semantic(query, k, url, porcelain):
    body = _post(url, "/memory/semantic", "memory_semantic", {"query": query, "k": k})
    _print_results(body, porcelain)


@memory.command("structured")
@click.option("--category", default=None)
@click.option("--source-robot", default=None)
@click.option("--since", type=int, default=None, help="from_tick of a time window")
@click.option("--until", type=int, default=None, help="to_tick of a time window")
@click.option("--url", default="http://127.0.0.1:8080", show_default=True)
@click.option("--porcelain", is_flag=True)
def memory_structured(category, source_robot, since, until, url, porcelain):
    flt: dict = {}
    if category:
        flt["category"] = category
    if source_robot:
        flt["source_robot"] = source_robot
    if since is not None or until is not None:
        flt["time_window"] = {"from_tick": since or 0, "to_tick": until if until is not None else 1 << 31}
    body = _post(url, "/memory/structured", "memory_structured", {"filter": flt})
    _print_results(body, porcelain)


def _print_results(body: dict, porcelain: bool) -> None:
    if porcelain:
        click.echo(canonical_json(body))
        return
    results = body.get("results", [])
    if not results:
        click.echo("(no results)")
    for r in results:
        pose = r["pose"]
        click.echo(
            f"{r['category']:<24} conf {r['confidence']:.2f} [{r['source']}] "
            f"({pose['x']:.2f}, {pose['y']:.2f}, {pose['z']:.2f})  {r['evidence']}"
        )


if __name__ == "__main__":
    main()
