"""The runtime: one deterministic tick loop wiring world, fleet, memory,
critic, scheduler, and orchestrator through a single ordered event log.

Phase order within a tick is fixed and is the replay contract:
  1. world advances (faults, motion, skill resolutions, heartbeats)
  2. external inputs queued for this tick are injected as events
  3. heartbeat bookkeeping and pose telemetry
  4. critic pass: score every in-flight attempt, act on verdicts
  5. liveness sweep and disconnect recovery
  6. orchestrator planning pass
  7. scheduler dispatch
All external inputs are themselves events, so the log plus the scenario
header is sufficient to reproduce a run bit for bit.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Dict, List, Optional, Tuple

from .config import RuntimeConfig
from .critic import Critic, Decision, decide
from .errors import (
    AlreadyAnswered,
    RuntimeNotReady,
    TargetUnresolvable,
    UnknownClarification,
)
from .events import LOG_SCHEMA_VERSION, EventLog
from .fleet import FleetRegistry, Outcome, SkillResult
from .memory import MemoryStore, Registrar
from .model import EventKind, TaskState
from .orchestrator import Orchestrator, TaskContext
from .scenario import Scenario
from .scheduler import dispatch_ready
from .simworld import Resolution, World

NAVIGATION_SKILLS = frozenset({"navigate", "guide_person"})


class Runtime:
    def __init__(
        self,
        scenario: Scenario,
        config: Optional[RuntimeConfig] = None,
        seed: int = 0,
        mode: str = "live",
        log_path: Optional[str] = None,
        replay_inputs: Optional[Dict[int, list]] = None,
    ):
        if mode not in ("live", "replay"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.config = config or RuntimeConfig()
        self.seed = seed
        self.scenario = scenario
        header = {
            "schema_version": LOG_SCHEMA_VERSION,
            "seed": seed,
            "scenario": scenario.doc,
            "config": self.config.to_doc(),
            "name": scenario.name,
        }
        self.log = EventLog(log_path, header)
        self.world = World(
            self.config.sim,
            seed=seed,
            heartbeat_interval=self.config.fleet.heartbeat_interval,
        )
        self.fleet = FleetRegistry(self._emit, adapter=self.world)
        self.memory = MemoryStore(emit=self._emit)
        self.critic = Critic(self.config.critic, self._emit)
        self.orchestrator = Orchestrator(
            memory=self.memory,
            fleet=self.fleet,
            sched_cfg=self.config.scheduler,
            cfg=self.config.orchestrator,
            emit=self._emit,
            cancel_attempt=self._cancel_attempt,
        )
        self._next_task = 1
        self._inputs: List[tuple] = []
        self._pending_answer_ids: set = set()
        self._replay_inputs = replay_inputs or {}
        self._bootstrap()

    def _emit(self, kind: EventKind, payload: dict):
        return self.log.append(self.world.tick, kind, payload)

    # -- bootstrap (tick 0) ------------------------------------------------------------

    def _bootstrap(self) -> None:
        for spec in self.scenario.objects:
            self.world.add_object(spec.object_id, spec.label, spec.pose)
        for spec in self.scenario.persons:
            self.world.add_person(spec.person_id, spec.label, spec.pose, spec.present)
        self.world.load_faults(list(self.scenario.faults))
        for entry in self.scenario.anchors:
            self.world.add_anchor(entry.name, entry.pose)
            self.memory.register_anchor(entry.name, entry.pose, entry.registered_by)
        for entry in self.scenario.fleet:
            self.world.add_robot(
                entry.descriptor.robot_id,
                entry.descriptor.pose,
                fov_half_angle=entry.fov_half_angle,
                view_range=entry.view_range,
            )
            self.fleet.register(replace(entry.descriptor), tick=0)
            self.memory.record_robot_pose(entry.descriptor.robot_id, entry.descriptor.pose, 0)
            self.orchestrator.note_fleet_change()
        # each embodiment contributes an initial observation so execution
        # starts from grounded context instead of a cold store
        for entry in self.scenario.fleet:
            frame = self.world.observe(entry.descriptor.robot_id)
            self._insert_frame(frame)

    def _insert_frame(self, frame) -> None:
        self.memory.insert_observation(frame)
        for label, pose, _ in frame.labels:
            if self.fleet.has(label):
                self.memory.record_robot_pose(label, pose, frame.sim_time)

    # -- external inputs ------------------------------------------------------------------

    def submit_instruction(
        self,
        text: str,
        priority: int = 0,
        explicit_robot: Optional[str] = None,
        tau_override: Optional[float] = None,
    ) -> str:
        """Queue an instruction; it becomes a TaskSubmitted event on the next
        tick. Returns the task id immediately."""
        if self.mode != "live":
            raise RuntimeNotReady("runtime is replaying a log")
        task_id = f"task-{self._next_task:04d}"
        self._next_task += 1
        self._inputs.append(
            ("submit", {
                "task_id": task_id,
                "instruction": text,
                "priority": priority,
                "explicit_robot": explicit_robot,
                "tau_override": tau_override,
            })
        )
        return task_id

    def answer_clarification(self, clarification_id: str, answer: str) -> None:
        if self.mode != "live":
            raise RuntimeNotReady("runtime is replaying a log")
        clar = self.orchestrator.clarifications.get(clarification_id)
        if clar is None:
            raise UnknownClarification(clarification_id)
        if clar.answer is not None or clarification_id in self._pending_answer_ids:
            raise AlreadyAnswered(clarification_id)
        self._pending_answer_ids.add(clarification_id)
        self._inputs.append(
            ("answer", {"clarification_id": clarification_id, "answer": answer,
                        "task_id": clar.task_id})
        )

    # -- the tick ---------------------------------------------------------------------------

    def tick(self) -> int:
        out = self.world.step_one()
        now = self.world.tick
        self._inject_inputs(now)
        self._heartbeats(out.heartbeats, now)
        self._sync_poses()
        self._critic_pass(out.resolutions, now)
        self._sweep(now)
        self.orchestrator.planning_pass(now)
        self._dispatch(now)
        return now

    def run(self, ticks: int) -> None:
        for _ in range(ticks):
            self.tick()

    def idle(self) -> bool:
        tasks = self.orchestrator.tasks.values()
        settled = all(
            ctx.record.state in (TaskState.DONE, TaskState.FAILED, TaskState.BLOCKED)
            for ctx in tasks
        )
        return settled and not self._inputs and not self._replay_inputs

    # phase 2 ------------------------------------------------------------------------

    def _inject_inputs(self, now: int) -> None:
        if self.mode == "replay":
            batch = self._replay_inputs.pop(now, [])
        else:
            batch, self._inputs = self._inputs, []
        for kind, payload in batch:
            if kind == "submit":
                self._next_task = max(self._next_task, int(payload["task_id"].split("-")[1]) + 1)
                self._emit(EventKind.TASK_SUBMITTED, dict(payload))
                self.orchestrator.new_task(
                    task_id=payload["task_id"],
                    text=payload["instruction"],
                    priority=payload["priority"],
                    submitted_at=now,
                    explicit_robot=payload.get("explicit_robot"),
                    tau_override=payload.get("tau_override"),
                )
            elif kind == "answer":
                self._pending_answer_ids.discard(payload["clarification_id"])
                self._emit(EventKind.CLARIFICATION_ANSWERED, dict(payload))
                self.orchestrator.apply_answer(
                    payload["clarification_id"], payload["answer"], now
                )

    # phase 3 ------------------------------------------------------------------------

    def _heartbeats(self, beats: List[tuple], now: int) -> None:
        for robot_id, pose in beats:
            self.fleet.heartbeat(robot_id, now)
            self.memory.record_robot_pose(robot_id, pose, now)

    def _sync_poses(self) -> None:
        # the simulator is the source of truth while comms are up;
        # a dead robot's last reported pose freezes in the registry
        for robot_id, robot in self.world.robots.items():
            if robot.comms_up and self.fleet.has(robot_id):
                self.fleet.update_pose(robot_id, robot.pose)

    # phase 4 ------------------------------------------------------------------------

    def _critic_pass(self, resolutions: List[Resolution], now: int) -> None:
        resolved: Dict[Tuple[str, str, int], Resolution] = {
            (r.result.robot_id, r.result.step_id, r.attempt): r for r in resolutions
        }
        for task_id in list(self.orchestrator.order):
            ctx = self.orchestrator.tasks[task_id]
            if ctx.record.state is not TaskState.EXECUTING or ctx.record.plan is None:
                continue
            for step in list(ctx.record.plan.steps):
                st = ctx.steps.get(step.step_id)
                if st is None or not st.in_flight:
                    continue
                res = resolved.pop((st.robot, step.step_id, st.attempt), None)
                if res is not None:
                    self._apply_terminal(ctx, step.step_id, res, now)
                else:
                    self._score_in_flight(ctx, step.step_id, now)

    def _effective_cfg(self, ctx: TaskContext, skill: str):
        cfg = self.config.critic
        if ctx.record.tau_override is not None:
            return replace(cfg, tau_complete=ctx.record.tau_override)
        if skill in NAVIGATION_SKILLS:
            return replace(cfg, tau_complete=self.config.orchestrator.navigation_tau)
        return cfg

    def _apply_terminal(self, ctx: TaskContext, step_id: str, res: Resolution, now: int) -> None:
        st = ctx.steps[step_id]
        result = res.result
        self._emit_step_result(ctx, step_id, st.attempt, result, synthetic=False)
        self.fleet.release(result.robot_id)
        st.in_flight = False
        skill = ctx.record.plan.step(step_id).invocation.skill
        score = self.critic.evaluate(ctx.record.instruction, result.observation, res.probe)
        cfg = self._effective_cfg(ctx, skill)
        history = self.critic.current_attempt(ctx.task_id, step_id) + [(now, score)]
        verdict = decide(history, cfg)
        self.critic.record(ctx.task_id, step_id, now, score, verdict.decision)
        observation = result.observation if result.outcome is Outcome.SUCCESS else None
        self.orchestrator.on_verdict(
            ctx, step_id, verdict, now, terminal=True, observation=observation
        )

    def _score_in_flight(self, ctx: TaskContext, step_id: str, now: int) -> None:
        st = ctx.steps[step_id]
        if not self.world.comms_available(st.robot):
            return  # no telemetry from a dead platform
        probe = self.world.probe_for(st.robot, step_id, st.attempt)
        if probe is None:
            return
        skill = ctx.record.plan.step(step_id).invocation.skill
        score = self.critic.evaluate(ctx.record.instruction, None, probe)
        cfg = self._effective_cfg(ctx, skill)
        history = self.critic.current_attempt(ctx.task_id, step_id) + [(now, score)]
        verdict = decide(history, cfg)
        actionable = verdict.decision in (Decision.REPLAN, Decision.COMPLETE)
        self.critic.record(
            ctx.task_id, step_id, now, score, verdict.decision if actionable else None
        )
        if actionable:
            self.orchestrator.on_verdict(ctx, step_id, verdict, now, terminal=False)

    def _emit_step_result(
        self, ctx: TaskContext, step_id: str, attempt: int, result: SkillResult, synthetic: bool
    ) -> None:
        frame = result.observation
        self._emit(
            EventKind.STEP_RESULT,
            {
                "task_id": ctx.task_id,
                "step_id": step_id,
                "attempt": attempt,
                "robot_id": result.robot_id,
                "outcome": result.outcome.value,
                "reason": result.reason,
                "resulting_pose": result.resulting_pose.to_doc() if result.resulting_pose else None,
                "frame_id": frame.frame_id if frame is not None else None,
                "synthetic": synthetic,
            },
        )

    def _cancel_attempt(self, ctx: TaskContext, step_id: str, reason: str, success: bool = False) -> None:
        """Terminate an in-flight attempt runtime-side, keeping the
        one-terminal-result-per-attempt invariant via a synthetic result."""
        st = ctx.steps[step_id]
        if not st.in_flight:
            return
        self.world.cancel(st.robot, step_id, st.attempt)
        result = SkillResult(
            step_id=step_id,
            robot_id=st.robot,
            outcome=Outcome.SUCCESS if success else Outcome.FAILURE,
            reason=reason,
        )
        self._emit_step_result(ctx, step_id, st.attempt, result, synthetic=True)
        self.fleet.release(st.robot)
        st.in_flight = False

    # phase 5 ------------------------------------------------------------------------

    def _sweep(self, now: int) -> None:
        newly_dead = self.fleet.liveness_sweep(now, self.config.fleet.heartbeat_timeout)
        for robot_id in newly_dead:
            for ctx, step_id in self.orchestrator.steps_in_flight_on(robot_id):
                st = ctx.steps[step_id]
                result = SkillResult(
                    step_id=step_id,
                    robot_id=robot_id,
                    outcome=Outcome.FAILURE,
                    reason="robot disconnected",
                )
                self._emit_step_result(ctx, step_id, st.attempt, result, synthetic=True)
                self.fleet.release(robot_id)
                self.orchestrator.requeue_after_disconnect(ctx, step_id, robot_id)

    # phase 7 ------------------------------------------------------------------------

    def _dispatch(self, now: int) -> None:
        ready = self.orchestrator.ready_steps()
        if not ready:
            return
        outcome = dispatch_ready(ready, self.fleet.snapshot(), self.config.scheduler)
        by_step = {rs.step.step_id: rs for rs in ready}
        for assignment in outcome.assignments:
            rs = by_step[assignment.step_id]
            ctx = self.orchestrator.tasks[rs.task_id]
            st = ctx.steps[assignment.step_id]
            attempt = st.attempt + 1
            try:
                self.fleet.invoke_skill(assignment.robot_id, ctx.task_id, rs.step, attempt)
            except TargetUnresolvable as exc:
                self.orchestrator.on_dispatch_failed(ctx, assignment.step_id, now, str(exc))
                continue
            self._emit(
                EventKind.STEP_DISPATCHED,
                {
                    "task_id": ctx.task_id,
                    "plan_id": ctx.record.plan.plan_id,
                    "step_id": assignment.step_id,
                    "attempt": attempt,
                    "robot_id": assignment.robot_id,
                    "mode": assignment.mode.value,
                    "score": assignment.score,
                    "skill": rs.step.invocation.skill,
                    "handoff": rs.handoff.to_doc() if rs.handoff else None,
                },
            )
            self.orchestrator.on_dispatched(ctx, rs.step, assignment.robot_id)
            self.critic.begin_attempt(ctx.task_id, assignment.step_id)
            probe = self.world.probe_for(assignment.robot_id, assignment.step_id, attempt)
            if probe is not None:
                score = self.critic.evaluate(ctx.record.instruction, None, probe)
                self.critic.record(ctx.task_id, assignment.step_id, now, score, None)
        for step_id in outcome.blocked:
            rs = by_step[step_id]
            ctx = self.orchestrator.tasks[rs.task_id]
            self.orchestrator.mark_step_blocked(ctx, step_id)
        for step_id in outcome.pin_unavailable:
            rs = by_step[step_id]
            ctx = self.orchestrator.tasks[rs.task_id]
            self.orchestrator.on_dispatch_failed(
                ctx, step_id, now, f"pinned robot {rs.user_pin or rs.step.assigned_robot} unavailable"
            )

    # -- convenience views ------------------------------------------------------------------

    def task_state(self, task_id: str) -> TaskState:
        return self.orchestrator.tasks[task_id].record.state

    def close(self) -> None:
        self.log.close()


class ScenarioDriver:
    """Feeds a scenario's scripted instructions and clarification answers
    into a live runtime at their scheduled ticks."""

    def __init__(self, runtime: Runtime, scenario: Scenario):
        self.runtime = runtime
        self.scenario = scenario
        self._pending_submits = sorted(scenario.submits, key=lambda s: s.at_tick)
        self._task_by_index: Dict[int, str] = {}
        self._submit_index = 0
        self._sent = 0
        self._answer_directives = list(scenario.answers)
        self._scheduled_answers: List[Tuple[int, str, str]] = []
        self._seen_seq = 0

    def pump(self) -> None:
        """Queue every directive due at the next tick; call before tick()."""
        next_tick = self.runtime.world.tick + 1
        while self._pending_submits and self._pending_submits[0].at_tick <= next_tick:
            directive = self._pending_submits.pop(0)
            task_id = self.runtime.submit_instruction(
                directive.text,
                priority=directive.priority,
                explicit_robot=directive.explicit_robot,
                tau_override=directive.tau_override,
            )
            self._task_by_index[self._submit_index] = task_id
            self._submit_index += 1
        self._watch_clarifications(next_tick)
        still_due = []
        for when, cid, answer in self._scheduled_answers:
            if when <= next_tick:
                try:
                    self.runtime.answer_clarification(cid, answer)
                except (UnknownClarification, AlreadyAnswered):
                    pass  # expired before the scripted delay elapsed
            else:
                still_due.append((when, cid, answer))
        self._scheduled_answers = still_due

    def _watch_clarifications(self, next_tick: int) -> None:
        events = self.runtime.log.read_from(self._seen_seq)
        self._seen_seq += len(events)
        for event in events:
            if event.kind is not EventKind.CLARIFICATION_ASKED:
                continue
            for i, directive in enumerate(self._answer_directives):
                if directive is None:
                    continue
                task_id = self._task_by_index.get(directive.instruction_index)
                if task_id == event.payload["task_id"]:
                    when = event.sim_time + directive.delay
                    self._scheduled_answers.append(
                        (max(when, next_tick), event.payload["clarification_id"], directive.answer)
                    )
                    self._answer_directives[i] = None
                    break

    def exhausted(self) -> bool:
        return not self._pending_submits and not self._scheduled_answers


def run_scenario(
    scenario: Scenario,
    config: Optional[RuntimeConfig] = None,
    seed: int = 0,
    log_path: Optional[str] = None,
    max_ticks: int = 600,
) -> Runtime:
    """Headless scripted run: pump the scenario into a fresh runtime until
    everything settles or the tick budget runs out."""
    runtime = Runtime(scenario, config=config, seed=seed, log_path=log_path)
    driver = ScenarioDriver(runtime, scenario)
    for _ in range(max_ticks):
        driver.pump()
        runtime.tick()
        if driver.exhausted() and runtime.idle():
            break
    runtime.close()
    return runtime
