"""End-to-end runtime behavior over inline worlds plus invariant checks
replayed against every fixture scenario log."""

import collections

import pytest

from conftest import SCENARIO_NAMES
from fleetloop import Runtime, RuntimeConfig, scenario_from_doc
from fleetloop.config import OrchestratorConfig
from fleetloop.errors import AlreadyAnswered, RuntimeNotReady, UnknownClarification
from fleetloop.model import EventKind, TaskState
from fleetloop.orchestrator import ALLOWED_TRANSITIONS


def mini_doc(fleet, objects=(), anchors=(), persons=(), faults=()):
    return {
        "schema_version": 1,
        "name": "inline",
        "world": {"objects": list(objects), "persons": list(persons)},
        "fleet": list(fleet),
        "anchors": list(anchors),
        "faults": list(faults),
        "script": [],
    }


def arm_doc(robot_id="piper", x=0.0, caps=("grasp", "place", "observe", "adjust_viewpoint")):
    return {
        "robot_id": robot_id,
        "morphology": "arm",
        "capabilities": list(caps),
        "pose": {"x": x, "y": 0.0, "z": 0.8, "yaw": 0.0},
    }


def mobile_doc(robot_id, x=0.0, caps=("navigate", "observe", "inspect", "guide_person")):
    return {
        "robot_id": robot_id,
        "morphology": "mobile",
        "capabilities": list(caps),
        "pose": {"x": x, "y": 0.0, "z": 0.0, "yaw": 0.0},
    }


def make_runtime(doc, **kw):
    return Runtime(scenario_from_doc(doc), config=kw.pop("config", None), **kw)


def run_until(runtime, predicate, limit=300):
    for _ in range(limit):
        runtime.tick()
        if predicate():
            return True
    return False


class TestSubmitAndPlan:
    def test_task_id_issued_immediately_state_pending_then_planning(self):
        rt = make_runtime(mini_doc([arm_doc()], objects=[
            {"object_id": "o", "label": "bottle", "pose": {"x": 0.3, "y": 0.0, "z": 0.8}}
        ]))
        task_id = rt.submit_instruction("pick the bottle")
        assert task_id == "task-0001"
        rt.tick()
        first = next(
            e for e in rt.log.snapshot() if e.kind is EventKind.TASK_STATE_CHANGED
        )
        assert first.payload["from"] == "pending"
        assert rt.task_state(task_id) in (TaskState.EXECUTING, TaskState.DONE)

    def test_tau_override_replaces_completion_threshold(self):
        # navigate normally completes at 1.0; an override of 0.5 completes
        # the step at half distance via the critic, not physical arrival
        rt = make_runtime(mini_doc(
            [mobile_doc("scout")],
            anchors=[{"name": "corridor", "pose": {"x": 8.0, "y": 0.0, "z": 0.0}}],
        ))
        tid = rt.submit_instruction("inspect the corridor", tau_override=0.5)
        assert run_until(rt, lambda: rt.task_state(tid) is TaskState.DONE, 80)
        nav_scores = [
            e.payload["score"] for e in rt.log.snapshot()
            if e.kind is EventKind.CRITIC_SCORED and e.payload["decision"] == "complete"
        ]
        assert nav_scores and nav_scores[0] < 1.0
        assert rt.world.robots["scout"].pose.x < 8.0

    def test_unparseable_instruction_becomes_clarification(self):
        rt = make_runtime(mini_doc([arm_doc()]))
        tid = rt.submit_instruction("do a backflip twice")
        rt.tick()
        assert rt.task_state(tid) is TaskState.AWAITING_CLARIFICATION
        (clar,) = rt.orchestrator.clarifications.values()
        assert "Supported forms" in clar.question

    def test_reparsed_answer_resumes(self):
        rt = make_runtime(mini_doc([arm_doc()], objects=[
            {"object_id": "o", "label": "bottle", "pose": {"x": 0.3, "y": 0.0, "z": 0.8}}
        ]))
        tid = rt.submit_instruction("grab that thing")
        rt.tick()
        (cid,) = rt.orchestrator.clarifications
        rt.answer_clarification(cid, "pick the bottle")
        assert run_until(rt, lambda: rt.task_state(tid) is TaskState.DONE, 60)

    def test_clarification_timeout_fails_task(self):
        cfg = RuntimeConfig(orchestrator=OrchestratorConfig(clarification_timeout=10))
        rt = make_runtime(mini_doc([arm_doc()]), config=cfg)
        tid = rt.submit_instruction("do a backflip twice")
        rt.tick()
        run_until(rt, lambda: rt.task_state(tid) is TaskState.FAILED, 30)
        assert rt.task_state(tid) is TaskState.FAILED

    def test_answer_validation(self):
        rt = make_runtime(mini_doc([arm_doc()]))
        rt.submit_instruction("do a backflip twice")
        rt.tick()
        (cid,) = rt.orchestrator.clarifications
        with pytest.raises(UnknownClarification):
            rt.answer_clarification("clar-9999", "x")
        rt.answer_clarification(cid, "pick the bottle")
        with pytest.raises(AlreadyAnswered):
            rt.answer_clarification(cid, "again")

    def test_answer_after_timeout_is_unknown(self):
        cfg = RuntimeConfig(orchestrator=OrchestratorConfig(clarification_timeout=5))
        rt = make_runtime(mini_doc([arm_doc()]), config=cfg)
        rt.submit_instruction("do a backflip twice")
        rt.tick()
        (cid,) = rt.orchestrator.clarifications
        rt.run(10)
        with pytest.raises(UnknownClarification):
            rt.answer_clarification(cid, "late")


class TestBlockedAndRegistration:
    def test_no_capable_robot_blocks_then_new_registration_unblocks(self):
        doc = mini_doc(
            [mobile_doc("scout")],
            objects=[{"object_id": "o", "label": "bottle", "pose": {"x": 0.3, "y": 0.0, "z": 0.8}}],
        )
        rt = make_runtime(doc)
        tid = rt.submit_instruction("pick the bottle")
        rt.tick()
        assert rt.task_state(tid) is TaskState.BLOCKED
        # a grasp-capable arm joins: capability registration, no policy change
        from fleetloop.fleet import EmbodimentDescriptor, Morphology
        from fleetloop.model import Pose3

        rt.fleet.register(
            EmbodimentDescriptor(
                robot_id="piper",
                morphology=Morphology.ARM,
                capabilities=frozenset({"grasp", "place", "observe", "adjust_viewpoint"}),
                pose=Pose3(0, 0, 0.8),
            ),
            tick=rt.world.tick,
        )
        rt.world.add_robot("piper", Pose3(0, 0, 0.8))
        rt.orchestrator.note_fleet_change()
        assert run_until(rt, lambda: rt.task_state(tid) is TaskState.DONE, 60)


class TestExplicitRobot:
    def test_pin_to_disconnected_robot_asks(self):
        rt = make_runtime(mini_doc([mobile_doc("scout")], anchors=[
            {"name": "corridor", "pose": {"x": 4.0, "y": 0.0, "z": 0.0}}
        ]))
        tid = rt.submit_instruction("inspect the corridor", explicit_robot="ghost")
        rt.tick()
        assert rt.task_state(tid) is TaskState.AWAITING_CLARIFICATION
        (cid,) = rt.orchestrator.clarifications
        rt.answer_clarification(cid, "auto")
        assert run_until(rt, lambda: rt.task_state(tid) is TaskState.DONE, 60)

    def test_pin_abort(self):
        rt = make_runtime(mini_doc([mobile_doc("scout")], anchors=[
            {"name": "corridor", "pose": {"x": 4.0, "y": 0.0, "z": 0.0}}
        ]))
        tid = rt.submit_instruction("inspect the corridor", explicit_robot="ghost")
        rt.tick()
        (cid,) = rt.orchestrator.clarifications
        rt.answer_clarification(cid, "abort")
        rt.tick()
        assert rt.task_state(tid) is TaskState.FAILED

    def test_explicit_mode_recorded_in_dispatch(self):
        rt = make_runtime(mini_doc(
            [mobile_doc("scout1"), mobile_doc("scout2", x=3.0)],
            anchors=[{"name": "corridor", "pose": {"x": 4.0, "y": 0.0, "z": 0.0}}],
        ))
        tid = rt.submit_instruction("inspect the corridor", explicit_robot="scout1")
        assert run_until(rt, lambda: rt.task_state(tid) is TaskState.DONE, 80)
        dispatches = [e for e in rt.log.snapshot() if e.kind is EventKind.STEP_DISPATCHED]
        assert all(d.payload["robot_id"] == "scout1" for d in dispatches)
        assert all(d.payload["mode"] == "explicit" for d in dispatches)


class TestPriorityOrdering:
    def test_higher_priority_task_dispatched_first(self):
        rt = make_runtime(mini_doc(
            [mobile_doc("solo")],
            anchors=[
                {"name": "corridor", "pose": {"x": 4.0, "y": 0.0, "z": 0.0}},
                {"name": "entrance", "pose": {"x": -4.0, "y": 0.0, "z": 0.0}},
            ],
        ))
        low = rt.submit_instruction("inspect the corridor", priority=0)
        high = rt.submit_instruction("inspect the entrance", priority=2)
        rt.tick()
        first = next(e for e in rt.log.snapshot() if e.kind is EventKind.STEP_DISPATCHED)
        assert first.payload["task_id"] == high


class TestStatusDirect:
    def test_connected_robot_reports_without_steps(self):
        rt = make_runtime(mini_doc([mobile_doc("scout")]))
        tid = rt.submit_instruction("what is the status of scout")
        rt.tick()
        assert rt.task_state(tid) is TaskState.DONE
        done = [
            e for e in rt.log.snapshot()
            if e.kind is EventKind.TASK_STATE_CHANGED and e.payload["to"] == "done"
        ]
        assert done[0].payload["report"]["robot_id"] == "scout"
        assert done[0].payload["report"]["liveness"] == "connected"


class TestReplayMode:
    def test_submit_refused_in_replay_mode(self):
        rt = make_runtime(mini_doc([arm_doc()]), mode="replay")
        with pytest.raises(RuntimeNotReady):
            rt.submit_instruction("pick the bottle")
        with pytest.raises(RuntimeNotReady):
            rt.answer_clarification("clar-0001", "x")


# -- log-level invariants across every fixture scenario ---------------------------------


class TestScenarioLogInvariants:
    def test_seqs_gapless(self, scenario_runs):
        for name, (runtime, _) in scenario_runs.items():
            seqs = [e.seq for e in runtime.log.snapshot()]
            assert seqs == list(range(len(seqs))), name

    def test_state_machine_soundness(self, scenario_runs):
        for name, (runtime, _) in scenario_runs.items():
            for e in runtime.log.snapshot():
                if e.kind is not EventKind.TASK_STATE_CHANGED:
                    continue
                src = TaskState(e.payload["from"])
                dst = TaskState(e.payload["to"])
                assert dst in ALLOWED_TRANSITIONS.get(src, frozenset()), (name, src, dst)

    def test_every_dispatch_gets_exactly_one_terminal_result(self, scenario_runs):
        for name, (runtime, _) in scenario_runs.items():
            dispatched = collections.Counter()
            resolved = collections.Counter()
            for e in runtime.log.snapshot():
                key_of = lambda p: (p["task_id"], p["step_id"], p["attempt"])
                if e.kind is EventKind.STEP_DISPATCHED:
                    dispatched[key_of(e.payload)] += 1
                elif e.kind is EventKind.STEP_RESULT:
                    resolved[key_of(e.payload)] += 1
            for key, n in dispatched.items():
                assert n == 1, (name, key)
                assert resolved[key] == 1, (name, key)

    def test_done_tasks_end_with_complete_verdict(self, scenario_runs):
        for name, (runtime, _) in scenario_runs.items():
            events = runtime.log.snapshot()
            for tid in runtime.orchestrator.order:
                ctx = runtime.orchestrator.tasks[tid]
                if ctx.record.state is not TaskState.DONE or ctx.record.plan is None:
                    continue
                completes = [
                    e for e in events
                    if e.kind is EventKind.CRITIC_SCORED
                    and e.payload["task_id"] == tid
                    and e.payload["decision"] == "complete"
                ]
                assert completes, (name, tid)

    def test_every_step_attempt_has_a_critic_score(self, scenario_runs):
        for name, (runtime, _) in scenario_runs.items():
            events = runtime.log.snapshot()
            scored = {
                (e.payload["task_id"], e.payload["step_id"], e.payload["attempt"])
                for e in events
                if e.kind is EventKind.CRITIC_SCORED
            }
            for e in events:
                if e.kind is EventKind.STEP_DISPATCHED:
                    key = (e.payload["task_id"], e.payload["step_id"], e.payload["attempt"])
                    assert key in scored, (name, key)

    def test_write_back_precedes_next_dispatch(self, scenario_runs):
        """Any successful observation-bearing step has its MemoryInserted
        before the task's next StepDispatched."""
        for name, (runtime, _) in scenario_runs.items():
            events = runtime.log.snapshot()
            inserted_at = {
                e.payload["frame_id"]: e.seq
                for e in events
                if e.kind is EventKind.MEMORY_INSERTED and e.payload.get("frame_id")
            }
            for e in events:
                if e.kind is not EventKind.STEP_RESULT or not e.payload.get("frame_id"):
                    continue
                if e.payload["outcome"] != "success":
                    continue
                frame_id = e.payload["frame_id"]
                later_dispatches = [
                    d.seq for d in events
                    if d.kind is EventKind.STEP_DISPATCHED
                    and d.payload["task_id"] == e.payload["task_id"]
                    and d.seq > e.seq
                ]
                if later_dispatches:
                    assert frame_id in inserted_at, (name, frame_id)
                    assert inserted_at[frame_id] < min(later_dispatches), (name, frame_id)

    def test_no_dispatch_to_disconnected_robot(self, scenario_runs):
        for name, (runtime, _) in scenario_runs.items():
            dead_since = {}
            for e in runtime.log.snapshot():
                if e.kind is EventKind.ROBOT_DISCONNECTED:
                    dead_since.setdefault(e.payload["robot_id"], e.seq)
                elif e.kind is EventKind.ROBOT_REGISTERED:
                    dead_since.pop(e.payload["robot_id"], None)
                elif e.kind is EventKind.STEP_DISPATCHED:
                    robot = e.payload["robot_id"]
                    assert robot not in dead_since, (name, robot, e.seq)


class TestParallelFanout:
    def test_prepare_scene_dispatches_three_robots_in_one_tick(self, scenario_runs):
        runtime, _ = scenario_runs["prepare_reception"]
        dispatches = [
            e for e in runtime.log.snapshot() if e.kind is EventKind.STEP_DISPATCHED
        ]
        first_tick = dispatches[0].sim_time
        same_tick = [d for d in dispatches if d.sim_time == first_tick]
        assert len(same_tick) == 3
        assert len({d.payload["robot_id"] for d in same_tick}) == 3
