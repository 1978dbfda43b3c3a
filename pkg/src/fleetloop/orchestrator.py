"""Per-task decision logic: grounding, plan generation, clarifications, and
verdict-driven refinement/replanning.

The task state machine here is the authority for every TaskStateChanged
event; transitions outside ALLOWED_TRANSITIONS are bugs, not conditions.
Search under partial observability is realized iteratively: each sweep
segment is a short probe plan, and the conditional branch (found vs. keep
sweeping vs. give up) runs when the segment completes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from .config import OrchestratorConfig, SchedulingConfig
from .critic import CriticVerdict, Decision
from .errors import NeverObserved, UnknownAnchor, UnparseableInstruction
from .fleet import FleetRegistry, Liveness
from .grammar import GroundedIntent, Verb, parse_instruction, supported_forms
from .memory import MemoryStore, NavigableResult, cosine
from .model import (
    EventKind,
    FailurePolicy,
    PlanProgram,
    PlanStep,
    Pose3,
    SkillInvocation,
    Target,
    TaskRecord,
    TaskState,
)
from .scheduler import HandoffContext, ReadyStep, score_candidate

ALLOWED_TRANSITIONS: Dict[TaskState, frozenset] = {
    TaskState.PENDING: frozenset({TaskState.PLANNING}),
    TaskState.PLANNING: frozenset(
        {TaskState.AWAITING_CLARIFICATION, TaskState.EXECUTING, TaskState.BLOCKED}
    ),
    TaskState.AWAITING_CLARIFICATION: frozenset({TaskState.PLANNING, TaskState.FAILED}),
    TaskState.EXECUTING: frozenset(
        {
            TaskState.REFINING,
            TaskState.REPLANNING,
            TaskState.DONE,
            TaskState.FAILED,
            TaskState.BLOCKED,
        }
    ),
    TaskState.REFINING: frozenset({TaskState.EXECUTING}),
    TaskState.REPLANNING: frozenset({TaskState.PLANNING}),
    TaskState.BLOCKED: frozenset({TaskState.PLANNING}),
}

FULL_SWEEP = 2.0 * math.pi

# clarification kinds
CLARIFY_MISSING_TARGET = "missing_target"
CLARIFY_UNPARSEABLE = "unparseable_instruction"
CLARIFY_UNKNOWN_PLACE = "unknown_place"
CLARIFY_PIN_UNAVAILABLE = "explicit_robot_unavailable"


@dataclass
class Clarification:
    clarification_id: str
    task_id: str
    question: str
    options: List[str]
    kind: str
    asked_at: int
    answer: Optional[str] = None


@dataclass
class StepState:
    attempt: int = 0
    in_flight: bool = False
    done: bool = False
    robot: Optional[str] = None
    refines: int = 0
    handoff: Optional[HandoffContext] = None
    observation: Optional[object] = None


@dataclass
class TaskContext:
    record: TaskRecord
    intent: Optional[GroundedIntent] = None
    plan_kind: str = "goal"  # "goal" plans finish the task; "probe" plans gather context
    steps: Dict[str, StepState] = field(default_factory=dict)
    chain_group: Dict[str, int] = field(default_factory=dict)  # step_id -> group
    group_robot: Dict[int, str] = field(default_factory=dict)
    probe_done: bool = False
    sweeping: bool = False
    sweep_yaw: float = 0.0
    search_robot: Optional[str] = None
    clarify_answer: Optional[str] = None
    replans: int = 0
    report: Optional[dict] = None
    blocked_epoch: int = -1
    exclude: frozenset = frozenset()

    @property
    def task_id(self) -> str:
        return self.record.task_id


def ground_instruction(text: str, memory: MemoryStore) -> GroundedIntent:
    """Parse against the template grammar; destinations stay textual here and
    are resolved against place anchors during plan generation."""
    return parse_instruction(text)


def resolve_place(memory: MemoryStore, text: Optional[str]) -> Optional[NavigableResult]:
    """Anchor lookup tolerant of spacing: "Room 207" matches anchor "room_207"."""
    if not text:
        return None
    for candidate in (text, text.replace(" ", "_")):
        try:
            return memory.resolve_anchor(candidate)
        except UnknownAnchor:
            continue
    return None


def rank_by_attribute(memory: MemoryStore, attribute: str):
    """Top-1 object entry by embedding similarity between the attribute and
    stored category descriptions; None when nothing scores above zero."""
    entries = list(memory.objects.values())
    if not entries:
        return None
    query = memory.embed(attribute)
    scored = sorted(
        ((cosine(memory.embed(e.category), query), e) for e in entries),
        key=lambda se: (-se[0], -se[1].last_seen, se[1].object_id),
    )
    sim, best = scored[0]
    return best if sim > 0.0 else None


class Orchestrator:
    """Event-ordered task manager; one instance per runtime."""

    def __init__(
        self,
        memory: MemoryStore,
        fleet: FleetRegistry,
        sched_cfg: SchedulingConfig,
        cfg: OrchestratorConfig,
        emit: Callable[[EventKind, dict], None],
        cancel_attempt: Callable,  # (ctx, step_id, reason, success=False) -> None
    ):
        self.memory = memory
        self.fleet = fleet
        self.sched_cfg = sched_cfg
        self.cfg = cfg
        self._emit = emit
        self._cancel_attempt = cancel_attempt
        self.tasks: Dict[str, TaskContext] = {}
        self.order: List[str] = []
        self.clarifications: Dict[str, Clarification] = {}
        self._next_plan = 1
        self._next_clarification = 1
        self._pending_steps: List[PlanStep] = []
        self.fleet_epoch = 0
        self.now = 0  # last tick seen; for clarifications raised outside a pass

    # -- task intake ------------------------------------------------------------

    def new_task(
        self,
        task_id: str,
        text: str,
        priority: int,
        submitted_at: int,
        explicit_robot: Optional[str],
        tau_override: Optional[float],
    ) -> TaskContext:
        record = TaskRecord(
            task_id=task_id,
            instruction=text,
            priority=priority,
            submitted_at=submitted_at,
            explicit_robot=explicit_robot,
            tau_override=tau_override,
        )
        ctx = TaskContext(record=record)
        self.tasks[task_id] = ctx
        self.order.append(task_id)
        return ctx

    def _set_state(self, ctx: TaskContext, new: TaskState, reason: str = "", report: Optional[dict] = None):
        old = ctx.record.state
        if new is old:
            return
        allowed = ALLOWED_TRANSITIONS.get(old, frozenset())
        if new not in allowed:
            raise AssertionError(f"illegal transition {old.value} -> {new.value} ({reason})")
        ctx.record.state = new
        payload = {
            "task_id": ctx.task_id,
            "from": old.value,
            "to": new.value,
            "reason": reason,
        }
        if report is not None:
            payload["report"] = report
        self._emit(EventKind.TASK_STATE_CHANGED, payload)

    # -- planning pass (one per tick) -----------------------------------------------

    def planning_pass(self, tick: int) -> None:
        self.now = tick
        self._expire_clarifications(tick)
        for task_id in list(self.order):
            ctx = self.tasks[task_id]
            state = ctx.record.state
            if state is TaskState.PENDING:
                self._set_state(ctx, TaskState.PLANNING, "accepted")
                self._plan(ctx, tick)
            elif state is TaskState.REPLANNING:
                self._set_state(ctx, TaskState.PLANNING, "replanning")
                self._plan(ctx, tick)
            elif state is TaskState.BLOCKED and ctx.blocked_epoch < self.fleet_epoch:
                self._set_state(ctx, TaskState.PLANNING, "fleet changed")
                self._plan(ctx, tick)

    def _expire_clarifications(self, tick: int) -> None:
        for cid in list(self.clarifications):
            clar = self.clarifications[cid]
            if clar.answer is not None:
                continue
            if tick - clar.asked_at > self.cfg.clarification_timeout:
                ctx = self.tasks[clar.task_id]
                del self.clarifications[cid]
                self._set_state(ctx, TaskState.FAILED, "clarification timed out")

    # -- plan generation ---------------------------------------------------------------

    def _plan(self, ctx: TaskContext, tick: int) -> None:
        if ctx.intent is None:
            try:
                ctx.intent = ground_instruction(ctx.record.instruction, self.memory)
                if ctx.record.explicit_robot and ctx.intent.explicit_robot is None:
                    ctx.intent = GroundedIntent(
                        verb=ctx.intent.verb,
                        object_query=ctx.intent.object_query,
                        attribute_query=ctx.intent.attribute_query,
                        destination=ctx.intent.destination,
                        pickup=ctx.intent.pickup,
                        person=ctx.intent.person,
                        explicit_robot=ctx.record.explicit_robot,
                    )
            except UnparseableInstruction:
                forms = "; ".join(supported_forms())
                self._ask(
                    ctx,
                    tick,
                    kind=CLARIFY_UNPARSEABLE,
                    question=f"I could not parse that instruction. Supported forms: {forms}",
                    options=[],
                )
                return
        pin = ctx.intent.explicit_robot
        if pin is not None and not self.fleet.is_connected(pin):
            self._ask(
                ctx,
                tick,
                kind=CLARIFY_PIN_UNAVAILABLE,
                question=f"Robot '{pin}' is not connected. Answer 'auto' to choose "
                "automatically or 'abort' to cancel the task.",
                options=["auto", "abort"],
            )
            return
        self.generate_plan(ctx, tick)

    def generate_plan(self, ctx: TaskContext, tick: int) -> None:
        """Verb-specific templates; may issue a plan, finish the task with a
        report, raise a clarification, or block on missing capabilities."""
        verb = ctx.intent.verb
        handler = {
            Verb.PICK: self._plan_pick,
            Verb.PLACE: self._plan_pick,  # place-of-an-object is grasp+place
            Verb.DELIVER: self._plan_deliver,
            Verb.FIND: self._plan_find,
            Verb.INSPECT: self._plan_inspect,
            Verb.STATUS: self._plan_status,
            Verb.GUIDE: self._plan_guide,
            Verb.PREPARE_SCENE: self._plan_prepare_scene,
        }[verb]
        handler(ctx, tick)

    # verb templates ----------------------------------------------------------------

    def _plan_pick(self, ctx: TaskContext, tick: int) -> None:
        intent = ctx.intent
        target = self._resolve_object_target(intent)
        if target is None:
            self._seek_target(ctx, tick)
            return
        dest = None
        if intent.destination:
            dest = resolve_place(self.memory, intent.destination)
            if dest is None:
                self._ask_unknown_place(ctx, tick, intent.destination)
                return
        steps = [self._mk_step("grasp", Target(object_query=target.category))]
        if dest is not None:
            steps.append(
                self._mk_step("place", Target(anchor_name=dest.category), deps=[steps[0]])
            )
        self._issue(ctx, steps, kind="goal")

    def _plan_deliver(self, ctx: TaskContext, tick: int) -> None:
        intent = ctx.intent
        target = self._resolve_object_target(intent)
        if target is None:
            self._seek_target(ctx, tick)
            return
        dest = resolve_place(self.memory, intent.destination)
        if dest is None:
            self._ask_unknown_place(ctx, tick, intent.destination)
            return
        grasp = self._mk_step("grasp", Target(object_query=target.category))
        navigate = self._mk_step("navigate", Target(anchor_name=dest.category), deps=[grasp])
        detect = self._mk_step("observe", Target(anchor_name=dest.category), deps=[navigate])
        handover = self._mk_step(
            "handover", Target(object_query=intent.person or "person"), deps=[detect]
        )
        self._issue(ctx, [grasp, navigate, detect, handover], kind="goal")

    def _plan_find(self, ctx: TaskContext, tick: int) -> None:
        target = self._resolve_object_target(ctx.intent)
        if target is None:
            self._seek_target(ctx, tick)
            return
        result = self.memory.normalize_result(target)
        self._finish_with_report(ctx, result.to_doc(), "target located in memory")

    def _plan_inspect(self, ctx: TaskContext, tick: int) -> None:
        subject = ctx.intent.object_query or ""
        place = resolve_place(self.memory, subject)
        if place is not None:
            navigate = self._mk_step("navigate", Target(anchor_name=subject))
            look = self._mk_step("observe", Target(anchor_name=subject), deps=[navigate])
            self._issue(ctx, [navigate, look], kind="goal")
            return
        try:
            last = self.memory.last_known_location(subject)
        except NeverObserved:
            obj = self._resolve_object_target(ctx.intent)
            if obj is None:
                self._seek_target(ctx, tick)
                return
            last = self.memory.normalize_result(obj)
        navigate = self._mk_step("navigate", Target(pose=last.pose))
        look = self._mk_step("inspect", Target(object_query=subject), deps=[navigate])
        self._issue(ctx, [navigate, look], kind="goal")

    def _plan_status(self, ctx: TaskContext, tick: int) -> None:
        subject = ctx.intent.object_query or ""
        if self.fleet.has(subject):
            descriptor = self.fleet.get(subject)
            if descriptor.liveness is Liveness.CONNECTED:
                self._finish_with_report(ctx, descriptor.to_doc(), "robot reachable, status direct")
                return
            # unreachable: recover the last known location from shared memory
            # and send another embodiment to look
            try:
                last = self.memory.last_known_location(subject)
            except NeverObserved:
                self._ask(
                    ctx,
                    tick,
                    kind=CLARIFY_UNKNOWN_PLACE,
                    question=f"'{subject}' is disconnected and has never reported a location.",
                    options=["abort"],
                )
                return
            ctx.report = {"last_known": last.to_doc()}
            navigate = self._mk_step("navigate", Target(pose=last.pose))
            look = self._mk_step("inspect", Target(object_query=subject), deps=[navigate])
            self._issue(ctx, [navigate, look], kind="goal", exclude=frozenset({subject}))
            return
        try:
            last = self.memory.last_known_location(subject)
            self._finish_with_report(ctx, last.to_doc(), "subject located in memory")
        except NeverObserved:
            self._ask(
                ctx,
                tick,
                kind=CLARIFY_UNKNOWN_PLACE,
                question=f"I have never observed '{subject}'.",
                options=["abort"],
            )

    def _plan_guide(self, ctx: TaskContext, tick: int) -> None:
        intent = ctx.intent
        pickup = resolve_place(self.memory, intent.pickup)
        if pickup is None:
            self._ask_unknown_place(ctx, tick, intent.pickup)
            return
        dest = resolve_place(self.memory, intent.destination)
        if dest is None:
            self._ask_unknown_place(ctx, tick, intent.destination)
            return
        navigate = self._mk_step("navigate", Target(anchor_name=pickup.category))
        detect = self._mk_step("observe", Target(anchor_name=pickup.category), deps=[navigate])
        guide = self._mk_step(
            "guide_person", Target(anchor_name=dest.category), deps=[detect]
        )
        self._issue(ctx, [navigate, detect, guide], kind="goal")

    def _plan_prepare_scene(self, ctx: TaskContext, tick: int) -> None:
        # pinned decomposition: corridor inspection, entrance approach, and a
        # desk survey run as independent branches so they fan out in parallel
        required = ["corridor", "entrance", "desk"]
        missing = [a for a in required if resolve_place(self.memory, a) is None]
        if missing:
            self._ask_unknown_place(ctx, tick, ", ".join(missing))
            return
        corridor_nav = self._mk_step("navigate", Target(anchor_name="corridor"))
        corridor_look = self._mk_step(
            "observe", Target(anchor_name="corridor"), deps=[corridor_nav]
        )
        entrance_nav = self._mk_step("navigate", Target(anchor_name="entrance"))
        desk_look = self._mk_step("observe", Target(anchor_name="desk"))
        self._issue(
            ctx,
            [corridor_nav, corridor_look, entrance_nav, desk_look],
            kind="goal",
            chains=[[corridor_nav.step_id, corridor_look.step_id]],
        )

    # -- target seeking (probe / clarify / sweep) ------------------------------------------

    def _resolve_object_target(self, intent: GroundedIntent):
        if intent.attribute_query:
            return rank_by_attribute(self.memory, intent.attribute_query)
        if intent.object_query:
            hits = self.memory.find_objects(intent.object_query)
            return hits[0] if hits else None
        return None

    def _seek_target(self, ctx: TaskContext, tick: int) -> None:
        """Target absent from memory: observe once, then ask, then sweep."""
        anchor = self._search_anchor(ctx)
        executor = ctx.search_robot or self._choose_executor("observe", anchor)
        if executor is None or not self.fleet.is_connected(executor):
            self._block(ctx, "no robot can observe")
            return
        ctx.search_robot = executor
        has_frame = any(e.frame.robot_id == executor for e in self.memory.visual)
        if not ctx.probe_done and not has_frame:
            ctx.probe_done = True
            look = self._mk_step("observe", Target(pose=anchor))
            self._issue(ctx, [look], kind="probe", pin_chain_to=executor)
            return
        if ctx.clarify_answer is None:
            self.handle_missing_target(ctx, tick)
            return
        # user confirmed presence: next sweep segment
        ctx.sweeping = True
        delta = self.cfg.sweep_delta_yaw
        ctx.sweep_yaw += delta
        turn = self._mk_step(
            "adjust_viewpoint", Target(pose=anchor), params={"delta_yaw": delta}
        )
        look = self._mk_step("observe", Target(pose=anchor), deps=[turn])
        self._issue(ctx, [turn, look], kind="probe", pin_chain_to=executor)

    def handle_missing_target(self, ctx: TaskContext, tick: int) -> Clarification:
        target = ctx.intent.attribute_query or ctx.intent.object_query or "the target"
        robot = ctx.search_robot or "the robot"
        return self._ask(
            ctx,
            tick,
            kind=CLARIFY_MISSING_TARGET,
            question=(
                f"I cannot find '{target}' in the latest view from {robot}. "
                "Is it absent, or just outside the field of view?"
            ),
            options=["present", "absent"],
        )

    def _search_anchor(self, ctx: TaskContext) -> Pose3:
        intent = ctx.intent
        for text in (intent.pickup, intent.destination):
            hit = resolve_place(self.memory, text)
            if hit is not None:
                return hit.pose
        return Pose3(0.0, 0.0, 0.0)

    def _choose_executor(self, skill: str, anchor: Pose3) -> Optional[str]:
        candidates = [
            r
            for r in self.fleet.snapshot()
            if r.liveness is Liveness.CONNECTED and skill in r.capabilities
        ]
        if not candidates:
            return None
        best = sorted(
            candidates,
            key=lambda r: (-score_candidate(r, anchor, self.sched_cfg), r.robot_id),
        )[0]
        return best.robot_id

    # -- clarifications ---------------------------------------------------------------------

    def _ask(
        self, ctx: TaskContext, tick: int, kind: str, question: str, options: List[str]
    ) -> Clarification:
        cid = f"clar-{self._next_clarification:04d}"
        self._next_clarification += 1
        clar = Clarification(
            clarification_id=cid,
            task_id=ctx.task_id,
            question=question,
            options=options,
            kind=kind,
            asked_at=tick,
        )
        self.clarifications[cid] = clar
        self._emit(
            EventKind.CLARIFICATION_ASKED,
            {
                "clarification_id": cid,
                "task_id": ctx.task_id,
                "question": question,
                "options": options,
                "kind": kind,
            },
        )
        self._set_state(ctx, TaskState.AWAITING_CLARIFICATION, kind)
        return clar

    def _ask_unknown_place(self, ctx: TaskContext, tick: int, place: Optional[str]) -> None:
        self._ask(
            ctx,
            tick,
            kind=CLARIFY_UNKNOWN_PLACE,
            question=f"I do not know the place '{place}'. Which anchor should I use?",
            options=self.memory.anchor_names(),
        )

    def apply_answer(self, clarification_id: str, answer: str, tick: int) -> None:
        """Runtime-injected ClarificationAnswered event handler."""
        self.now = tick
        clar = self.clarifications.pop(clarification_id, None)
        if clar is None:
            return  # expired or unknown; the gateway validates before queueing
        clar.answer = answer
        ctx = self.tasks[clar.task_id]
        normalized = answer.strip().lower()
        if clar.kind == CLARIFY_MISSING_TARGET:
            if normalized == "present":
                ctx.clarify_answer = "present"
                self._set_state(ctx, TaskState.PLANNING, "user confirmed presence")
                self._plan(ctx, tick)
            else:
                self._set_state(ctx, TaskState.FAILED, "object not in scene per user")
        elif clar.kind == CLARIFY_UNPARSEABLE:
            try:
                intent = parse_instruction(answer)
            except UnparseableInstruction:
                self._set_state(ctx, TaskState.FAILED, "instruction still unparseable")
                return
            ctx.intent = intent
            ctx.record.instruction = answer
            self._set_state(ctx, TaskState.PLANNING, "re-submitted instruction")
            self._plan(ctx, tick)
        elif clar.kind == CLARIFY_PIN_UNAVAILABLE:
            if normalized == "auto":
                intent = ctx.intent
                ctx.intent = GroundedIntent(
                    verb=intent.verb,
                    object_query=intent.object_query,
                    attribute_query=intent.attribute_query,
                    destination=intent.destination,
                    pickup=intent.pickup,
                    person=intent.person,
                    explicit_robot=None,
                )
                ctx.record.explicit_robot = None
                self._set_state(ctx, TaskState.PLANNING, "explicit pin released")
                self._plan(ctx, tick)
            else:
                self._set_state(ctx, TaskState.FAILED, "pinned robot unavailable")
        elif clar.kind == CLARIFY_UNKNOWN_PLACE:
            if normalized in ("abort", ""):
                self._set_state(ctx, TaskState.FAILED, "unknown place")
                return
            intent = ctx.intent
            ctx.intent = GroundedIntent(
                verb=intent.verb,
                object_query=intent.object_query,
                attribute_query=intent.attribute_query,
                destination=answer if intent.destination else None,
                pickup=intent.pickup if intent.destination else answer,
                person=intent.person,
                explicit_robot=intent.explicit_robot,
            )
            self._set_state(ctx, TaskState.PLANNING, "place re-specified")
            self._plan(ctx, tick)
        else:
            self._set_state(ctx, TaskState.FAILED, f"unhandled clarification kind {clar.kind}")

    # -- plan issuing -----------------------------------------------------------------------

    def _mk_step(
        self,
        skill: str,
        target: Target,
        deps: Optional[List[PlanStep]] = None,
        params: Optional[dict] = None,
    ) -> PlanStep:
        step = PlanStep(
            step_id=f"s{len(self._pending_steps) + 1}",  # renumbered in _issue
            invocation=SkillInvocation(skill=skill, target=target, params=params or {}),
            depends_on=frozenset(d.step_id for d in (deps or [])),
        )
        self._pending_steps.append(step)
        return step

    def _issue(
        self,
        ctx: TaskContext,
        steps: List[PlanStep],
        kind: str,
        chains: Optional[List[List[str]]] = None,
        pin_chain_to: Optional[str] = None,
        exclude: frozenset = frozenset(),
    ) -> None:
        self._pending_steps = []
        pin = ctx.intent.explicit_robot
        if pin is not None and self.fleet.is_connected(pin):
            lacking = sorted(
                {s.invocation.skill for s in steps} - set(self.fleet.get(pin).capabilities)
            )
            if lacking:
                self._ask(
                    ctx,
                    self.now,
                    kind=CLARIFY_PIN_UNAVAILABLE,
                    question=f"Robot '{pin}' lacks {', '.join(lacking)} needed for this task. "
                    "Answer 'auto' to choose automatically or 'abort' to cancel.",
                    options=["auto", "abort"],
                )
                return
        plan_id = f"plan-{self._next_plan:04d}"
        self._next_plan += 1
        renames = {}
        for idx, step in enumerate(steps, start=1):
            renames[step.step_id] = f"{plan_id}-s{idx}"
        for step in steps:
            step.step_id = renames[step.step_id]
            step.depends_on = frozenset(renames[d] for d in step.depends_on)
            if ctx.intent.explicit_robot:
                step.assigned_robot = ctx.intent.explicit_robot
        plan = PlanProgram(plan_id=plan_id, steps=steps)
        ctx.record.plan = plan
        ctx.plan_kind = kind
        ctx.steps = {s.step_id: StepState() for s in steps}
        ctx.chain_group = {}
        ctx.group_robot = {}
        ctx.exclude = exclude
        if chains is None:
            # default: the whole plan is one handover-free chain on one robot
            chains = [[s.step_id for s in steps]] if len(steps) > 1 else []
        for group, chain in enumerate(chains):
            for sid in chain:
                ctx.chain_group[sid] = group
        if pin_chain_to is not None:
            for sid in ctx.steps:
                ctx.chain_group.setdefault(sid, 0)
            ctx.group_robot[0] = pin_chain_to
            for group in {g for g in ctx.chain_group.values()}:
                ctx.group_robot[group] = pin_chain_to
        self._emit(
            EventKind.PLAN_ISSUED,
            {"task_id": ctx.task_id, "plan": plan.to_doc(), "plan_kind": kind},
        )
        self._set_state(ctx, TaskState.EXECUTING, f"plan {plan_id} issued")

    def _finish_with_report(self, ctx: TaskContext, report: dict, reason: str) -> None:
        # zero-step tasks pass through Executing so the state machine stays uniform
        self._set_state(ctx, TaskState.EXECUTING, "no physical steps required")
        self._set_state(ctx, TaskState.DONE, reason, report=report)

    def _block(self, ctx: TaskContext, reason: str) -> None:
        ctx.blocked_epoch = self.fleet_epoch
        if ctx.record.state is TaskState.PLANNING:
            self._set_state(ctx, TaskState.BLOCKED, reason)
        elif ctx.record.state is TaskState.EXECUTING:
            for sid, st in ctx.steps.items():
                if st.in_flight:
                    self._cancel_attempt(ctx, sid, "task blocked")
            self._set_state(ctx, TaskState.BLOCKED, reason)

    # -- scheduling support -------------------------------------------------------------------

    def ready_steps(self) -> List[ReadyStep]:
        out: List[ReadyStep] = []
        for task_id in self.order:
            ctx = self.tasks[task_id]
            if ctx.record.state is not TaskState.EXECUTING or ctx.record.plan is None:
                continue
            for order, step in enumerate(ctx.record.plan.steps):
                st = ctx.steps[step.step_id]
                if st.done or st.in_flight:
                    continue
                if not all(ctx.steps[d].done for d in step.depends_on):
                    continue
                group = ctx.chain_group.get(step.step_id)
                affinity = ctx.group_robot.get(group) if group is not None else None
                out.append(
                    ReadyStep(
                        task_id=task_id,
                        priority=ctx.record.priority,
                        submitted_at=ctx.record.submitted_at,
                        order=order,
                        step=step,
                        anchor=self.scoring_anchor(step),
                        user_pin=step.assigned_robot,
                        affinity=affinity,
                        exclude=ctx.exclude,
                        handoff=st.handoff,
                    )
                )
        return out

    def scoring_anchor(self, step: PlanStep) -> Pose3:
        """Where the step's work happens, for location scoring."""
        target = step.invocation.target
        if target.pose is not None:
            return target.pose
        if target.anchor_name is not None:
            hit = resolve_place(self.memory, target.anchor_name)
            if hit is not None:
                return hit.pose
        if target.object_query is not None:
            hits = self.memory.find_objects(target.object_query)
            if hits:
                return hits[0].last_pose
        if target.robot_id is not None and self.fleet.has(target.robot_id):
            return self.fleet.get(target.robot_id).pose
        return Pose3(0.0, 0.0, 0.0)

    def on_dispatched(self, ctx: TaskContext, step: PlanStep, robot_id: str) -> None:
        st = ctx.steps[step.step_id]
        st.attempt += 1
        st.in_flight = True
        st.robot = robot_id
        st.handoff = None  # consumed by this dispatch
        group = ctx.chain_group.get(step.step_id)
        if group is not None and group not in ctx.group_robot:
            ctx.group_robot[group] = robot_id

    # -- results and verdicts --------------------------------------------------------------------

    def on_verdict(
        self,
        ctx: TaskContext,
        step_id: str,
        verdict: CriticVerdict,
        tick: int,
        terminal: bool,
        observation=None,
    ) -> None:
        """Apply a critic verdict for one step attempt.

        Complete marks the step done (writing any observation back into
        memory before the task's next dispatch); Refine re-issues the same
        skill with its target re-resolved; Replan cancels sibling attempts
        and regenerates the plan with memory as it now stands.
        """
        if ctx.record.state is not TaskState.EXECUTING:
            return
        st = ctx.steps[step_id]
        if verdict.decision is Decision.COMPLETE:
            if st.in_flight and not terminal:
                self._cancel_attempt(ctx, step_id, "completed by critic", success=True)
            st.in_flight = False
            st.done = True
            if observation is not None:
                self.memory.insert_observation(observation)
                # sightings of other robot bodies feed their location tracks
                for label, pose, _ in observation.labels:
                    if self.fleet.has(label):
                        self.memory.record_robot_pose(label, pose, observation.sim_time)
                st.observation = observation
            if all(s.done for s in ctx.steps.values()):
                self._plan_finished(ctx, tick)
            return
        if verdict.decision is Decision.REFINE:
            if not terminal:
                return  # mid-flight improvement: keep going
            if st.refines >= self.cfg.refine_limit:
                self._escalate_replan(ctx, step_id, tick, "refine limit reached")
                return
            st.refines += 1
            st.in_flight = False
            # target re-resolution happens at dispatch: queries and anchors
            # are resolved against the freshest memory/world state
            self._set_state(ctx, TaskState.REFINING, f"refining {step_id}")
            self._set_state(ctx, TaskState.EXECUTING, f"re-issuing {step_id}")
            return
        # REPLAN
        step = ctx.record.plan.step(step_id)
        if terminal and step.on_failure is FailurePolicy.ABORT:
            st.in_flight = False
            self._set_state(ctx, TaskState.FAILED, f"{step_id} failed, policy abort")
            return
        self._escalate_replan(ctx, step_id, tick, verdict.rationale)

    def _escalate_replan(self, ctx: TaskContext, step_id: str, tick: int, reason: str) -> None:
        if ctx.replans >= self.cfg.replan_limit:
            for sid, st in ctx.steps.items():
                if st.in_flight:
                    self._cancel_attempt(ctx, sid, "replan limit reached")
            self._set_state(ctx, TaskState.FAILED, "replan limit reached")
            return
        ctx.replans += 1
        for sid, st in ctx.steps.items():
            if st.in_flight:
                self._cancel_attempt(ctx, sid, "superseded by replan")
        self._set_state(ctx, TaskState.REPLANNING, reason)

    def _plan_finished(self, ctx: TaskContext, tick: int) -> None:
        if ctx.plan_kind == "goal":
            self._set_state(ctx, TaskState.DONE, "all steps complete", report=self._final_report(ctx))
            return
        # probe plan done: did the sweep/observation surface the target?
        target = self._resolve_object_target(ctx.intent)
        if target is not None:
            ctx.sweeping = False
            self._set_state(ctx, TaskState.REPLANNING, "target acquired")
            return
        if ctx.sweeping and ctx.sweep_yaw + self.cfg.sweep_delta_yaw > FULL_SWEEP + 1e-9:
            self._set_state(ctx, TaskState.FAILED, "target not found after full sweep")
            return
        self._set_state(ctx, TaskState.REPLANNING, "continuing search")

    def _final_report(self, ctx: TaskContext) -> Optional[dict]:
        report = dict(ctx.report) if ctx.report else {}
        # a task whose last step produced an observation reports what it saw
        for step in reversed(ctx.record.plan.steps if ctx.record.plan else []):
            st = ctx.steps.get(step.step_id)
            if st is not None and st.observation is not None:
                frame = st.observation
                report["observed"] = {
                    "frame_id": frame.frame_id,
                    "robot_id": frame.robot_id,
                    "sim_time": frame.sim_time,
                    "labels": [l for l, _, _ in frame.labels],
                    "description": frame.description,
                }
                break
        return report or None

    # -- disconnect recovery -------------------------------------------------------------------

    def steps_in_flight_on(self, robot_id: str) -> List[Tuple[TaskContext, str]]:
        hits = []
        for task_id in self.order:
            ctx = self.tasks[task_id]
            if ctx.record.state is not TaskState.EXECUTING:
                continue
            for sid, st in ctx.steps.items():
                if st.in_flight and st.robot == robot_id:
                    hits.append((ctx, sid))
        return hits

    def requeue_after_disconnect(self, ctx: TaskContext, step_id: str, dead_robot: str) -> None:
        st = ctx.steps[step_id]
        st.in_flight = False
        st.handoff = HandoffContext(
            source_robot=dead_robot, notes="reassigned after disconnect"
        )
        group = ctx.chain_group.get(step_id)
        if group is not None and ctx.group_robot.get(group) == dead_robot:
            del ctx.group_robot[group]

    def mark_step_blocked(self, ctx: TaskContext, step_id: str) -> None:
        self._block(ctx, f"no capable robot for {step_id}")

    def on_dispatch_failed(self, ctx: TaskContext, step_id: str, tick: int, reason: str) -> None:
        """Adapter refused the step (e.g. unresolvable target): replan with
        whatever memory now holds."""
        self.now = tick
        self._escalate_replan(ctx, step_id, tick, reason)

    def note_fleet_change(self) -> None:
        self.fleet_epoch += 1
