"""Capability-filtered, location/load-scored step assignment.

Capability is a hard filter, never a scored factor; priority orders the
dispatch queue rather than entering the score. Everything here is a pure
function over immutable fleet snapshots, which keeps the exhaustive-argmax
oracle in the test suite honest.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

from .config import SchedulingConfig
from .errors import ExplicitRobotUnavailable, NoCapableRobot
from .fleet import EmbodimentDescriptor, Liveness
from .model import PlanStep, Pose3, capability_satisfies, pose_distance


class AssignmentMode(str, Enum):
    AUTOMATIC = "automatic"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class Assignment:
    step_id: str
    robot_id: str
    score: float
    mode: AssignmentMode


@dataclass(frozen=True)
class HandoffContext:
    """Execution context carried when a step moves across embodiments."""

    source_robot: str
    object_id: Optional[str] = None
    object_pose: Optional[Pose3] = None
    notes: str = ""

    def to_doc(self) -> dict:
        return {
            "source_robot": self.source_robot,
            "object_id": self.object_id,
            "object_pose": self.object_pose.to_doc() if self.object_pose else None,
            "notes": self.notes,
        }


@dataclass(frozen=True)
class ReadyStep:
    """A dispatchable step with its task-level ordering and anchoring context."""

    task_id: str
    priority: int
    submitted_at: int
    order: int  # topological position within the plan
    step: PlanStep
    anchor: Pose3
    user_pin: Optional[str] = None  # user-specified robot, Explicit mode
    affinity: Optional[str] = None  # runtime chain binding, still Automatic
    exclude: frozenset = frozenset()
    handoff: Optional[HandoffContext] = None


def score_candidate(robot: EmbodimentDescriptor, task_anchor: Pose3, cfg: SchedulingConfig) -> float:
    """w_loc/(1 + d/scale) + w_load*(1 - load fraction); in [0, w_loc+w_load]."""
    d = pose_distance(robot.pose, task_anchor)
    location = 1.0 / (1.0 + d / cfg.distance_scale)
    load = 1.0 - robot.active_subtasks / robot.max_concurrent
    return cfg.w_loc * location + cfg.w_load * load


def _capable(
    snapshot: Sequence[EmbodimentDescriptor],
    step: PlanStep,
    exclude: frozenset,
) -> List[EmbodimentDescriptor]:
    return [
        r
        for r in snapshot
        if r.liveness is Liveness.CONNECTED
        and r.robot_id not in exclude
        and capability_satisfies(r.capabilities, {step.invocation.skill})
    ]


def assign(
    ready: ReadyStep,
    snapshot: Sequence[EmbodimentDescriptor],
    cfg: SchedulingConfig,
) -> Optional[Assignment]:
    """Choose a robot for one ready step.

    A user-pinned robot wins outright when it is connected, capable, and
    unsaturated; a pinned-but-unavailable robot raises rather than being
    silently overridden. Otherwise the argmax of score_candidate over the
    capability-filtered set wins, ties broken by smallest robot_id. Returns
    None when every capable robot is momentarily saturated (stay queued);
    raises NoCapableRobot when none exists at all.
    """
    step = ready.step
    pin = ready.user_pin or step.assigned_robot
    capable = _capable(snapshot, step, ready.exclude)
    if pin is not None:
        match = [r for r in capable if r.robot_id == pin]
        if not match:
            raise ExplicitRobotUnavailable(pin)
        if match[0].active_subtasks >= match[0].max_concurrent:
            return None  # pinned robot busy: wait, never override user intent
        return Assignment(
            step_id=step.step_id,
            robot_id=pin,
            score=score_candidate(match[0], ready.anchor, cfg),
            mode=AssignmentMode.EXPLICIT,
        )
    if ready.affinity is not None:
        bound = [r for r in capable if r.robot_id == ready.affinity]
        if bound:
            robot = bound[0]
            if robot.active_subtasks >= robot.max_concurrent:
                return None  # wait for the chain's robot to free up
            return Assignment(
                step_id=step.step_id,
                robot_id=robot.robot_id,
                score=score_candidate(robot, ready.anchor, cfg),
                mode=AssignmentMode.AUTOMATIC,
            )
        # fall through: the bound robot is gone, pick fresh
    if not capable:
        raise NoCapableRobot(step.invocation.skill)
    available = [r for r in capable if r.active_subtasks < r.max_concurrent]
    if not available:
        return None
    best = max(
        available,
        key=lambda r: (score_candidate(r, ready.anchor, cfg), _reverse_id(r.robot_id)),
    )
    return Assignment(
        step_id=step.step_id,
        robot_id=best.robot_id,
        score=score_candidate(best, ready.anchor, cfg),
        mode=AssignmentMode.AUTOMATIC,
    )


class _reverse_id(str):
    """Orders lexicographically descending so max() breaks score ties toward
    the smallest robot_id."""

    def __lt__(self, other):
        return str.__gt__(self, other)

    def __gt__(self, other):
        return str.__lt__(self, other)


@dataclass(frozen=True)
class DispatchOutcome:
    assignments: List[Assignment]
    blocked: List[str]  # step_ids with no capable robot at all
    deferred: List[str]  # step_ids left queued (saturation or pinned-wait)
    pin_unavailable: List[str]  # step_ids whose user-pinned robot is gone/incapable


def dispatch_ready(
    ready_steps: Sequence[ReadyStep],
    snapshot: Sequence[EmbodimentDescriptor],
    cfg: SchedulingConfig,
) -> DispatchOutcome:
    """Assign every ready step it can in one cycle.

    Order: task priority descending, submission tick ascending, task_id,
    then plan topological order. Load accounting updates within the cycle,
    so independent steps of one plan fan out across robots.
    """
    working: Dict[str, EmbodimentDescriptor] = {r.robot_id: replace(r) for r in snapshot}
    queue = sorted(
        ready_steps,
        key=lambda rs: (-rs.priority, rs.submitted_at, rs.task_id, rs.order),
    )
    assignments: List[Assignment] = []
    blocked: List[str] = []
    deferred: List[str] = []
    pin_unavailable: List[str] = []
    for rs in queue:
        view = [working[r] for r in sorted(working)]
        try:
            assignment = assign(rs, view, cfg)
        except NoCapableRobot:
            blocked.append(rs.step.step_id)
            continue
        except ExplicitRobotUnavailable:
            pin_unavailable.append(rs.step.step_id)
            continue
        if assignment is None:
            deferred.append(rs.step.step_id)
            continue
        working[assignment.robot_id].active_subtasks += 1
        assignments.append(assignment)
    return DispatchOutcome(assignments, blocked, deferred, pin_unavailable)


def reassign_on_disconnect(
    in_flight: Sequence[ReadyStep],
    snapshot: Sequence[EmbodimentDescriptor],
    cfg: SchedulingConfig,
    dead_robot: str,
) -> List[Tuple[ReadyStep, Optional[Assignment]]]:
    """Re-run assignment for a dead robot's steps, excluding it.

    Each step keeps its HandoffContext; a None assignment marks the step
    Blocked (no capable robot remains).
    """
    results: List[Tuple[ReadyStep, Optional[Assignment]]] = []
    for rs in in_flight:
        widened = replace(
            rs,
            exclude=rs.exclude | {dead_robot},
            affinity=None,
            handoff=rs.handoff
            or HandoffContext(source_robot=dead_robot, notes="reassigned after disconnect"),
        )
        try:
            assignment = assign(widened, snapshot, cfg)
        except NoCapableRobot:
            assignment = None
        results.append((widened, assignment))
    return results
