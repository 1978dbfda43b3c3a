"""Shared domain vocabulary: poses, capabilities, skill invocations, plans, tasks, events.

Every type here is a plain value object with a canonical JSON document form
(`to_doc` / `from_doc`, snake_case keys). The document form is what travels
on the wire and into the event log, so it is the only serialization that
exists.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Optional

TWO_PI = 2.0 * math.pi

# Skill vocabulary the built-in simulator can execute. Robots may register
# additional capability tags (the scheduler treats tags as opaque), but a
# SkillInvocation must name one of these.
CAPABILITIES = frozenset(
    {
        "navigate",
        "grasp",
        "place",
        "handover",
        "observe",
        "guide_person",
        "inspect",
        "adjust_viewpoint",
    }
)

_CAPABILITY_RE = re.compile(r"^[a-z][a-z0-9_]*$")


def canonical_json(doc: Any) -> str:
    """Canonical single-line JSON: sorted keys, no whitespace."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    y = math.fmod(yaw, TWO_PI)
    if y <= -math.pi:
        y += TWO_PI
    elif y > math.pi:
        y -= TWO_PI
    return y


def validate_capability(name: str, *, invocable_only: bool = False) -> str:
    if not isinstance(name, str) or not _CAPABILITY_RE.match(name):
        raise ValueError(f"invalid capability tag: {name!r}")
    if invocable_only and name not in CAPABILITIES:
        raise ValueError(f"not an invocable skill: {name!r}")
    return name


@dataclass(frozen=True)
class Pose3:
    """Position in the global world frame (meters) plus planar heading (radians).

    yaw is normalized into (-pi, pi] on construction; all components must be
    finite.
    """

    x: float
    y: float
    z: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "z", "yaw"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValueError(f"Pose3.{name} must be finite, got {v!r}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "z", float(self.z))
        object.__setattr__(self, "yaw", normalize_yaw(float(self.yaw)))

    def to_doc(self) -> dict:
        return {"x": self.x, "y": self.y, "z": self.z, "yaw": self.yaw}

    @classmethod
    def from_doc(cls, doc: Mapping) -> "Pose3":
        return cls(doc["x"], doc["y"], doc.get("z", 0.0), doc.get("yaw", 0.0))


def pose_distance(a: Pose3, b: Pose3) -> float:
    """Euclidean distance over (x, y, z); yaw is ignored."""
    return math.dist((a.x, a.y, a.z), (b.x, b.y, b.z))


def capability_satisfies(robot_caps: Iterable[str], required: Iterable[str]) -> bool:
    """True iff every required capability is present."""
    return set(required) <= set(robot_caps)


_TARGET_FIELDS = ("pose", "anchor_name", "object_query", "robot_id")


@dataclass(frozen=True)
class Target:
    """Exactly one of: a concrete pose, a named place anchor, an object
    description to resolve, or a peer robot id."""

    pose: Optional[Pose3] = None
    anchor_name: Optional[str] = None
    object_query: Optional[str] = None
    robot_id: Optional[str] = None

    def __post_init__(self):
        populated = [f for f in _TARGET_FIELDS if getattr(self, f) is not None]
        if len(populated) != 1:
            raise ValueError(f"exactly one target variant required, got {populated}")

    @property
    def kind(self) -> str:
        for f in _TARGET_FIELDS:
            if getattr(self, f) is not None:
                return f
        raise AssertionError("unreachable: empty target")

    def to_doc(self) -> dict:
        if self.pose is not None:
            return {"pose": self.pose.to_doc()}
        return {self.kind: getattr(self, self.kind)}

    @classmethod
    def from_doc(cls, doc: Mapping) -> "Target":
        if "pose" in doc and doc["pose"] is not None:
            return cls(pose=Pose3.from_doc(doc["pose"]))
        for f in _TARGET_FIELDS[1:]:
            if doc.get(f) is not None:
                return cls(**{f: doc[f]})
        raise ValueError(f"no target variant in {doc!r}")


@dataclass(frozen=True)
class SkillInvocation:
    """One intent-level action: a skill, its target, and scalar parameters."""

    skill: str
    target: Target
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        validate_capability(self.skill, invocable_only=True)
        object.__setattr__(self, "params", dict(self.params))
        for k, v in self.params.items():
            if not isinstance(v, (str, int, float, bool)):
                raise ValueError(f"param {k!r} must be scalar or text, got {type(v)}")

    def to_doc(self) -> dict:
        return {"skill": self.skill, "target": self.target.to_doc(), "params": dict(self.params)}

    @classmethod
    def from_doc(cls, doc: Mapping) -> "SkillInvocation":
        return cls(doc["skill"], Target.from_doc(doc["target"]), doc.get("params", {}))


class FailurePolicy(str, Enum):
    REPLAN = "replan"
    ABORT = "abort"
    CLARIFY = "clarify"


@dataclass
class PlanStep:
    step_id: str
    invocation: SkillInvocation
    assigned_robot: Optional[str] = None
    depends_on: frozenset = frozenset()
    on_failure: FailurePolicy = FailurePolicy.REPLAN

    def __post_init__(self):
        self.depends_on = frozenset(self.depends_on)

    def to_doc(self) -> dict:
        return {
            "step_id": self.step_id,
            "invocation": self.invocation.to_doc(),
            "assigned_robot": self.assigned_robot,
            "depends_on": sorted(self.depends_on),
            "on_failure": self.on_failure.value,
        }

    @classmethod
    def from_doc(cls, doc: Mapping) -> "PlanStep":
        return cls(
            doc["step_id"],
            SkillInvocation.from_doc(doc["invocation"]),
            doc.get("assigned_robot"),
            frozenset(doc.get("depends_on", ())),
            FailurePolicy(doc.get("on_failure", "replan")),
        )


@dataclass
class PlanProgram:
    """Portable plan IR: an ordered set of steps with an acyclic dependency graph."""

    plan_id: str
    steps: list

    def __post_init__(self):
        ids = [s.step_id for s in self.steps]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate step_id in plan")
        known = set(ids)
        for s in self.steps:
            missing = s.depends_on - known
            if missing:
                raise ValueError(f"step {s.step_id} depends on unknown steps {sorted(missing)}")
        self._check_acyclic()

    def _check_acyclic(self):
        indeg = {s.step_id: len(s.depends_on) for s in self.steps}
        dependents: dict = {s.step_id: [] for s in self.steps}
        for s in self.steps:
            for d in s.depends_on:
                dependents[d].append(s.step_id)
        queue = [sid for sid, n in indeg.items() if n == 0]
        seen = 0
        while queue:
            sid = queue.pop()
            seen += 1
            for nxt in dependents[sid]:
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    queue.append(nxt)
        if seen != len(self.steps):
            raise ValueError("plan dependency graph has a cycle")

    def step(self, step_id: str) -> PlanStep:
        for s in self.steps:
            if s.step_id == step_id:
                return s
        raise KeyError(step_id)

    def to_doc(self) -> dict:
        return {"plan_id": self.plan_id, "steps": [s.to_doc() for s in self.steps]}

    @classmethod
    def from_doc(cls, doc: Mapping) -> "PlanProgram":
        return cls(doc["plan_id"], [PlanStep.from_doc(d) for d in doc["steps"]])


class TaskState(str, Enum):
    PENDING = "pending"
    PLANNING = "planning"
    AWAITING_CLARIFICATION = "awaiting_clarification"
    EXECUTING = "executing"
    REFINING = "refining"
    REPLANNING = "replanning"
    DONE = "done"
    FAILED = "failed"
    BLOCKED = "blocked"


TERMINAL_STATES = frozenset({TaskState.DONE, TaskState.FAILED})


@dataclass
class TaskRecord:
    task_id: str
    instruction: str
    priority: int = 0
    submitted_at: int = 0
    state: TaskState = TaskState.PENDING
    plan: Optional[PlanProgram] = None
    explicit_robot: Optional[str] = None
    tau_override: Optional[float] = None

    def __post_init__(self):
        if self.priority < 0:
            raise ValueError("priority must be >= 0")

    def to_doc(self) -> dict:
        return {
            "task_id": self.task_id,
            "instruction": self.instruction,
            "priority": self.priority,
            "submitted_at": self.submitted_at,
            "state": self.state.value,
            "plan": self.plan.to_doc() if self.plan else None,
            "explicit_robot": self.explicit_robot,
            "tau_override": self.tau_override,
        }


class EventKind(str, Enum):
    TASK_SUBMITTED = "task_submitted"
    PLAN_ISSUED = "plan_issued"
    STEP_DISPATCHED = "step_dispatched"
    STEP_RESULT = "step_result"
    CRITIC_SCORED = "critic_scored"
    CLARIFICATION_ASKED = "clarification_asked"
    CLARIFICATION_ANSWERED = "clarification_answered"
    ROBOT_REGISTERED = "robot_registered"
    ROBOT_DISCONNECTED = "robot_disconnected"
    MEMORY_INSERTED = "memory_inserted"
    TASK_STATE_CHANGED = "task_state_changed"


@dataclass(frozen=True)
class Event:
    """One append-only log record. seq is gapless per run; sim_time is ticks."""

    seq: int
    sim_time: int
    kind: EventKind
    payload: Mapping[str, Any]

    def to_doc(self) -> dict:
        return {
            "seq": self.seq,
            "sim_time": self.sim_time,
            "kind": self.kind.value,
            "payload": dict(self.payload),
        }

    @classmethod
    def from_doc(cls, doc: Mapping) -> "Event":
        return cls(doc["seq"], doc["sim_time"], EventKind(doc["kind"]), dict(doc["payload"]))

    def canonical(self) -> str:
        return canonical_json(self.to_doc())
