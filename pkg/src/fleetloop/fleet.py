"""Dynamic pool of connected embodiments.

Registration, capability descriptions, heartbeat liveness, and dispatch
accounting all flow through one registry; snapshots are immutable copies
safe to hand to the scheduler. Actual skill execution is delegated to a
pluggable adapter (the simulator provides the built-in one).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Protocol

from .errors import (
    CapabilityMissing,
    DuplicateRobotId,
    RobotDisconnected,
    RobotSaturated,
    UnknownRobot,
)
from .model import (
    EventKind,
    PlanStep,
    Pose3,
    capability_satisfies,
    validate_capability,
)


class Morphology(str, Enum):
    ARM = "arm"
    QUADRUPED = "quadruped"
    HUMANOID = "humanoid"
    MOBILE = "mobile"


class Liveness(str, Enum):
    CONNECTED = "connected"
    DISCONNECTED = "disconnected"


@dataclass
class EmbodimentDescriptor:
    robot_id: str
    morphology: Morphology
    capabilities: frozenset
    pose: Pose3
    active_subtasks: int = 0
    max_concurrent: int = 1
    last_heartbeat: int = 0
    liveness: Liveness = Liveness.CONNECTED

    def __post_init__(self):
        self.capabilities = frozenset(validate_capability(c) for c in self.capabilities)
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        if not (0 <= self.active_subtasks <= self.max_concurrent):
            raise ValueError("active_subtasks must be in [0, max_concurrent]")

    def to_doc(self) -> dict:
        return {
            "robot_id": self.robot_id,
            "morphology": self.morphology.value,
            "capabilities": sorted(self.capabilities),
            "pose": self.pose.to_doc(),
            "active_subtasks": self.active_subtasks,
            "max_concurrent": self.max_concurrent,
            "last_heartbeat": self.last_heartbeat,
            "liveness": self.liveness.value,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "EmbodimentDescriptor":
        return cls(
            robot_id=doc["robot_id"],
            morphology=Morphology(doc["morphology"]),
            capabilities=frozenset(doc["capabilities"]),
            pose=Pose3.from_doc(doc["pose"]),
            active_subtasks=doc.get("active_subtasks", 0),
            max_concurrent=doc.get("max_concurrent", 1),
            last_heartbeat=doc.get("last_heartbeat", 0),
            liveness=Liveness(doc.get("liveness", "connected")),
        )


class Outcome(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    IN_PROGRESS = "in_progress"


@dataclass(frozen=True)
class SkillResult:
    """Terminal (or progress) report for one step attempt on one robot."""

    step_id: str
    robot_id: str
    outcome: Outcome
    reason: str = ""
    observation: Optional[object] = None  # ObservationFrame when the skill produced one
    resulting_pose: Optional[Pose3] = None

    @property
    def terminal(self) -> bool:
        return self.outcome in (Outcome.SUCCESS, Outcome.FAILURE)


class SkillAdapter(Protocol):
    """Boundary to robot-side execution. The simulator implements this."""

    def start(self, robot_id: str, task_id: str, step: PlanStep, attempt: int) -> None: ...

    def cancel(self, robot_id: str, step_id: str, attempt: int) -> None: ...


class FleetRegistry:
    """Logically-serialized registry of embodiments.

    All mutations run on the runtime's single command stream; `snapshot()`
    returns deep copies so concurrent readers never observe partial state.
    """

    def __init__(self, emit: Callable[[EventKind, dict], None], adapter: Optional[SkillAdapter] = None):
        self._robots: Dict[str, EmbodimentDescriptor] = {}
        self._emit = emit
        self.adapter = adapter

    # -- registration and liveness ------------------------------------------------

    def register(self, descriptor: EmbodimentDescriptor, tick: int = 0) -> None:
        existing = self._robots.get(descriptor.robot_id)
        if existing is not None and existing.liveness is Liveness.CONNECTED:
            raise DuplicateRobotId(descriptor.robot_id)
        # re-registration after a disconnect resumes the same identity
        desc = replace(descriptor, last_heartbeat=tick, liveness=Liveness.CONNECTED)
        self._robots[desc.robot_id] = desc
        self._emit(EventKind.ROBOT_REGISTERED, desc.to_doc())

    def heartbeat(self, robot_id: str, tick: int) -> None:
        robot = self._require(robot_id)
        # monotonic max: late-arriving beats never roll the clock back
        robot.last_heartbeat = max(robot.last_heartbeat, tick)

    def liveness_sweep(self, now: int, timeout: int) -> List[str]:
        """Transition every over-quiet Connected robot to Disconnected.

        Returns exactly the ids transitioned by this sweep, so a second
        sweep at the same tick returns nothing.
        """
        if timeout < 1:
            raise ValueError("timeout must be >= 1")
        newly_dead: List[str] = []
        for robot_id in sorted(self._robots):
            robot = self._robots[robot_id]
            if robot.liveness is Liveness.CONNECTED and now - robot.last_heartbeat > timeout:
                robot.liveness = Liveness.DISCONNECTED
                newly_dead.append(robot_id)
                self._emit(
                    EventKind.ROBOT_DISCONNECTED,
                    {"robot_id": robot_id, "last_heartbeat": robot.last_heartbeat},
                )
        return newly_dead

    def update_pose(self, robot_id: str, pose: Pose3) -> None:
        self._require(robot_id).pose = pose

    # -- dispatch accounting --------------------------------------------------------

    def invoke_skill(self, robot_id: str, task_id: str, step: PlanStep, attempt: int) -> None:
        """Validate and hand the step to the adapter; caller emits StepDispatched."""
        robot = self._require(robot_id)
        if robot.liveness is not Liveness.CONNECTED:
            raise RobotDisconnected(robot_id)
        if not capability_satisfies(robot.capabilities, {step.invocation.skill}):
            raise CapabilityMissing(f"{robot_id} lacks {step.invocation.skill}")
        if robot.active_subtasks >= robot.max_concurrent:
            raise RobotSaturated(robot_id)
        if self.adapter is not None:
            self.adapter.start(robot_id, task_id, step, attempt)
        robot.active_subtasks += 1

    def release(self, robot_id: str) -> None:
        """One attempt on this robot reached a terminal result."""
        robot = self._robots.get(robot_id)
        if robot is not None and robot.active_subtasks > 0:
            robot.active_subtasks -= 1

    # -- views ----------------------------------------------------------------------

    def snapshot(self) -> List[EmbodimentDescriptor]:
        """Immutable view: replace() copies, ordered by robot_id."""
        return [replace(self._robots[r]) for r in sorted(self._robots)]

    def get(self, robot_id: str) -> EmbodimentDescriptor:
        return replace(self._require(robot_id))

    def has(self, robot_id: str) -> bool:
        return robot_id in self._robots

    def is_connected(self, robot_id: str) -> bool:
        robot = self._robots.get(robot_id)
        return robot is not None and robot.liveness is Liveness.CONNECTED

    def _require(self, robot_id: str) -> EmbodimentDescriptor:
        robot = self._robots.get(robot_id)
        if robot is None:
            raise UnknownRobot(robot_id)
        return robot
