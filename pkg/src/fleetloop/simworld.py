"""Deterministic discrete-event world: planar-with-height geometry, labeled
objects, limited-FOV perception, scripted faults.

All motion and skill resolution happens inside `step_one` on a single
logical clock, so two runs with the same seed, scenario, and command
sequence produce identical behavior tick for tick. Perception is noiseless
unless a per-label dropout probability is configured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .config import SimConfig
from .critic import StepProbe
from .errors import TargetUnresolvable, UnknownRobot
from .fleet import Outcome, SkillResult
from .memory import ObservationFrame
from .model import PlanStep, Pose3, SkillInvocation, normalize_yaw, pose_distance

ARRIVAL_EPS = 1e-9

FAULT_DISCONNECT = "disconnect_robot"
FAULT_FAIL_GRASP = "fail_next_grasp"
FAULT_MOVE_OBJECT = "move_object"


@dataclass(frozen=True)
class Fault:
    at_tick: int
    kind: str
    robot_id: Optional[str] = None
    object_id: Optional[str] = None
    new_pose: Optional[Pose3] = None

    @classmethod
    def from_doc(cls, doc: dict) -> "Fault":
        return cls(
            at_tick=doc["at_tick"],
            kind=doc["fault"],
            robot_id=doc.get("robot_id"),
            object_id=doc.get("object_id"),
            new_pose=Pose3.from_doc(doc["new_pose"]) if doc.get("new_pose") else None,
        )


@dataclass
class WorldObject:
    object_id: str
    label: str
    pose: Pose3
    held_by: Optional[str] = None
    received_by: Optional[str] = None


@dataclass
class WorldPerson:
    person_id: str
    label: str
    pose: Pose3
    present: bool = True
    following: Optional[str] = None


@dataclass
class WorldRobot:
    robot_id: str
    pose: Pose3
    fov_half_angle: float = 0.6
    view_range: float = 4.0
    gripper: Optional[str] = None
    comms_up: bool = True


@dataclass
class Execution:
    robot_id: str
    task_id: str
    step_id: str
    attempt: int
    invocation: SkillInvocation
    start_tick: int
    resolve_at: Optional[int] = None  # latency skills only
    motion_target: Optional[Pose3] = None
    start_distance: float = 0.0
    target_object: Optional[str] = None
    target_person: Optional[str] = None
    peer_robot: Optional[str] = None
    effect_applied: bool = False

    @property
    def key(self) -> Tuple[str, str, int]:
        return (self.robot_id, self.step_id, self.attempt)


@dataclass
class Resolution:
    """One finished attempt plus the ground-truth probe at resolution time."""

    task_id: str
    attempt: int
    result: SkillResult
    probe: StepProbe


@dataclass
class TickOutput:
    tick: int
    heartbeats: List[Tuple[str, Pose3]] = field(default_factory=list)
    resolutions: List[Resolution] = field(default_factory=list)


class World:
    """The only built-in skill adapter; the single source of truth for poses."""

    def __init__(
        self,
        cfg: SimConfig,
        seed: int = 0,
        heartbeat_interval: int = 5,
    ):
        self.cfg = cfg
        self.tick = 0
        self.heartbeat_interval = heartbeat_interval
        self.objects: Dict[str, WorldObject] = {}
        self.persons: Dict[str, WorldPerson] = {}
        self.robots: Dict[str, WorldRobot] = {}
        self.anchors: Dict[str, Pose3] = {}
        self.rng = np.random.default_rng(seed)
        self._faults: List[Fault] = []
        self._armed_grasp_failures: Dict[str, int] = {}
        self._executions: Dict[Tuple[str, str, int], Execution] = {}
        self._frame_counter = 0

    # -- construction ------------------------------------------------------------

    def add_object(self, object_id: str, label: str, pose: Pose3) -> None:
        self.objects[object_id] = WorldObject(object_id, label, pose)

    def add_person(self, person_id: str, label: str, pose: Pose3, present: bool = True) -> None:
        self.persons[person_id] = WorldPerson(person_id, label, pose, present)

    def add_robot(
        self, robot_id: str, pose: Pose3, fov_half_angle: float = 0.6, view_range: float = 4.0
    ) -> None:
        self.robots[robot_id] = WorldRobot(robot_id, pose, fov_half_angle, view_range)

    def add_anchor(self, name: str, pose: Pose3) -> None:
        self.anchors[name.lower()] = pose

    def load_faults(self, faults: List[Fault]) -> None:
        ticks = [f.at_tick for f in faults]
        if ticks != sorted(ticks):
            raise ValueError("fault script ticks must be non-decreasing")
        self._faults = list(faults)

    # -- adapter interface ----------------------------------------------------------

    def start(self, robot_id: str, task_id: str, step: PlanStep, attempt: int) -> None:
        self.apply_skill(robot_id, task_id, step.step_id, attempt, step.invocation)

    def cancel(self, robot_id: str, step_id: str, attempt: int) -> None:
        execution = self._executions.pop((robot_id, step_id, attempt), None)
        if execution is not None and execution.invocation.skill == "guide_person":
            self._stop_following(robot_id)

    # -- skills ------------------------------------------------------------------------

    def apply_skill(
        self, robot_id: str, task_id: str, step_id: str, attempt: int, invocation: SkillInvocation
    ) -> None:
        robot = self._robot(robot_id)
        skill = invocation.skill
        execution = Execution(
            robot_id=robot_id,
            task_id=task_id,
            step_id=step_id,
            attempt=attempt,
            invocation=invocation,
            start_tick=self.tick,
        )
        if skill == "navigate":
            execution.motion_target = self._resolve_pose(invocation.target, robot)
            execution.start_distance = pose_distance(robot.pose, execution.motion_target)
        elif skill == "guide_person":
            execution.motion_target = self._resolve_pose(invocation.target, robot)
            person = self._nearest_person(robot, self.cfg.person_follow_range)
            if person is None:
                raise TargetUnresolvable("no person within guiding range")
            person.following = robot_id
            execution.target_person = person.person_id
            execution.start_distance = pose_distance(person.pose, execution.motion_target)
        elif skill == "grasp":
            obj = self._resolve_object(invocation.target, near=robot.pose)
            execution.target_object = obj.object_id
            execution.resolve_at = self.tick + self.cfg.arm_latency
        elif skill == "place":
            execution.motion_target = self._resolve_pose(invocation.target, robot)
            execution.resolve_at = self.tick + self.cfg.arm_latency
        elif skill == "handover":
            if invocation.target.robot_id is not None:
                if invocation.target.robot_id not in self.robots:
                    raise TargetUnresolvable(f"unknown robot {invocation.target.robot_id!r}")
                execution.peer_robot = invocation.target.robot_id
            else:
                person = self._resolve_person(invocation.target, near=robot.pose)
                execution.target_person = person.person_id
            execution.resolve_at = self.tick + self.cfg.arm_latency
        elif skill == "adjust_viewpoint":
            execution.resolve_at = self.tick + self.cfg.arm_latency
        elif skill in ("observe", "inspect"):
            execution.resolve_at = self.tick + self.cfg.observe_latency
        else:
            raise TargetUnresolvable(f"simulator cannot execute skill {skill!r}")
        self._executions[execution.key] = execution

    # -- per-tick advance -------------------------------------------------------------

    def step(self, dt: int) -> List[TickOutput]:
        """Advance dt ticks, one at a time (faults and heartbeats are per-tick)."""
        if dt < 1:
            raise ValueError("dt must be >= 1")
        return [self.step_one() for _ in range(dt)]

    def step_one(self) -> TickOutput:
        self.tick += 1
        out = TickOutput(tick=self.tick)
        self._apply_due_faults()
        self._advance_motion()
        self._resolve_executions(out)
        if self.tick % self.heartbeat_interval == 0:
            for robot_id in sorted(self.robots):
                robot = self.robots[robot_id]
                if robot.comms_up:
                    out.heartbeats.append((robot_id, robot.pose))
        return out

    def _apply_due_faults(self) -> None:
        due = [f for f in self._faults if f.at_tick <= self.tick]
        self._faults = [f for f in self._faults if f.at_tick > self.tick]
        for fault in due:
            if fault.kind == FAULT_DISCONNECT:
                robot = self.robots.get(fault.robot_id)
                if robot is not None:
                    robot.comms_up = False
                    # the platform is dead: its in-flight skills never report
                    for key in [k for k in self._executions if k[0] == fault.robot_id]:
                        self._executions.pop(key)
                    self._stop_following(fault.robot_id)
            elif fault.kind == FAULT_FAIL_GRASP:
                self._armed_grasp_failures[fault.robot_id] = (
                    self._armed_grasp_failures.get(fault.robot_id, 0) + 1
                )
            elif fault.kind == FAULT_MOVE_OBJECT:
                obj = self.objects.get(fault.object_id)
                if obj is not None and obj.held_by is None:
                    obj.pose = fault.new_pose
            else:
                raise ValueError(f"unknown fault kind {fault.kind!r}")

    def _advance_motion(self) -> None:
        for key in sorted(self._executions):
            execution = self._executions[key]
            if execution.motion_target is None or execution.invocation.skill not in (
                "navigate",
                "guide_person",
            ):
                continue
            robot = self.robots[execution.robot_id]
            self._move_toward(robot, execution.motion_target)
        # guided persons trail their robot, stopping short of collision
        for person_id in sorted(self.persons):
            person = self.persons[person_id]
            if not person.following or not person.present:
                continue
            robot = self.robots.get(person.following)
            if robot is None:
                continue
            gap = pose_distance(person.pose, robot.pose)
            if gap > self.cfg.person_follow_range:
                continue  # lost contact: the person stops
            travel = min(self.cfg.robot_speed, max(gap - self.cfg.person_stop_gap, 0.0))
            if travel > 0.0:
                person.pose = _step_pose(person.pose, robot.pose, travel)

    def _move_toward(self, robot: WorldRobot, target: Pose3) -> None:
        d = pose_distance(robot.pose, target)
        if d <= ARRIVAL_EPS:
            return
        travel = min(self.cfg.robot_speed, d)
        if travel >= d - ARRIVAL_EPS:
            new_pose = Pose3(target.x, target.y, target.z, _heading(robot.pose, target))
        else:
            new_pose = _step_pose(robot.pose, target, travel, yaw=_heading(robot.pose, target))
        robot.pose = new_pose
        if robot.gripper is not None:
            self.objects[robot.gripper].pose = robot.pose

    def _resolve_executions(self, out: TickOutput) -> None:
        for key in sorted(self._executions):
            execution = self._executions.get(key)
            if execution is None:
                continue
            skill = execution.invocation.skill
            resolution: Optional[Resolution] = None
            if skill == "navigate":
                robot = self.robots[execution.robot_id]
                if pose_distance(robot.pose, execution.motion_target) <= ARRIVAL_EPS:
                    execution.effect_applied = True
                    resolution = self._finish(
                        execution, Outcome.SUCCESS, resulting_pose=robot.pose
                    )
            elif skill == "guide_person":
                robot = self.robots[execution.robot_id]
                person = self.persons[execution.target_person]
                arrived = pose_distance(robot.pose, execution.motion_target) <= ARRIVAL_EPS
                if arrived and (
                    pose_distance(person.pose, execution.motion_target)
                    <= self.cfg.person_follow_range
                ):
                    execution.effect_applied = True
                    person.following = None
                    resolution = self._finish(
                        execution, Outcome.SUCCESS, resulting_pose=robot.pose
                    )
            elif execution.resolve_at is not None and self.tick >= execution.resolve_at:
                resolution = self._resolve_latency_skill(execution)
            if resolution is not None:
                self._executions.pop(key, None)
                out.resolutions.append(resolution)

    def _resolve_latency_skill(self, execution: Execution) -> Resolution:
        skill = execution.invocation.skill
        robot = self.robots[execution.robot_id]
        if skill == "grasp":
            obj = self.objects[execution.target_object]
            armed = self._armed_grasp_failures.get(execution.robot_id, 0)
            if armed > 0:
                self._armed_grasp_failures[execution.robot_id] = armed - 1
                return self._finish(execution, Outcome.FAILURE, reason="grasp slipped")
            if obj.held_by is not None and obj.held_by != execution.robot_id:
                return self._finish(execution, Outcome.FAILURE, reason="object held elsewhere")
            if pose_distance(robot.pose, obj.pose) > self.cfg.grasp_range:
                return self._finish(execution, Outcome.FAILURE, reason="target out of reach")
            if robot.gripper is not None:
                return self._finish(execution, Outcome.FAILURE, reason="gripper occupied")
            obj.held_by = execution.robot_id
            obj.received_by = None
            obj.pose = robot.pose
            robot.gripper = obj.object_id
            execution.effect_applied = True
            return self._finish(execution, Outcome.SUCCESS, resulting_pose=robot.pose)
        if skill == "place":
            if robot.gripper is None:
                return self._finish(execution, Outcome.FAILURE, reason="nothing held")
            obj = self.objects[robot.gripper]
            obj.held_by = None
            obj.pose = execution.motion_target
            robot.gripper = None
            execution.effect_applied = True
            return self._finish(execution, Outcome.SUCCESS, resulting_pose=robot.pose)
        if skill == "handover":
            if robot.gripper is None:
                return self._finish(execution, Outcome.FAILURE, reason="nothing held")
            obj = self.objects[robot.gripper]
            if execution.peer_robot is not None:
                peer = self.robots[execution.peer_robot]
                if pose_distance(robot.pose, peer.pose) > self.cfg.handover_range:
                    return self._finish(execution, Outcome.FAILURE, reason="recipient out of reach")
                if peer.gripper is not None:
                    return self._finish(execution, Outcome.FAILURE, reason="recipient gripper occupied")
                obj.held_by = peer.robot_id
                obj.pose = peer.pose
                peer.gripper = obj.object_id
            else:
                person = self.persons[execution.target_person]
                if not person.present or (
                    pose_distance(robot.pose, person.pose) > self.cfg.handover_range
                ):
                    return self._finish(execution, Outcome.FAILURE, reason="recipient out of reach")
                obj.held_by = None
                obj.received_by = person.person_id
                obj.pose = person.pose
            robot.gripper = None
            execution.effect_applied = True
            return self._finish(execution, Outcome.SUCCESS, resulting_pose=robot.pose)
        if skill == "adjust_viewpoint":
            delta = float(execution.invocation.params.get("delta_yaw", 0.0))
            robot.pose = Pose3(
                robot.pose.x, robot.pose.y, robot.pose.z, normalize_yaw(robot.pose.yaw + delta)
            )
            execution.effect_applied = True
            return self._finish(execution, Outcome.SUCCESS, resulting_pose=robot.pose)
        if skill in ("observe", "inspect"):
            frame = self.observe(execution.robot_id)
            if skill == "inspect":
                query = execution.invocation.target.object_query or ""
                subject_seen = any(
                    query.lower() in label.lower() for label, _, _ in frame.labels
                )
                if not subject_seen:
                    execution.effect_applied = False
                    return self._finish(
                        execution,
                        Outcome.FAILURE,
                        reason="subject not in view",
                        observation=frame,
                    )
            execution.effect_applied = True
            return self._finish(
                execution, Outcome.SUCCESS, observation=frame, resulting_pose=robot.pose
            )
        raise AssertionError(f"unhandled latency skill {skill!r}")

    def _finish(
        self,
        execution: Execution,
        outcome: Outcome,
        reason: str = "",
        observation: Optional[ObservationFrame] = None,
        resulting_pose: Optional[Pose3] = None,
    ) -> Resolution:
        result = SkillResult(
            step_id=execution.step_id,
            robot_id=execution.robot_id,
            outcome=outcome,
            reason=reason,
            observation=observation,
            resulting_pose=resulting_pose,
        )
        return Resolution(
            task_id=execution.task_id,
            attempt=execution.attempt,
            result=result,
            probe=self.probe(execution),
        )

    # -- perception ---------------------------------------------------------------------

    def observe(self, robot_id: str) -> ObservationFrame:
        """Side-effect-free capture of everything inside the view cone.

        Labels cover objects, present persons, and other robot bodies;
        description concatenates the visible labels. Noiseless unless
        label_dropout is configured.
        """
        robot = self._robot(robot_id)
        labels: List[Tuple[str, Pose3, float]] = []
        for object_id in sorted(self.objects):
            obj = self.objects[object_id]
            if self._visible(robot, obj.pose):
                labels.append((obj.label, obj.pose, 1.0))
        for person_id in sorted(self.persons):
            person = self.persons[person_id]
            if person.present and self._visible(robot, person.pose):
                labels.append((person.label, person.pose, 1.0))
        for other_id in sorted(self.robots):
            if other_id == robot_id:
                continue
            other = self.robots[other_id]
            if self._visible(robot, other.pose):
                labels.append((other_id, other.pose, 1.0))
        if self.cfg.label_dropout > 0.0:
            labels = [l for l in labels if self.rng.random() >= self.cfg.label_dropout]
        self._frame_counter += 1
        description = ", ".join(l for l, _, _ in labels) if labels else "nothing visible"
        return ObservationFrame(
            frame_id=f"frame-{self._frame_counter:06d}",
            robot_id=robot_id,
            sim_time=self.tick,
            camera_pose=robot.pose,
            labels=tuple(labels),
            description=description,
        )

    def _visible(self, robot: WorldRobot, pose: Pose3) -> bool:
        d = pose_distance(robot.pose, pose)
        if d > robot.view_range:
            return False
        bearing = math.atan2(pose.y - robot.pose.y, pose.x - robot.pose.x)
        return abs(normalize_yaw(bearing - robot.pose.yaw)) <= robot.fov_half_angle

    # -- probes for the critic ----------------------------------------------------------

    def probe(self, execution: Execution) -> StepProbe:
        robot = self.robots[execution.robot_id]
        skill = execution.invocation.skill
        if skill == "navigate":
            return StepProbe(
                skill=skill,
                start_distance=execution.start_distance,
                current_distance=pose_distance(robot.pose, execution.motion_target),
                effect_applied=execution.effect_applied,
            )
        if skill == "guide_person":
            person = self.persons[execution.target_person]
            return StepProbe(
                skill=skill,
                start_distance=execution.start_distance,
                current_distance=pose_distance(person.pose, execution.motion_target),
                effect_applied=execution.effect_applied,
            )
        if skill == "grasp":
            obj = self.objects[execution.target_object]
            return StepProbe(
                skill=skill,
                gripper_distance=pose_distance(robot.pose, obj.pose),
                object_held=obj.held_by == execution.robot_id,
            )
        if skill == "handover":
            received = False
            if execution.peer_robot is not None:
                peer = self.robots[execution.peer_robot]
                received = peer.gripper is not None and execution.effect_applied
            elif execution.target_person is not None:
                received = any(
                    o.received_by == execution.target_person for o in self.objects.values()
                )
            return StepProbe(
                skill=skill,
                recipient_has_object=received,
                holding_anything=robot.gripper is not None,
            )
        if skill == "place":
            return StepProbe(
                skill=skill,
                holding_anything=robot.gripper is not None,
                effect_applied=execution.effect_applied,
            )
        return StepProbe(skill=skill, effect_applied=execution.effect_applied)

    def probe_for(self, robot_id: str, step_id: str, attempt: int) -> Optional[StepProbe]:
        execution = self._executions.get((robot_id, step_id, attempt))
        return self.probe(execution) if execution is not None else None

    def has_execution(self, robot_id: str, step_id: str, attempt: int) -> bool:
        return (robot_id, step_id, attempt) in self._executions

    def comms_available(self, robot_id: str) -> bool:
        robot = self.robots.get(robot_id)
        return robot is not None and robot.comms_up

    # -- resolution helpers ----------------------------------------------------------------

    def _robot(self, robot_id: str) -> WorldRobot:
        robot = self.robots.get(robot_id)
        if robot is None:
            raise UnknownRobot(robot_id)
        return robot

    def _resolve_pose(self, target, robot: WorldRobot) -> Pose3:
        if target.pose is not None:
            return target.pose
        if target.anchor_name is not None:
            pose = self.anchors.get(target.anchor_name.lower())
            if pose is None:
                raise TargetUnresolvable(f"unknown anchor {target.anchor_name!r}")
            return pose
        if target.object_query is not None:
            return self._resolve_object(target, near=robot.pose).pose
        if target.robot_id is not None:
            return self._robot(target.robot_id).pose
        raise TargetUnresolvable("empty target")

    def _resolve_object(self, target, near: Pose3) -> WorldObject:
        if target.object_query is None:
            if target.pose is not None:
                candidates = list(self.objects.values())
                if not candidates:
                    raise TargetUnresolvable("no objects in world")
                return min(
                    candidates, key=lambda o: (pose_distance(o.pose, target.pose), o.object_id)
                )
            raise TargetUnresolvable("grasp needs an object query or pose")
        needle = target.object_query.lower()
        candidates = [o for o in self.objects.values() if needle in o.label.lower()]
        if not candidates:
            raise TargetUnresolvable(f"no object matching {target.object_query!r}")
        return min(candidates, key=lambda o: (pose_distance(o.pose, near), o.object_id))

    def _resolve_person(self, target, near: Pose3) -> WorldPerson:
        query = (target.object_query or "person").lower()
        candidates = [
            p
            for p in self.persons.values()
            if p.present and (query in p.label.lower() or query == "person")
        ]
        if not candidates:
            raise TargetUnresolvable(f"no person matching {target.object_query!r}")
        return min(candidates, key=lambda p: (pose_distance(p.pose, near), p.person_id))

    def _nearest_person(self, robot: WorldRobot, within: float) -> Optional[WorldPerson]:
        best, best_d = None, within
        for person_id in sorted(self.persons):
            person = self.persons[person_id]
            if not person.present:
                continue
            d = pose_distance(person.pose, robot.pose)
            if d <= best_d:
                best, best_d = person, d
        return best

    def _stop_following(self, robot_id: str) -> None:
        for person in self.persons.values():
            if person.following == robot_id:
                person.following = None


def _heading(src: Pose3, dst: Pose3) -> float:
    if abs(dst.x - src.x) < 1e-12 and abs(dst.y - src.y) < 1e-12:
        return src.yaw
    return math.atan2(dst.y - src.y, dst.x - src.x)


def _step_pose(src: Pose3, dst: Pose3, travel: float, yaw: Optional[float] = None) -> Pose3:
    d = pose_distance(src, dst)
    frac = travel / d
    return Pose3(
        src.x + (dst.x - src.x) * frac,
        src.y + (dst.y - src.y) * frac,
        src.z + (dst.z - src.z) * frac,
        yaw if yaw is not None else src.yaw,
    )
