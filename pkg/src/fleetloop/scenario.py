"""Scenario files: demos are data, not code.

One versioned JSON document declares the world (objects, persons), the
fleet, named anchors, the fault script, and the instruction script. The
same document is embedded into every run-log header so a log replays
without external files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional

from .errors import SchemaMismatch
from .fleet import EmbodimentDescriptor, Morphology
from .memory import Registrar
from .model import Pose3
from .simworld import Fault

SCENARIO_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class FleetEntry:
    descriptor: EmbodimentDescriptor
    fov_half_angle: float = 0.6
    view_range: float = 4.0


@dataclass(frozen=True)
class AnchorEntry:
    name: str
    pose: Pose3
    registered_by: Registrar = Registrar.USER


@dataclass(frozen=True)
class SubmitDirective:
    at_tick: int
    text: str
    priority: int = 0
    explicit_robot: Optional[str] = None
    tau_override: Optional[float] = None


@dataclass(frozen=True)
class AnswerDirective:
    """Answer the clarification raised by the task of the Nth submit
    directive, `delay` ticks after it appears."""

    instruction_index: int
    answer: str
    delay: int = 1


@dataclass(frozen=True)
class ObjectSpec:
    object_id: str
    label: str
    pose: Pose3


@dataclass(frozen=True)
class PersonSpec:
    person_id: str
    label: str
    pose: Pose3
    present: bool = True


@dataclass(frozen=True)
class Scenario:
    name: str
    objects: tuple = ()
    persons: tuple = ()
    fleet: tuple = ()
    anchors: tuple = ()
    faults: tuple = ()
    submits: tuple = ()
    answers: tuple = ()
    doc: dict = field(default_factory=dict, hash=False, compare=False)


def scenario_from_doc(doc: dict) -> Scenario:
    if doc.get("schema_version") != SCENARIO_SCHEMA_VERSION:
        raise SchemaMismatch(
            f"scenario schema {doc.get('schema_version')!r}, expected {SCENARIO_SCHEMA_VERSION}"
        )
    world = doc.get("world", {})
    objects = tuple(
        ObjectSpec(o["object_id"], o["label"], Pose3.from_doc(o["pose"]))
        for o in world.get("objects", [])
    )
    persons = tuple(
        PersonSpec(
            p["person_id"], p["label"], Pose3.from_doc(p["pose"]), p.get("present", True)
        )
        for p in world.get("persons", [])
    )
    fleet = tuple(
        FleetEntry(
            descriptor=EmbodimentDescriptor(
                robot_id=r["robot_id"],
                morphology=Morphology(r["morphology"]),
                capabilities=frozenset(r["capabilities"]),
                pose=Pose3.from_doc(r["pose"]),
                max_concurrent=r.get("max_concurrent", 1),
            ),
            fov_half_angle=r.get("fov_half_angle", 0.6),
            view_range=r.get("view_range", 4.0),
        )
        for r in doc.get("fleet", [])
    )
    anchors = tuple(
        AnchorEntry(
            a["name"],
            Pose3.from_doc(a["pose"]),
            Registrar(a.get("registered_by", "user")),
        )
        for a in doc.get("anchors", [])
    )
    faults = tuple(Fault.from_doc(f) for f in doc.get("faults", []))
    submits, answers = [], []
    for entry in doc.get("script", []):
        if "submit" in entry:
            body = entry["submit"]
            submits.append(
                SubmitDirective(
                    at_tick=entry["at_tick"],
                    text=body["text"],
                    priority=body.get("priority", 0),
                    explicit_robot=body.get("explicit_robot"),
                    tau_override=body.get("tau_override"),
                )
            )
        elif "on_clarification" in entry:
            body = entry["on_clarification"]
            answers.append(
                AnswerDirective(
                    instruction_index=body["instruction_index"],
                    answer=body["answer"],
                    delay=body.get("delay", 1),
                )
            )
        else:
            raise ValueError(f"unknown script entry {entry!r}")
    return Scenario(
        name=doc.get("name", "unnamed"),
        objects=objects,
        persons=persons,
        fleet=fleet,
        anchors=anchors,
        faults=faults,
        submits=tuple(submits),
        answers=tuple(answers),
        doc=doc,
    )


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return scenario_from_doc(json.load(fh))
