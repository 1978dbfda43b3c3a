"""Template grammar for instruction grounding.

Coverage is a documented, closed pattern set; anything unmatched raises
UnparseableInstruction so the orchestrator can ask instead of guessing.
An explicit executor can be appended to any form as "... using <robot_id>".
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Tuple

from .errors import UnparseableInstruction


class Verb(str, Enum):
    PICK = "pick"
    PLACE = "place"
    DELIVER = "deliver"
    FIND = "find"
    INSPECT = "inspect"
    GUIDE = "guide"
    STATUS = "status"
    PREPARE_SCENE = "prepare_scene"


@dataclass(frozen=True)
class GroundedIntent:
    verb: Verb
    object_query: Optional[str] = None
    attribute_query: Optional[str] = None
    destination: Optional[str] = None
    pickup: Optional[str] = None  # second location for Guide
    person: Optional[str] = None
    explicit_robot: Optional[str] = None

    def __post_init__(self):
        required = {
            Verb.DELIVER: ("object_query", "destination"),
            Verb.GUIDE: ("pickup", "destination"),
            Verb.FIND: ("object_query",),
            Verb.STATUS: ("object_query",),
            Verb.PLACE: ("object_query", "destination"),
        }.get(self.verb, ())
        for name in required:
            if getattr(self, name) is None:
                raise ValueError(f"{self.verb.value} intent requires {name}")
        if self.verb is Verb.PICK and self.object_query is None and self.attribute_query is None:
            raise ValueError("pick intent requires an object or attribute query")

    def to_doc(self) -> dict:
        return {
            "verb": self.verb.value,
            "object_query": self.object_query,
            "attribute_query": self.attribute_query,
            "destination": self.destination,
            "pickup": self.pickup,
            "person": self.person,
            "explicit_robot": self.explicit_robot,
        }


_EXPLICIT_SUFFIX = re.compile(r"^(?P<body>.+?)[,]?\s+using\s+(?:robot\s+)?(?P<robot>[\w-]+)\s*$", re.I)

_THE = r"(?:the\s+)?"


def _p(pattern: str) -> re.Pattern:
    return re.compile(pattern, re.IGNORECASE)


# (human-readable form, compiled pattern, intent builder)
PATTERNS: List[Tuple[str, re.Pattern, Callable[[re.Match], GroundedIntent]]] = [
    (
        "deliver the <object> to [the person in] <place>",
        _p(rf"^deliver\s+{_THE}(?P<obj>.+?)\s+to\s+(?:the\s+person\s+in\s+)?{_THE}(?P<dest>.+?)[.!]?$"),
        lambda m: GroundedIntent(
            Verb.DELIVER, object_query=m["obj"].strip(), destination=m["dest"].strip(), person="person"
        ),
    ),
    (
        "pick something <attribute> from the <place> and place it on the <place>",
        _p(
            rf"^pick\s+(?:up\s+)?something\s+(?P<attr>[\w\s]+?)\s+from\s+{_THE}(?P<src>[\w\s]+?)"
            rf"\s+and\s+place\s+it\s+(?:on|in)\s+{_THE}(?P<dest>.+?)[.!]?$"
        ),
        lambda m: GroundedIntent(
            Verb.PICK,
            attribute_query=m["attr"].strip(),
            pickup=m["src"].strip(),
            destination=m["dest"].strip(),
        ),
    ),
    (
        "pick something <attribute> from the <place>",
        _p(rf"^pick\s+(?:up\s+)?something\s+(?P<attr>[\w\s]+?)\s+from\s+{_THE}(?P<src>.+?)[.!]?$"),
        lambda m: GroundedIntent(Verb.PICK, attribute_query=m["attr"].strip(), pickup=m["src"].strip()),
    ),
    (
        "pick [up] the <object> and place it on the <place>",
        _p(
            rf"^pick\s+(?:up\s+)?{_THE}(?P<obj>.+?)\s+and\s+place\s+it\s+(?:on|in)\s+{_THE}(?P<dest>.+?)[.!]?$"
        ),
        lambda m: GroundedIntent(
            Verb.PICK, object_query=m["obj"].strip(), destination=m["dest"].strip()
        ),
    ),
    (
        "pick [up] the <object>",
        _p(rf"^pick\s+(?:up\s+)?{_THE}(?P<obj>.+?)[.!]?$"),
        lambda m: GroundedIntent(Verb.PICK, object_query=m["obj"].strip()),
    ),
    (
        "place the <object> on the <place>",
        _p(rf"^place\s+{_THE}(?P<obj>.+?)\s+(?:on|in)\s+{_THE}(?P<dest>.+?)[.!]?$"),
        lambda m: GroundedIntent(
            Verb.PLACE, object_query=m["obj"].strip(), destination=m["dest"].strip()
        ),
    ),
    (
        "find the <object>",
        _p(rf"^(?:find|locate)\s+{_THE}(?P<obj>.+?)[.!]?$"),
        lambda m: GroundedIntent(Verb.FIND, object_query=m["obj"].strip()),
    ),
    (
        "[what is the] status of <robot>",
        _p(rf"^(?:what\s+is\s+{_THE})?status\s+of\s+{_THE}(?P<subject>[\w-]+)\s*[?.!]?$"),
        lambda m: GroundedIntent(Verb.STATUS, object_query=m["subject"].strip()),
    ),
    (
        "inspect the <place-or-thing>",
        _p(rf"^(?:inspect|check)\s+{_THE}(?P<subject>.+?)[.!]?$"),
        lambda m: GroundedIntent(Verb.INSPECT, object_query=m["subject"].strip()),
    ),
    (
        "meet the <person> at the <place> and guide them to the <place>",
        _p(
            rf"^meet\s+{_THE}(?P<person>[\w\s]+?)\s+at\s+{_THE}(?P<pickup>[\w\s]+?)\s+and\s+"
            rf"(?:guide|escort|lead)\s+(?:them|him|her|{_THE}[\w\s]+?)\s+to\s+{_THE}(?P<dest>.+?)[.!]?$"
        ),
        lambda m: GroundedIntent(
            Verb.GUIDE,
            person=m["person"].strip(),
            pickup=m["pickup"].strip(),
            destination=m["dest"].strip(),
        ),
    ),
    (
        "guide the <person> from the <place> to the <place>",
        _p(
            rf"^(?:guide|escort|lead)\s+{_THE}(?P<person>[\w\s]+?)\s+from\s+{_THE}"
            rf"(?P<pickup>[\w\s]+?)\s+to\s+{_THE}(?P<dest>.+?)[.!]?$"
        ),
        lambda m: GroundedIntent(
            Verb.GUIDE,
            person=m["person"].strip(),
            pickup=m["pickup"].strip(),
            destination=m["dest"].strip(),
        ),
    ),
    (
        "prepare the <scene>",
        _p(rf"^prepare\s+{_THE}(?P<scene>.+?)(?:\s+environment)?[.!]?$"),
        lambda m: GroundedIntent(Verb.PREPARE_SCENE, object_query=m["scene"].strip()),
    ),
]


def parse_instruction(text: str) -> GroundedIntent:
    """Match against the pattern set; raise UnparseableInstruction otherwise."""
    body = text.strip()
    if not body:
        raise UnparseableInstruction("empty instruction")
    explicit_robot = None
    suffix = _EXPLICIT_SUFFIX.match(body)
    if suffix is not None:
        body, explicit_robot = suffix["body"].strip(), suffix["robot"]
    for _, pattern, build in PATTERNS:
        m = pattern.match(body)
        if m is None:
            continue
        intent = build(m)
        if explicit_robot is not None:
            intent = GroundedIntent(
                verb=intent.verb,
                object_query=intent.object_query,
                attribute_query=intent.attribute_query,
                destination=intent.destination,
                pickup=intent.pickup,
                person=intent.person,
                explicit_robot=explicit_robot,
            )
        return intent
    raise UnparseableInstruction(text)


def supported_forms() -> List[str]:
    return [form for form, _, _ in PATTERNS]


def reference_text() -> str:
    """Generated reference of every supported instruction form."""
    lines = [
        "# Supported instruction forms",
        "",
        "Instructions are matched case-insensitively against the template",
        "set below. Append `using <robot_id>` to pin execution to one robot.",
        "Unmatched instructions come back as a clarification listing these",
        "forms.",
        "",
    ]
    lines += [f"- {form}" for form in supported_forms()]
    lines.append("")
    return "\n".join(lines)
