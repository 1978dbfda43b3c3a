"""Shared visual-centric multimodal store.

Three entity kinds live here: embedded scene observations (with sparse
keyframes), object-centric entries with sighting histories, and named place
anchors. Two retrieval paths, latent (cosine over embeddings) and structured
(metadata predicates), both normalize into the same action-ready result:
category, confidence, evidence, and always a finite global pose.

The built-in embedder is a deterministic token-hash bag model so retrieval
semantics are testable end to end; an external encoder can be plugged in
behind the same `embed` contract.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    EmptyFilter,
    EmptyText,
    NeverObserved,
    SchemaMismatch,
    UnknownAnchor,
    UnspatializedEntry,
)
from .model import EventKind, Pose3, canonical_json, pose_distance

DEFAULT_DIM = 64
DEFAULT_THETA_NOVEL = 0.15
SNAPSHOT_SCHEMA_VERSION = 1
OBJECT_ASSOCIATION_RADIUS = 0.5

_TOKEN_RE = re.compile(r"[^0-9a-z]+")


def _bucket(token: str, dim: int) -> int:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % dim


def embed(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Deterministic bag-of-tokens embedding, L2-normalized.

    Lowercase, split on non-alphanumerics, hash each token into one of
    `dim` buckets, count, normalize. Raises EmptyText when no token
    survives tokenization.
    """
    tokens = [t for t in _TOKEN_RE.split(text.lower()) if t]
    if not tokens:
        raise EmptyText(f"no tokens in {text!r}")
    vec = np.zeros(dim, dtype=np.float64)
    for tok in tokens:
        vec[_bucket(tok, dim)] += 1.0
    return vec / np.linalg.norm(vec)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b))


@dataclass(frozen=True)
class ObservationFrame:
    """One scene-level capture: camera pose, labeled entities, text summary."""

    frame_id: str
    robot_id: str
    sim_time: int
    camera_pose: Pose3
    labels: tuple = ()  # (label text, Pose3, confidence)
    description: str = ""

    def __post_init__(self):
        norm = []
        for label, pose, conf in self.labels:
            if not (0.0 <= conf <= 1.0):
                raise ValueError(f"label confidence {conf} outside [0, 1]")
            norm.append((label, pose, float(conf)))
        object.__setattr__(self, "labels", tuple(norm))

    def to_doc(self) -> dict:
        return {
            "frame_id": self.frame_id,
            "robot_id": self.robot_id,
            "sim_time": self.sim_time,
            "camera_pose": self.camera_pose.to_doc(),
            "labels": [
                {"label": l, "pose": p.to_doc(), "confidence": c} for l, p, c in self.labels
            ],
            "description": self.description,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ObservationFrame":
        return cls(
            frame_id=doc["frame_id"],
            robot_id=doc["robot_id"],
            sim_time=doc["sim_time"],
            camera_pose=Pose3.from_doc(doc["camera_pose"]),
            labels=tuple(
                (d["label"], Pose3.from_doc(d["pose"]), d["confidence"]) for d in doc["labels"]
            ),
            description=doc["description"],
        )


@dataclass
class VisualEntry:
    frame: ObservationFrame
    embedding: np.ndarray
    is_keyframe: bool = False

    def __post_init__(self):
        norm = float(np.linalg.norm(self.embedding))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"embedding must be unit length, |v| = {norm}")


@dataclass
class ObjectEntry:
    object_id: str
    category: str
    last_pose: Pose3
    last_seen: int
    source_robot: str
    confidence: float
    history: List[Tuple[int, Pose3, str]] = field(default_factory=list)

    def sighted(self, tick: int, pose: Pose3, robot_id: str, confidence: float) -> None:
        self.history.append((tick, pose, robot_id))
        self.history.sort(key=lambda h: h[0])
        tick_max, pose_max, robot_max = self.history[-1]
        self.last_seen = tick_max
        self.last_pose = pose_max
        self.source_robot = robot_max
        self.confidence = confidence


class Registrar(str, Enum):
    USER = "user"
    AUTO = "auto"


@dataclass(frozen=True)
class PlaceAnchor:
    name: str
    pose: Pose3
    registered_by: Registrar = Registrar.AUTO


class ResultSource(str, Enum):
    LATENT = "latent"
    STRUCTURED = "structured"
    ANCHOR = "anchor"


@dataclass(frozen=True)
class NavigableResult:
    """Normalized retrieval output; the pose is always present and finite."""

    category: str
    confidence: float
    evidence: str
    pose: Pose3
    source: ResultSource

    def to_doc(self) -> dict:
        return {
            "category": self.category,
            "confidence": self.confidence,
            "evidence": self.evidence,
            "pose": self.pose.to_doc(),
            "source": self.source.value,
        }


@dataclass(frozen=True)
class StructuredFilter:
    category: Optional[str] = None
    source_robot: Optional[str] = None
    time_window: Optional[Tuple[int, int]] = None
    within_radius: Optional[Tuple[Pose3, float]] = None

    def __post_init__(self):
        if self.time_window is not None and self.time_window[0] > self.time_window[1]:
            raise ValueError("time_window from > to")
        if self.within_radius is not None and self.within_radius[1] <= 0:
            raise ValueError("radius must be > 0")

    @property
    def empty(self) -> bool:
        return (
            self.category is None
            and self.source_robot is None
            and self.time_window is None
            and self.within_radius is None
        )

    @classmethod
    def from_doc(cls, doc: dict) -> "StructuredFilter":
        tw = doc.get("time_window")
        wr = doc.get("within_radius")
        return cls(
            category=doc.get("category"),
            source_robot=doc.get("source_robot"),
            time_window=(tw["from_tick"], tw["to_tick"]) if tw else None,
            within_radius=(Pose3.from_doc(wr["center"]), wr["radius"]) if wr else None,
        )


def _first_segment(description: str) -> str:
    """Category fallback for label-less frames: leading token sequence."""
    seg = description.split(",")[0].strip()
    return seg if seg else description.strip()


class MemoryStore:
    """One shared store; every connected robot writes to and reads from it."""

    def __init__(
        self,
        dim: int = DEFAULT_DIM,
        theta_novel: float = DEFAULT_THETA_NOVEL,
        emit: Optional[Callable[[EventKind, dict], None]] = None,
        embedder: Optional[Callable[[str], np.ndarray]] = None,
    ):
        self.dim = dim
        self.theta_novel = theta_novel
        self._emit = emit or (lambda kind, payload: None)
        self._embed = embedder or (lambda text: embed(text, dim))
        self.visual: List[VisualEntry] = []
        self.objects: Dict[str, ObjectEntry] = {}
        self.anchors: Dict[str, PlaceAnchor] = {}
        self.robot_tracks: Dict[str, List[Tuple[int, Pose3]]] = {}
        self._next_object = 1

    # -- embedding ---------------------------------------------------------------

    def embed(self, text: str) -> np.ndarray:
        return self._embed(text)

    # -- insertion ---------------------------------------------------------------

    def select_keyframe(self, candidate: VisualEntry, existing: Sequence[VisualEntry]) -> bool:
        """Novelty (min cosine distance > theta) or a never-seen category."""
        if not existing:
            return True
        min_dist = min(1.0 - cosine(candidate.embedding, kf.embedding) for kf in existing)
        if min_dist > self.theta_novel:
            return True
        seen = {label for kf in existing for label, _, _ in kf.frame.labels}
        return any(label not in seen for label, _, _ in candidate.frame.labels)

    def insert_observation(self, frame: ObservationFrame) -> tuple:
        """Store the frame as a VisualEntry and upsert each labeled object.

        Objects are identified by (category, nearest existing instance within
        0.5 m); anything farther becomes a new object.
        """
        entry = VisualEntry(frame=frame, embedding=self._embed(frame.description))
        entry.is_keyframe = self.select_keyframe(entry, self.keyframes())
        self.visual.append(entry)

        upserts: List[ObjectEntry] = []
        for label, pose, conf in frame.labels:
            obj = self._associate(label, pose)
            if obj is None:
                obj = ObjectEntry(
                    object_id=f"obj-{self._next_object:04d}",
                    category=label,
                    last_pose=pose,
                    last_seen=frame.sim_time,
                    source_robot=frame.robot_id,
                    confidence=conf,
                    history=[(frame.sim_time, pose, frame.robot_id)],
                )
                self._next_object += 1
                self.objects[obj.object_id] = obj
            else:
                obj.sighted(frame.sim_time, pose, frame.robot_id, conf)
            upserts.append(obj)

        self._emit(
            EventKind.MEMORY_INSERTED,
            {
                "entry_kind": "visual",
                "frame_id": frame.frame_id,
                "robot_id": frame.robot_id,
                "sim_time": frame.sim_time,
                "is_keyframe": entry.is_keyframe,
                "objects": [o.object_id for o in upserts],
            },
        )
        return entry, upserts

    def _associate(self, category: str, pose: Pose3) -> Optional[ObjectEntry]:
        best, best_d = None, OBJECT_ASSOCIATION_RADIUS
        for obj in self.objects.values():
            if obj.category != category:
                continue
            d = pose_distance(obj.last_pose, pose)
            if d <= best_d:
                best, best_d = obj, d
        return best

    def record_robot_pose(self, robot_id: str, pose: Pose3, tick: int) -> None:
        """Self-report (heartbeat) or cross-embodiment sighting of a robot."""
        track = self.robot_tracks.setdefault(robot_id, [])
        track.append((tick, pose))
        track.sort(key=lambda t: t[0])

    def keyframes(self) -> List[VisualEntry]:
        return [e for e in self.visual if e.is_keyframe]

    # -- retrieval ---------------------------------------------------------------

    def _scope_pass(self, entry: VisualEntry, scope: Optional[StructuredFilter]) -> bool:
        if scope is None:
            return True
        f = entry.frame
        if scope.category is not None and all(l != scope.category for l, _, _ in f.labels):
            return False
        if scope.source_robot is not None and f.robot_id != scope.source_robot:
            return False
        if scope.time_window is not None:
            lo, hi = scope.time_window
            if not (lo <= f.sim_time <= hi):
                return False
        if scope.within_radius is not None:
            center, radius = scope.within_radius
            if pose_distance(f.camera_pose, center) > radius:
                return False
        return True

    def retrieve_semantic(
        self, query: str, k: int, scope: Optional[StructuredFilter] = None
    ) -> List[NavigableResult]:
        """Exact cosine scan over scope-passing visual entries.

        Ranking: similarity desc, then newer sim_time, then frame_id.
        An empty store returns an empty list.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        q = self._embed(query)
        scored = [
            (cosine(e.embedding, q), e)
            for e in self.visual
            if self._scope_pass(e, scope)
        ]
        scored.sort(key=lambda se: (-se[0], -se[1].frame.sim_time, se[1].frame.frame_id))
        return [
            self.normalize_result(e, query_vec=q, similarity=s) for s, e in scored[:k]
        ]

    def retrieve_structured(self, flt: StructuredFilter) -> List[NavigableResult]:
        """Conjunction of every populated predicate over object entries,
        newest last_seen first."""
        if flt.empty:
            raise EmptyFilter("structured filter has no populated field")
        hits = []
        for obj in self.objects.values():
            if flt.category is not None and obj.category != flt.category:
                continue
            if flt.source_robot is not None and obj.source_robot != flt.source_robot:
                continue
            if flt.time_window is not None and not (
                flt.time_window[0] <= obj.last_seen <= flt.time_window[1]
            ):
                continue
            if flt.within_radius is not None and (
                pose_distance(obj.last_pose, flt.within_radius[0]) > flt.within_radius[1]
            ):
                continue
            hits.append(obj)
        hits.sort(key=lambda o: (-o.last_seen, o.object_id))
        return [self.normalize_result(o) for o in hits]

    def find_objects(self, text: str) -> List[ObjectEntry]:
        """Case-insensitive substring match on category, newest first.

        Grounding helper for object queries like "bottle" against a stored
        category "coffee bottle".
        """
        needle = text.strip().lower()
        hits = [o for o in self.objects.values() if needle in o.category.lower()]
        hits.sort(key=lambda o: (-o.last_seen, o.object_id))
        return hits

    def last_known_location(self, subject: str) -> NavigableResult:
        """Maximum-tick pose for a robot (self-reports) or object (sightings)."""
        track = self.robot_tracks.get(subject)
        if track:
            tick, pose = track[-1]
            return NavigableResult(
                category="robot",
                confidence=1.0,
                evidence=f"track:{subject}:{tick}",
                pose=pose,
                source=ResultSource.STRUCTURED,
            )
        obj = self.objects.get(subject)
        if obj is not None:
            return self.normalize_result(obj)
        raise NeverObserved(subject)

    # -- anchors -------------------------------------------------------------------

    def register_anchor(self, name: str, pose: Pose3, registered_by: Registrar) -> PlaceAnchor:
        """Upsert by case-insensitive name; user registrations beat auto ones."""
        if not name.strip():
            raise ValueError("anchor name must be non-empty")
        key = name.lower()
        existing = self.anchors.get(key)
        if (
            existing is not None
            and existing.registered_by is Registrar.USER
            and registered_by is Registrar.AUTO
        ):
            return existing
        anchor = PlaceAnchor(name=name, pose=pose, registered_by=registered_by)
        self.anchors[key] = anchor
        self._emit(
            EventKind.MEMORY_INSERTED,
            {
                "entry_kind": "anchor",
                "name": name,
                "pose": pose.to_doc(),
                "registered_by": registered_by.value,
            },
        )
        return anchor

    def resolve_anchor(self, name: str) -> NavigableResult:
        anchor = self.anchors.get(name.lower())
        if anchor is None:
            raise UnknownAnchor(name)
        return self.normalize_result(anchor)

    def anchor_names(self) -> List[str]:
        return sorted(a.name for a in self.anchors.values())

    # -- normalization ---------------------------------------------------------------

    def normalize_result(
        self,
        raw,
        query_vec: Optional[np.ndarray] = None,
        similarity: Optional[float] = None,
    ) -> NavigableResult:
        """Map any entity into the navigable protocol: multimodal input,
        spatialized output.

        VisualEntry: if the retrieval was query-driven and the frame has
        labels, the best-matching label supplies pose and category;
        otherwise the camera pose stands in and the category comes from the
        description's first segment.
        """
        if isinstance(raw, PlaceAnchor):
            return NavigableResult(
                category=raw.name,
                confidence=1.0,
                evidence=f"anchor:{raw.name.lower()}",
                pose=raw.pose,
                source=ResultSource.ANCHOR,
            )
        if isinstance(raw, ObjectEntry):
            return NavigableResult(
                category=raw.category,
                confidence=raw.confidence,
                evidence=raw.object_id,
                pose=raw.last_pose,
                source=ResultSource.STRUCTURED,
            )
        if isinstance(raw, VisualEntry):
            frame = raw.frame
            if query_vec is not None and frame.labels:
                best = max(
                    frame.labels,
                    key=lambda lab: (cosine(self._embed(lab[0]), query_vec), lab[2]),
                )
                label, pose, conf = best
                category, pose_out, confidence = label, pose, conf
            else:
                category = _first_segment(frame.description)
                pose_out = frame.camera_pose
                confidence = 1.0
            if pose_out is None:
                raise UnspatializedEntry(frame.frame_id)
            return NavigableResult(
                category=category,
                confidence=confidence,
                evidence=frame.frame_id,
                pose=pose_out,
                source=ResultSource.LATENT,
            )
        raise UnspatializedEntry(f"cannot normalize {type(raw).__name__}")

    # -- persistence -------------------------------------------------------------------

    def save_snapshot(self, path: str) -> None:
        """One JSON record per line; first line is the schema header."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                canonical_json(
                    {
                        "schema_version": SNAPSHOT_SCHEMA_VERSION,
                        "dim": self.dim,
                        "theta_novel": self.theta_novel,
                        "next_object": self._next_object,
                    }
                )
                + "\n"
            )
            for entry in self.visual:
                fh.write(
                    canonical_json(
                        {
                            "kind": "visual",
                            "frame": entry.frame.to_doc(),
                            "embedding": entry.embedding.tolist(),
                            "is_keyframe": entry.is_keyframe,
                        }
                    )
                    + "\n"
                )
            for obj in self.objects.values():
                fh.write(
                    canonical_json(
                        {
                            "kind": "object",
                            "object_id": obj.object_id,
                            "category": obj.category,
                            "last_pose": obj.last_pose.to_doc(),
                            "last_seen": obj.last_seen,
                            "source_robot": obj.source_robot,
                            "confidence": obj.confidence,
                            "history": [
                                {"tick": t, "pose": p.to_doc(), "robot_id": r}
                                for t, p, r in obj.history
                            ],
                        }
                    )
                    + "\n"
                )
            for anchor in self.anchors.values():
                fh.write(
                    canonical_json(
                        {
                            "kind": "anchor",
                            "name": anchor.name,
                            "pose": anchor.pose.to_doc(),
                            "registered_by": anchor.registered_by.value,
                        }
                    )
                    + "\n"
                )
            for robot_id, track in self.robot_tracks.items():
                fh.write(
                    canonical_json(
                        {
                            "kind": "track",
                            "robot_id": robot_id,
                            "points": [{"tick": t, "pose": p.to_doc()} for t, p in track],
                        }
                    )
                    + "\n"
                )

    @classmethod
    def load_snapshot(cls, path: str, emit=None) -> "MemoryStore":
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().split("\n") if ln]
        header = json.loads(lines[0])
        if header.get("schema_version") != SNAPSHOT_SCHEMA_VERSION:
            raise SchemaMismatch(f"snapshot schema {header.get('schema_version')!r}")
        store = cls(dim=header["dim"], theta_novel=header["theta_novel"], emit=emit)
        store._next_object = header["next_object"]
        for line in lines[1:]:
            doc = json.loads(line)
            kind = doc["kind"]
            if kind == "visual":
                entry = VisualEntry(
                    frame=ObservationFrame.from_doc(doc["frame"]),
                    embedding=np.asarray(doc["embedding"], dtype=np.float64),
                    is_keyframe=doc["is_keyframe"],
                )
                store.visual.append(entry)
            elif kind == "object":
                store.objects[doc["object_id"]] = ObjectEntry(
                    object_id=doc["object_id"],
                    category=doc["category"],
                    last_pose=Pose3.from_doc(doc["last_pose"]),
                    last_seen=doc["last_seen"],
                    source_robot=doc["source_robot"],
                    confidence=doc["confidence"],
                    history=[
                        (h["tick"], Pose3.from_doc(h["pose"]), h["robot_id"])
                        for h in doc["history"]
                    ],
                )
            elif kind == "anchor":
                store.anchors[doc["name"].lower()] = PlaceAnchor(
                    name=doc["name"],
                    pose=Pose3.from_doc(doc["pose"]),
                    registered_by=Registrar(doc["registered_by"]),
                )
            elif kind == "track":
                store.robot_tracks[doc["robot_id"]] = [
                    (p["tick"], Pose3.from_doc(p["pose"])) for p in doc["points"]
                ]
        return store
