import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import CollectingEmitter
from oracles import brute_force_topk, scalar_cosine
from fleetloop.errors import EmptyFilter, EmptyText, NeverObserved, UnknownAnchor
from fleetloop.memory import (
    MemoryStore,
    ObservationFrame,
    PlaceAnchor,
    Registrar,
    ResultSource,
    StructuredFilter,
    VisualEntry,
    cosine,
    embed,
)
from fleetloop.model import EventKind, Pose3, pose_distance


def frame(frame_id, description, labels=(), robot="piper", tick=0, camera=Pose3(0, 0, 0.8)):
    return ObservationFrame(
        frame_id=frame_id,
        robot_id=robot,
        sim_time=tick,
        camera_pose=camera,
        labels=tuple(labels),
        description=description,
    )


class TestEmbed:
    def test_deterministic(self):
        a = embed("red bottle")
        b = embed("red bottle")
        assert np.array_equal(a, b)

    def test_identity_cosine(self):
        assert cosine(embed("bottle"), embed("bottle")) == pytest.approx(1.0)

    def test_unit_norm(self):
        for text in ("a", "sour lemon", "one two three four five six"):
            assert np.linalg.norm(embed(text)) == pytest.approx(1.0, abs=1e-9)

    def test_empty_text_rejected(self):
        with pytest.raises(EmptyText):
            embed("")
        with pytest.raises(EmptyText):
            embed("!!! --- ???")

    def test_tokenization_case_and_punctuation_insensitive(self):
        assert np.array_equal(embed("Sour, Lemon!"), embed("sour lemon"))

    def test_attribute_query_ranks_matching_description_first(self):
        # expected ranking computed with the scalar-loop oracle
        query = embed("sour lemon")
        candidates = {
            "sour lemon": embed("sour lemon"),
            "sweet cake": embed("sweet cake"),
            "salty chips": embed("salty chips"),
        }
        oracle_scores = {
            name: scalar_cosine(vec.tolist(), query.tolist())
            for name, vec in candidates.items()
        }
        assert max(oracle_scores, key=oracle_scores.get) == "sour lemon"
        impl_best = max(candidates, key=lambda n: cosine(candidates[n], query))
        assert impl_best == "sour lemon"


class TestInsertObservation:
    def test_first_frame_is_keyframe(self):
        store = MemoryStore()
        entry, _ = store.insert_observation(frame("f1", "a mug on the table"))
        assert entry.is_keyframe

    def test_new_object_entry_with_history_one(self):
        store = MemoryStore()
        _, upserts = store.insert_observation(
            frame("f1", "coffee bottle", [("coffee bottle", Pose3(2, 1, 0.8), 1.0)])
        )
        assert len(upserts) == 1
        assert len(upserts[0].history) == 1
        assert upserts[0].category == "coffee bottle"

    def test_second_sighting_within_half_meter_same_identity(self):
        store = MemoryStore()
        store.insert_observation(
            frame("f1", "coffee bottle", [("coffee bottle", Pose3(2, 1, 0.8), 1.0)], tick=1)
        )
        _, upserts = store.insert_observation(
            frame("f2", "coffee bottle", [("coffee bottle", Pose3(2.1, 1, 0.8), 1.0)], tick=2)
        )
        assert len(store.objects) == 1
        assert len(upserts[0].history) == 2

    def test_distant_sighting_becomes_new_object(self):
        store = MemoryStore()
        store.insert_observation(
            frame("f1", "mug", [("mug", Pose3(0, 0, 0.8), 1.0)], tick=1)
        )
        store.insert_observation(
            frame("f2", "mug", [("mug", Pose3(3, 0, 0.8), 1.0)], tick=2)
        )
        assert len(store.objects) == 2

    def test_emits_memory_inserted(self):
        emitter = CollectingEmitter()
        store = MemoryStore(emit=emitter)
        store.insert_observation(frame("f1", "a mug"))
        inserted = emitter.of(EventKind.MEMORY_INSERTED)
        assert len(inserted) == 1 and inserted[0]["frame_id"] == "f1"

    def test_history_stays_tick_sorted_under_interleaving(self):
        store = MemoryStore()
        for tick in (5, 1, 9, 3):
            store.insert_observation(
                frame(f"f{tick}", "mug", [("mug", Pose3(0, 0, 0.8), 1.0)], tick=tick)
            )
        (obj,) = store.objects.values()
        ticks = [t for t, _, _ in obj.history]
        assert ticks == sorted(ticks)
        assert obj.last_seen == 9


class TestSelectKeyframe:
    def test_empty_set_accepts(self):
        store = MemoryStore()
        entry = VisualEntry(frame=frame("f1", "a mug"), embedding=embed("a mug"))
        assert store.select_keyframe(entry, [])

    def test_identical_description_no_new_category_rejected(self):
        store = MemoryStore()
        store.insert_observation(frame("f1", "a mug on the table"))
        candidate = VisualEntry(
            frame=frame("f2", "a mug on the table"), embedding=embed("a mug on the table")
        )
        assert not store.select_keyframe(candidate, store.keyframes())

    def test_novel_enough_accepted(self):
        # nearest cosine distance computed with the scalar oracle must exceed 0.15
        store = MemoryStore()
        store.insert_observation(frame("f1", "a mug on the table"))
        cand_text = "robot charging dock near the window"
        dist = 1.0 - scalar_cosine(
            embed(cand_text).tolist(), embed("a mug on the table").tolist()
        )
        assert dist > 0.15
        candidate = VisualEntry(frame=frame("f2", cand_text), embedding=embed(cand_text))
        assert store.select_keyframe(candidate, store.keyframes())

    def test_new_category_accepted_despite_similarity(self):
        store = MemoryStore()
        store.insert_observation(frame("f1", "a mug on the table"))
        candidate = VisualEntry(
            frame=frame("f2", "a mug on the table", [("vase", Pose3(1, 0, 0.8), 1.0)]),
            embedding=embed("a mug on the table"),
        )
        assert store.select_keyframe(candidate, store.keyframes())


class TestRetrieveSemantic:
    def test_exact_description_is_top1(self):
        store = MemoryStore()
        store.insert_observation(frame("f1", "green plant in the corner", tick=1))
        store.insert_observation(frame("f2", "red bottle on the desk", tick=2))
        results = store.retrieve_semantic("red bottle on the desk", k=1)
        assert results[0].evidence == "f2"
        assert results[0].confidence == pytest.approx(1.0)

    def test_k_larger_than_store_saturates(self):
        store = MemoryStore()
        store.insert_observation(frame("f1", "one thing", tick=1))
        store.insert_observation(frame("f2", "another thing", tick=2))
        assert len(store.retrieve_semantic("thing", k=10)) == 2

    def test_empty_store_returns_empty(self):
        assert MemoryStore().retrieve_semantic("anything", k=3) == []

    def test_five_frames_match_brute_force_oracle(self):
        store = MemoryStore()
        texts = [
            "red bottle on the desk",
            "blue bottle under the chair",
            "green plant in the corner",
            "a sleeping cat",
            "red bottle near the plant",
        ]
        for i, text in enumerate(texts, start=1):
            store.insert_observation(frame(f"f{i}", text, tick=i))
        query = "red bottle"
        expected = brute_force_topk(
            [(e.frame.frame_id, e.frame.sim_time, e.embedding.tolist()) for e in store.visual],
            embed(query).tolist(),
            k=2,
        )
        got = [r.evidence for r in store.retrieve_semantic(query, k=2)]
        assert got == expected

    def test_scope_filter_combines_with_semantic(self):
        store = MemoryStore()
        store.insert_observation(frame("f1", "a bottle", robot="a", tick=1))
        store.insert_observation(frame("f2", "a bottle", robot="b", tick=2))
        scoped = store.retrieve_semantic("bottle", k=5, scope=StructuredFilter(source_robot="a"))
        assert [r.evidence for r in scoped] == ["f1"]

    def test_tie_broken_by_recency(self):
        store = MemoryStore()
        store.insert_observation(frame("f1", "same text", tick=1))
        store.insert_observation(frame("f2", "same text", tick=9))
        got = [r.evidence for r in store.retrieve_semantic("same text", k=2)]
        assert got == ["f2", "f1"]


class TestRetrieveStructured:
    def _store(self):
        store = MemoryStore()
        store.insert_observation(
            frame("f1", "bottle", [("bottle", Pose3(3, 0, 0), 1.0)], robot="a", tick=5)
        )
        store.insert_observation(
            frame("f2", "bottle", [("bottle", Pose3(7, 0, 0), 1.0)], robot="b", tick=15)
        )
        store.insert_observation(
            frame("f3", "cup", [("cup", Pose3(1, 0, 0), 1.0)], robot="a", tick=25)
        )
        return store

    def test_category_exact_match(self):
        results = self._store().retrieve_structured(StructuredFilter(category="bottle"))
        assert len(results) == 2
        assert all(r.category == "bottle" for r in results)

    def test_radius_predicate(self):
        # distances 3 and 7 from origin, radius 5 keeps only the first
        results = self._store().retrieve_structured(
            StructuredFilter(category="bottle", within_radius=(Pose3(0, 0, 0), 5.0))
        )
        assert len(results) == 1
        assert results[0].pose.x == 3

    def test_time_window_membership(self):
        results = self._store().retrieve_structured(StructuredFilter(time_window=(10, 20)))
        assert len(results) == 1
        assert results[0].category == "bottle"

    def test_empty_filter_rejected(self):
        with pytest.raises(EmptyFilter):
            self._store().retrieve_structured(StructuredFilter())

    def test_ordered_by_recency(self):
        results = self._store().retrieve_structured(StructuredFilter(source_robot="a"))
        assert [r.category for r in results] == ["cup", "bottle"]


class TestLastKnownLocation:
    def test_latest_self_report_wins(self):
        store = MemoryStore()
        store.record_robot_pose("go2", Pose3(3, 4, 0), 10)
        store.record_robot_pose("go2", Pose3(6, 8, 0), 20)
        result = store.last_known_location("go2")
        assert (result.pose.x, result.pose.y) == (6, 8)
        assert result.evidence == "track:go2:20"

    def test_never_observed(self):
        with pytest.raises(NeverObserved):
            MemoryStore().last_known_location("ghost")

    def test_cross_embodiment_merge_takes_max_tick(self):
        store = MemoryStore()
        store.insert_observation(
            frame("f1", "cart", [("cart", Pose3(1, 1, 0), 1.0)], robot="a", tick=5)
        )
        store.insert_observation(
            frame("f2", "cart", [("cart", Pose3(1.2, 1, 0), 1.0)], robot="b", tick=9)
        )
        (obj_id,) = store.objects
        result = store.last_known_location(obj_id)
        assert result.pose.x == pytest.approx(1.2)
        assert store.objects[obj_id].source_robot == "b"


class TestAnchors:
    def test_case_insensitive_roundtrip(self):
        store = MemoryStore()
        store.register_anchor("room_207", Pose3(12, 3, 0), Registrar.USER)
        result = store.resolve_anchor("Room_207")
        assert (result.pose.x, result.pose.y) == (12, 3)
        assert result.confidence == 1.0
        assert result.source is ResultSource.ANCHOR

    def test_unknown_anchor(self):
        with pytest.raises(UnknownAnchor):
            MemoryStore().resolve_anchor("attic")

    def test_auto_never_overwrites_user(self):
        store = MemoryStore()
        store.register_anchor("kitchen", Pose3(5, 5, 0), Registrar.USER)
        store.register_anchor("kitchen", Pose3(9, 9, 0), Registrar.AUTO)
        assert store.resolve_anchor("kitchen").pose.x == 5

    def test_user_overwrites_auto(self):
        store = MemoryStore()
        store.register_anchor("kitchen", Pose3(9, 9, 0), Registrar.AUTO)
        store.register_anchor("kitchen", Pose3(5, 5, 0), Registrar.USER)
        assert store.resolve_anchor("kitchen").pose.x == 5


class TestNormalizeResult:
    def test_object_entry_maps_fields(self):
        store = MemoryStore()
        store.insert_observation(
            frame("f1", "cup", [("cup", Pose3(1, 1, 0.8), 0.9)], tick=3)
        )
        (obj,) = store.objects.values()
        result = store.normalize_result(obj)
        assert result.category == "cup"
        assert result.confidence == pytest.approx(0.9)
        assert result.source is ResultSource.STRUCTURED
        assert (result.pose.x, result.pose.y, result.pose.z) == (1, 1, 0.8)

    def test_place_anchor(self):
        result = MemoryStore().normalize_result(PlaceAnchor("kitchen", Pose3(5, 5, 0)))
        assert result.category == "kitchen" and result.confidence == 1.0

    def test_visual_entry_without_labels_falls_back_to_camera(self):
        store = MemoryStore()
        entry, _ = store.insert_observation(
            frame("f1", "hallway junction, east wing", camera=Pose3(4, 2, 1.2))
        )
        result = store.normalize_result(entry)
        assert (result.pose.x, result.pose.y, result.pose.z) == (4, 2, 1.2)
        assert result.category == "hallway junction"

    def test_query_matched_visual_entry_uses_best_label_pose(self):
        store = MemoryStore()
        entry, _ = store.insert_observation(
            frame(
                "f1",
                "sour lemon, sweet cake",
                [("sour lemon", Pose3(1, 0, 0.8), 1.0), ("sweet cake", Pose3(2, 0, 0.8), 1.0)],
            )
        )
        result = store.normalize_result(entry, query_vec=embed("sour"))
        assert result.category == "sour lemon"
        assert result.pose.x == 1


class TestPersistence:
    def test_snapshot_roundtrip_identical_retrievals(self, tmp_path):
        store = MemoryStore()
        store.insert_observation(
            frame("f1", "red bottle", [("red bottle", Pose3(1, 2, 0.8), 1.0)], tick=1)
        )
        store.insert_observation(
            frame("f2", "green plant", [("green plant", Pose3(4, 0, 0.8), 1.0)], tick=2)
        )
        store.register_anchor("kitchen", Pose3(5, 5, 0), Registrar.USER)
        store.record_robot_pose("go2", Pose3(1, 1, 0), 7)
        path = str(tmp_path / "memory.jsonl")
        store.save_snapshot(path)
        loaded = MemoryStore.load_snapshot(path)

        q = [r.to_doc() for r in store.retrieve_semantic("red bottle", k=2)]
        q2 = [r.to_doc() for r in loaded.retrieve_semantic("red bottle", k=2)]
        assert q == q2
        s = [r.to_doc() for r in store.retrieve_structured(StructuredFilter(category="red bottle"))]
        s2 = [r.to_doc() for r in loaded.retrieve_structured(StructuredFilter(category="red bottle"))]
        assert s == s2
        assert store.resolve_anchor("kitchen").to_doc() == loaded.resolve_anchor("kitchen").to_doc()
        assert loaded.last_known_location("go2").to_doc() == store.last_known_location("go2").to_doc()

    def test_new_objects_after_reload_continue_id_sequence(self, tmp_path):
        store = MemoryStore()
        store.insert_observation(frame("f1", "mug", [("mug", Pose3(0, 0, 0.8), 1.0)]))
        path = str(tmp_path / "memory.jsonl")
        store.save_snapshot(path)
        loaded = MemoryStore.load_snapshot(path)
        loaded.insert_observation(frame("f2", "vase", [("vase", Pose3(5, 5, 0.8), 1.0)]))
        assert sorted(loaded.objects) == ["obj-0001", "obj-0002"]


# -- randomized kNN equivalence ------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=2**31),
    n_entries=st.integers(min_value=1, max_value=60),
    k=st.sampled_from([1, 3, 10]),
    duplicate_rate=st.floats(min_value=0.0, max_value=0.6),
)
def test_knn_matches_brute_force_scan(seed, n_entries, k, duplicate_rate):
    """Randomized stores, including exact-duplicate embeddings to force the
    recency/frame-id tie-break, must match the scalar full-scan oracle."""
    rng = np.random.default_rng(seed)
    store = MemoryStore()
    vocab = ["red", "green", "bottle", "plant", "cat", "desk", "corner", "cart", "dock"]
    descriptions = []
    for i in range(n_entries):
        if descriptions and rng.random() < duplicate_rate:
            text = descriptions[rng.integers(0, len(descriptions))]
        else:
            words = rng.choice(vocab, size=rng.integers(1, 5), replace=True)
            text = " ".join(words)
        descriptions.append(text)
        store.insert_observation(frame(f"f{i:04d}", text, tick=int(rng.integers(0, 20))))
    query = " ".join(rng.choice(vocab, size=2, replace=True))
    expected = brute_force_topk(
        [(e.frame.frame_id, e.frame.sim_time, e.embedding.tolist()) for e in store.visual],
        embed(query).tolist(),
        k,
    )
    got = [r.evidence for r in store.retrieve_semantic(query, k=k)]
    assert got == expected


@settings(max_examples=100, deadline=None)
@given(
    texts=st.lists(
        st.text(alphabet="abcdefg ", min_size=1, max_size=12).filter(lambda s: s.strip()),
        min_size=0,
        max_size=20,
    ),
    query=st.text(alphabet="abcdefg ", min_size=1, max_size=8).filter(lambda s: s.strip()),
)
def test_every_result_has_finite_pose(texts, query):
    store = MemoryStore()
    for i, text in enumerate(texts):
        store.insert_observation(frame(f"f{i}", text, tick=i))
    for r in store.retrieve_semantic(query, k=5):
        assert math.isfinite(r.pose.x) and math.isfinite(r.pose.y) and math.isfinite(r.pose.z)


def test_cross_embodiment_sharing():
    store = MemoryStore()
    store.insert_observation(
        frame("f1", "toolbox", [("toolbox", Pose3(2, 2, 0), 1.0)], robot="robot_a", tick=1)
    )
    # a query on behalf of robot_b with no scope sees robot_a's contribution
    results = store.retrieve_semantic("toolbox", k=1)
    assert results and results[0].evidence == "f1"
    structured = store.retrieve_structured(StructuredFilter(category="toolbox"))
    assert structured and structured[0].source is ResultSource.STRUCTURED
