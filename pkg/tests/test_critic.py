import pytest
from hypothesis import given, settings, strategies as st

from conftest import CollectingEmitter
from oracles import reference_critic_decision
from fleetloop.config import CriticConfig
from fleetloop.critic import (
    Critic,
    Decision,
    StepProbe,
    decide,
    sim_progress_scorer,
)
from fleetloop.errors import EmptyHistory, NoActiveStep
from fleetloop.model import EventKind

CFG = CriticConfig()


def hist(*scores, start_tick=1):
    return [(start_tick + i, s) for i, s in enumerate(scores)]


class TestDecide:
    def test_threshold_completion(self):
        v = decide(hist(0.9), CFG)
        assert v.decision is Decision.COMPLETE

    def test_improving_below_tau_refines(self):
        v = decide(hist(0.2, 0.35, 0.5), CFG)
        assert v.decision is Decision.REFINE

    def test_stagnation_window_replans(self):
        # spread 0.01 <= eps 0.02 by hand
        v = decide(hist(0.50, 0.50, 0.49), CFG)
        assert v.decision is Decision.REPLAN
        assert "stagnat" in v.rationale

    def test_significant_drop_replans(self):
        v = decide(hist(0.6, 0.3), CFG)
        assert v.decision is Decision.REPLAN
        assert "drop" in v.rationale

    def test_empty_history_rejected(self):
        with pytest.raises(EmptyHistory):
            decide([], CFG)

    def test_rule_order_complete_beats_drop(self):
        # final score passes tau even though it also dropped; rule 1 wins
        v = decide(hist(1.0, 0.86), CFG)
        assert v.decision is Decision.COMPLETE

    def test_two_scores_cannot_stagnate_with_window_three(self):
        assert decide(hist(0.3, 0.3), CFG).decision is Decision.REFINE

    def test_monotone_completion_in_final_score(self):
        base = [0.1, 0.4, 0.7]
        for final in (0.85, 0.9, 0.95, 1.0):
            v = decide(hist(*base, final), CFG)
            assert v.decision is Decision.COMPLETE


@settings(max_examples=1000, deadline=None)
@given(
    scores=st.lists(
        st.floats(min_value=0.0, max_value=1.0, allow_nan=False), min_size=1, max_size=12
    ),
    tau=st.floats(min_value=0.05, max_value=1.0, allow_nan=False),
    drop=st.floats(min_value=0.01, max_value=0.9, allow_nan=False),
    eps=st.floats(min_value=0.001, max_value=0.2, allow_nan=False),
    window=st.integers(min_value=2, max_value=5),
)
def test_decide_matches_reference_evaluator(scores, tau, drop, eps, window):
    cfg = CriticConfig(tau_complete=tau, eps_improve=eps, delta_drop=drop, stagnation_window=window)
    expected = reference_critic_decision(scores, tau, drop, eps, window)
    got = decide(hist(*scores), cfg)
    assert got.decision.value == expected
    assert got.score == scores[-1]


@settings(max_examples=300, deadline=None)
@given(
    scores=st.lists(
        st.floats(min_value=0.0, max_value=1.0, allow_nan=False), min_size=1, max_size=10
    )
)
def test_decide_is_deterministic(scores):
    a = decide(hist(*scores), CFG)
    b = decide(hist(*scores), CFG)
    assert a == b


@settings(max_examples=300, deadline=None)
@given(
    prefix=st.lists(st.floats(min_value=0.0, max_value=0.8, allow_nan=False), max_size=6),
    final=st.floats(min_value=0.85, max_value=1.0, allow_nan=False),
    bump=st.floats(min_value=0.0, max_value=0.15, allow_nan=False),
)
def test_raising_a_completing_final_score_stays_complete(prefix, final, bump):
    raised = min(final + bump, 1.0)
    assert decide(hist(*prefix, final), CFG).decision is Decision.COMPLETE
    assert decide(hist(*prefix, raised), CFG).decision is Decision.COMPLETE


class TestBuiltInScorer:
    def test_navigation_no_progress(self):
        p = StepProbe(skill="navigate", start_distance=10, current_distance=10)
        assert sim_progress_scorer("", None, p) == 0.0

    def test_navigation_arrival(self):
        p = StepProbe(skill="navigate", start_distance=10, current_distance=0)
        assert sim_progress_scorer("", None, p) == 1.0

    def test_navigation_partial(self):
        # 1 - 4/10 by hand
        p = StepProbe(skill="navigate", start_distance=10, current_distance=4)
        assert sim_progress_scorer("", None, p) == pytest.approx(0.6)

    def test_grasp_held(self):
        assert sim_progress_scorer("", None, StepProbe(skill="grasp", object_held=True)) == 1.0

    def test_grasp_proximity_half_credit(self):
        p = StepProbe(skill="grasp", gripper_distance=0.25)
        assert sim_progress_scorer("", None, p) == pytest.approx(0.25)

    def test_handover_possession_flag(self):
        assert (
            sim_progress_scorer("", None, StepProbe(skill="handover", recipient_has_object=True))
            == 1.0
        )

    def test_generic_skill_binary(self):
        assert sim_progress_scorer("", None, StepProbe(skill="observe")) == 0.0
        assert sim_progress_scorer("", None, StepProbe(skill="observe", effect_applied=True)) == 1.0


class TestCriticRecord:
    def test_record_roundtrip(self):
        critic = Critic(CFG, CollectingEmitter())
        critic.begin_attempt("t1", "s1")
        critic.record("t1", "s1", tick=5, score=0.4)
        assert critic.current_attempt("t1", "s1") == [(5, 0.4)]

    def test_two_records_ordered(self):
        critic = Critic(CFG, CollectingEmitter())
        critic.begin_attempt("t1", "s1")
        critic.record("t1", "s1", 5, 0.4)
        critic.record("t1", "s1", 9, 0.6)
        assert critic.current_attempt("t1", "s1") == [(5, 0.4), (9, 0.6)]

    def test_independent_histories_per_step(self):
        critic = Critic(CFG, CollectingEmitter())
        critic.begin_attempt("t1", "s1")
        critic.begin_attempt("t1", "s2")
        critic.record("t1", "s1", 1, 0.1)
        critic.record("t1", "s2", 1, 0.9)
        assert critic.current_attempt("t1", "s1") == [(1, 0.1)]
        assert critic.current_attempt("t1", "s2") == [(1, 0.9)]

    def test_new_attempt_gets_fresh_slice(self):
        critic = Critic(CFG, CollectingEmitter())
        critic.begin_attempt("t1", "s1")
        critic.record("t1", "s1", 1, 0.1)
        critic.begin_attempt("t1", "s1")
        critic.record("t1", "s1", 2, 0.2)
        assert critic.current_attempt("t1", "s1") == [(2, 0.2)]
        assert len(critic.attempts("t1", "s1")) == 2

    def test_record_emits_event(self):
        emitter = CollectingEmitter()
        critic = Critic(CFG, emitter)
        critic.begin_attempt("t1", "s1")
        critic.record("t1", "s1", 3, 0.7, Decision.COMPLETE)
        (payload,) = emitter.of(EventKind.CRITIC_SCORED)
        assert payload["score"] == 0.7 and payload["decision"] == "complete"

    def test_evaluate_without_probe_rejected(self):
        critic = Critic(CFG, CollectingEmitter())
        with pytest.raises(NoActiveStep):
            critic.evaluate("do a thing", None, None)

    def test_evaluate_clamps(self):
        critic = Critic(CFG, CollectingEmitter(), scorer=lambda i, o, p: 3.7)
        assert critic.evaluate("x", None, StepProbe(skill="observe")) == 1.0


class TestConfigValidation:
    def test_tau_bounds(self):
        with pytest.raises(ValueError):
            CriticConfig(tau_complete=0.0)
        with pytest.raises(ValueError):
            CriticConfig(tau_complete=1.5)

    def test_window_minimum(self):
        with pytest.raises(ValueError):
            CriticConfig(stagnation_window=1)
