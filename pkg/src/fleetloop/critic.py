"""Progress scoring and the complete/refine/replan decision rules.

`decide` is a total deterministic function of (history, config). Rule
precedence is fixed: threshold completion, then significant drop, then
stagnation, then the residual improving case. Scores land in the event
log as structured trace entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

from .config import CriticConfig
from .errors import EmptyHistory, NoActiveStep
from .model import EventKind


class Decision(str, Enum):
    COMPLETE = "complete"
    REFINE = "refine"
    REPLAN = "replan"


@dataclass(frozen=True)
class CriticVerdict:
    score: float
    decision: Decision
    rationale: str


@dataclass(frozen=True)
class StepProbe:
    """Ground-truth progress inputs for one step attempt.

    Produced by the execution backend (the simulator here); an external
    reward-model client can replace the scorer without touching callers.
    """

    skill: str
    start_distance: float = 0.0
    current_distance: float = 0.0
    gripper_distance: Optional[float] = None
    object_held: bool = False
    recipient_has_object: bool = False
    holding_anything: bool = False
    effect_applied: bool = False


def _clamp01(x: float) -> float:
    return 0.0 if x < 0.0 else (1.0 if x > 1.0 else x)


class Scorer(Protocol):
    def __call__(self, instruction: str, observation, probe: StepProbe) -> float: ...


def sim_progress_scorer(instruction: str, observation, probe: StepProbe) -> float:
    """Built-in scorer over simulator ground truth.

    navigate/guide_person: 1 - d/d0 against the distance at step start;
    grasp: 1.0 once held, else half-credit by gripper proximity within
    0.5 m; handover: 1.0 on recipient possession; remaining skills score
    1.0 when their effect has been applied.
    """
    skill = probe.skill
    if skill in ("navigate", "guide_person"):
        if probe.effect_applied:
            return 1.0
        if probe.start_distance <= 0.0:
            return 1.0
        return _clamp01(1.0 - probe.current_distance / probe.start_distance)
    if skill == "grasp":
        if probe.object_held:
            return 1.0
        if probe.gripper_distance is None:
            return 0.0
        return 0.5 * _clamp01(1.0 - probe.gripper_distance / 0.5)
    if skill == "handover":
        if probe.recipient_has_object:
            return 1.0
        return 0.5 if probe.holding_anything else 0.0
    if skill == "place":
        if probe.effect_applied:
            return 1.0
        return 0.5 if probe.holding_anything else 0.0
    # observe / inspect / adjust_viewpoint and anything future: binary
    return 1.0 if probe.effect_applied else 0.0


def decide(history: Sequence[Tuple[int, float]], cfg: CriticConfig) -> CriticVerdict:
    """Convert one attempt's (tick, score) history into a verdict.

    Rule order: (1) latest >= tau_complete -> Complete; (2) latest dropped
    by at least delta_drop from the previous score -> Replan; (3) the last
    stagnation_window scores spread within eps_improve -> Replan;
    (4) otherwise -> Refine.
    """
    if not history:
        raise EmptyHistory("decide requires at least one score")
    scores = [s for _, s in history]
    latest = scores[-1]
    if latest >= cfg.tau_complete:
        return CriticVerdict(latest, Decision.COMPLETE, "score reached completion threshold")
    if len(scores) >= 2 and latest <= scores[-2] - cfg.delta_drop:
        return CriticVerdict(latest, Decision.REPLAN, "score dropped significantly")
    n = cfg.stagnation_window
    if len(scores) >= n:
        window = scores[-n:]
        if max(window) - min(window) <= cfg.eps_improve:
            return CriticVerdict(latest, Decision.REPLAN, "score stagnated")
    return CriticVerdict(latest, Decision.REFINE, "score still improving")


class Critic:
    """Per-attempt score histories plus trace logging.

    Histories are keyed by (task_id, step_id); each re-issued attempt opens
    a fresh slice so decisions never mix attempts.
    """

    def __init__(
        self,
        cfg: CriticConfig,
        emit: Callable[[EventKind, dict], None],
        scorer: Optional[Scorer] = None,
    ):
        self.cfg = cfg
        self._emit = emit
        self._scorer: Scorer = scorer or sim_progress_scorer
        # (task_id, step_id) -> list of attempts, each a list of (tick, score)
        self._history: Dict[Tuple[str, str], List[List[Tuple[int, float]]]] = {}

    def evaluate(self, instruction: str, observation, probe: Optional[StepProbe]) -> float:
        if probe is None:
            raise NoActiveStep("no probe for an inactive step")
        return _clamp01(float(self._scorer(instruction, observation, probe)))

    def begin_attempt(self, task_id: str, step_id: str) -> None:
        self._history.setdefault((task_id, step_id), []).append([])

    def record(
        self,
        task_id: str,
        step_id: str,
        tick: int,
        score: float,
        decision: Optional[Decision] = None,
    ) -> None:
        attempts = self._history.setdefault((task_id, step_id), [])
        if not attempts:
            attempts.append([])
        attempts[-1].append((tick, score))
        self._emit(
            EventKind.CRITIC_SCORED,
            {
                "task_id": task_id,
                "step_id": step_id,
                "attempt": len(attempts),
                "tick": tick,
                "score": score,
                "decision": decision.value if decision else None,
            },
        )

    def current_attempt(self, task_id: str, step_id: str) -> List[Tuple[int, float]]:
        attempts = self._history.get((task_id, step_id), [])
        return list(attempts[-1]) if attempts else []

    def attempts(self, task_id: str, step_id: str) -> List[List[Tuple[int, float]]]:
        return [list(a) for a in self._history.get((task_id, step_id), [])]

    def decide_current(self, task_id: str, step_id: str, cfg: Optional[CriticConfig] = None) -> CriticVerdict:
        history = self.current_attempt(task_id, step_id)
        return decide(history, cfg or self.cfg)
