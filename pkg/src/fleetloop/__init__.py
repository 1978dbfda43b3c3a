"""fleetloop: a deterministic multi-embodiment orchestration runtime.

One runtime coordinates many simulated robot bodies through a shared skill
layer, grounds instructions against a shared spatial-semantic memory, and
closes the execution loop with a critic that scores progress and decides
between completion, refinement, and replanning. Every run is an ordered
event log that replays bit for bit.
"""

from .config import (
    CriticConfig,
    FleetConfig,
    OrchestratorConfig,
    RuntimeConfig,
    SchedulingConfig,
    SimConfig,
    load_config,
)
from .model import (
    CAPABILITIES,
    Event,
    EventKind,
    PlanProgram,
    PlanStep,
    Pose3,
    SkillInvocation,
    Target,
    TaskRecord,
    TaskState,
    capability_satisfies,
    pose_distance,
)
from .runtime import Runtime, ScenarioDriver, run_scenario
from .scenario import Scenario, load_scenario, scenario_from_doc

__version__ = "0.1.0"

__all__ = [
    "CAPABILITIES",
    "CriticConfig",
    "Event",
    "EventKind",
    "FleetConfig",
    "OrchestratorConfig",
    "PlanProgram",
    "PlanStep",
    "Pose3",
    "Runtime",
    "RuntimeConfig",
    "Scenario",
    "ScenarioDriver",
    "SchedulingConfig",
    "SimConfig",
    "SkillInvocation",
    "Target",
    "TaskRecord",
    "TaskState",
    "capability_satisfies",
    "load_config",
    "load_scenario",
    "pose_distance",
    "run_scenario",
    "scenario_from_doc",
]
