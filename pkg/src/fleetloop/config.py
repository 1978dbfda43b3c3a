"""Runtime configuration: dataclass sections loadable from one JSON file.

The config path can be overridden with the FLEETLOOP_CONFIG environment
variable; unset fields keep their defaults.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

CONFIG_ENV_VAR = "FLEETLOOP_CONFIG"


@dataclass(frozen=True)
class SchedulingConfig:
    w_loc: float = 0.6
    w_load: float = 0.4
    distance_scale: float = 1.0

    def __post_init__(self):
        if self.w_loc < 0 or self.w_load < 0:
            raise ValueError("scheduling weights must be >= 0")
        if self.w_loc + self.w_load <= 0:
            raise ValueError("w_loc + w_load must be > 0")
        if self.distance_scale <= 0:
            raise ValueError("distance_scale must be > 0")


@dataclass(frozen=True)
class CriticConfig:
    tau_complete: float = 0.85
    eps_improve: float = 0.02
    delta_drop: float = 0.2
    stagnation_window: int = 3

    def __post_init__(self):
        if not (0.0 < self.tau_complete <= 1.0):
            raise ValueError("tau_complete must be in (0, 1]")
        if self.eps_improve <= 0 or self.delta_drop <= 0:
            raise ValueError("eps_improve and delta_drop must be positive")
        if self.stagnation_window < 2:
            raise ValueError("stagnation_window must be >= 2")


@dataclass(frozen=True)
class FleetConfig:
    heartbeat_interval: int = 5
    # default detector: 3 missed intervals
    heartbeat_timeout: int = 15


@dataclass(frozen=True)
class OrchestratorConfig:
    sweep_delta_yaw: float = 0.5
    clarification_timeout: int = 200
    refine_limit: int = 3
    replan_limit: int = 8
    # skills whose built-in progress score only reaches tau at physical
    # completion; everything else uses CriticConfig.tau_complete
    navigation_tau: float = 1.0


@dataclass(frozen=True)
class SimConfig:
    robot_speed: float = 1.0
    arm_latency: int = 2
    observe_latency: int = 1
    grasp_range: float = 0.5
    handover_range: float = 1.5
    person_follow_range: float = 2.0
    person_stop_gap: float = 0.5
    label_dropout: float = 0.0


@dataclass(frozen=True)
class RuntimeConfig:
    scheduler: SchedulingConfig = field(default_factory=SchedulingConfig)
    critic: CriticConfig = field(default_factory=CriticConfig)
    fleet: FleetConfig = field(default_factory=FleetConfig)
    orchestrator: OrchestratorConfig = field(default_factory=OrchestratorConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    tick_rate: float = 20.0  # serve-mode ticks per second

    def to_doc(self) -> dict:
        return asdict(self)

    @classmethod
    def from_doc(cls, doc: dict) -> "RuntimeConfig":
        sections = {
            "scheduler": SchedulingConfig,
            "critic": CriticConfig,
            "fleet": FleetConfig,
            "orchestrator": OrchestratorConfig,
            "sim": SimConfig,
        }
        kwargs = {}
        for name, klass in sections.items():
            sub = doc.get(name, {})
            allowed = {f.name for f in fields(klass)}
            unknown = set(sub) - allowed
            if unknown:
                raise ValueError(f"unknown keys in config section {name!r}: {sorted(unknown)}")
            kwargs[name] = klass(**sub)
        if "tick_rate" in doc:
            kwargs["tick_rate"] = float(doc["tick_rate"])
        return cls(**kwargs)


def load_config(path: Optional[str] = None) -> RuntimeConfig:
    """Load config from `path`, the FLEETLOOP_CONFIG env var, or defaults."""
    path = path or os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return RuntimeConfig()
    with open(path, "r", encoding="utf-8") as fh:
        return RuntimeConfig.from_doc(json.load(fh))
