"""Exception taxonomy for runtime operations.

Every operation-level failure mode raises a named subclass of
FleetloopError so callers (and the gateway) can map errors to wire
responses without string matching.
"""


class FleetloopError(Exception):
    """Base class for all runtime errors."""


# fleet
class DuplicateRobotId(FleetloopError):
    pass


class UnknownRobot(FleetloopError):
    pass


class RobotDisconnected(FleetloopError):
    pass


class CapabilityMissing(FleetloopError):
    pass


class RobotSaturated(FleetloopError):
    pass


# scheduler
class NoCapableRobot(FleetloopError):
    pass


class ExplicitRobotUnavailable(FleetloopError):
    pass


# memory
class EmptyText(FleetloopError):
    pass


class EmptyFilter(FleetloopError):
    pass


class UnknownAnchor(FleetloopError):
    pass


class NeverObserved(FleetloopError):
    pass


class UnspatializedEntry(FleetloopError):
    pass


# critic
class EmptyHistory(FleetloopError):
    pass


class NoActiveStep(FleetloopError):
    pass


# simulator
class TargetUnresolvable(FleetloopError):
    pass


# orchestrator
class UnparseableInstruction(FleetloopError):
    pass


class UnknownClarification(FleetloopError):
    pass


class AlreadyAnswered(FleetloopError):
    pass


# gateway / persistence
class RuntimeNotReady(FleetloopError):
    pass


class SeqOutOfRange(FleetloopError):
    pass


class SchemaMismatch(FleetloopError):
    pass


class DivergenceDetected(FleetloopError):
    def __init__(self, seq: int, message: str = ""):
        super().__init__(message or f"replay diverged at seq {seq}")
        self.seq = seq
