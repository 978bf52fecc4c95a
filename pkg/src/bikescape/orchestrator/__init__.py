"""Run state machine, event-sourced persistence, and the stage engine."""

from .engine import Engine, EngineConfig, VersionConflictError
from .machine import (
    ArtifactRef,
    CheckpointDecision,
    CheckpointRecord,
    CheckpointStage,
    EventType,
    IllegalTransitionError,
    PipelineRun,
    RunEvent,
    RunState,
    UnknownCandidateError,
    advance,
    apply_event,
    legal_event_names,
    replay,
)
from .store import IntegrityError, RunNotFoundError, RunStore

__all__ = [
    "ArtifactRef",
    "CheckpointDecision",
    "CheckpointRecord",
    "CheckpointStage",
    "Engine",
    "EngineConfig",
    "EventType",
    "IllegalTransitionError",
    "IntegrityError",
    "PipelineRun",
    "RunEvent",
    "RunNotFoundError",
    "RunState",
    "RunStore",
    "UnknownCandidateError",
    "VersionConflictError",
    "advance",
    "apply_event",
    "legal_event_names",
    "replay",
]
