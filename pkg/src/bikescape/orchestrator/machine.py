"""The per-run state machine.

States advance only along the fixed graph below; every event application is a
pure function from (run, event) to a new run version, so replaying the event
log reconstructs the exact current state.

    Created -> Located -> [ckpt description] -> DescriptionApproved
            -> PromptOptimized -> [ckpt prompt] -> PromptApproved
            -> Highlighted -> [ckpt highlight] -> HighlightApproved
            -> PoolGenerated -> Evaluated -> [ckpt selection] -> Finalized

Located may branch to Excluded; Evaluated may loop back to HighlightApproved
(regenerate, bounded by the round budget); an expert disagreement at selection
returns the run to the description, prompt, or highlight checkpoint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

from ..domain import LaneDescription, OptimizedPrompt

DEFAULT_MAX_ROUNDS = 3


class RunState(str, Enum):
    CREATED = "Created"
    LOCATED = "Located"
    DESCRIPTION_APPROVED = "DescriptionApproved"
    PROMPT_OPTIMIZED = "PromptOptimized"
    PROMPT_APPROVED = "PromptApproved"
    HIGHLIGHTED = "Highlighted"
    HIGHLIGHT_APPROVED = "HighlightApproved"
    POOL_GENERATED = "PoolGenerated"
    EVALUATED = "Evaluated"
    AWAITING_EXPERT_PICK = "AwaitingExpertPick"
    FINALIZED = "Finalized"
    EXCLUDED = "Excluded"
    ERRORED = "Errored"


TERMINAL_STATES = frozenset({RunState.FINALIZED, RunState.EXCLUDED})
CHECKPOINT_STATES = {
    RunState.LOCATED: "description",
    RunState.PROMPT_OPTIMIZED: "prompt",
    RunState.HIGHLIGHTED: "highlight",
    RunState.AWAITING_EXPERT_PICK: "selection",
}
EXECUTABLE_STATES = frozenset(
    {
        RunState.CREATED,
        RunState.DESCRIPTION_APPROVED,
        RunState.PROMPT_APPROVED,
        RunState.HIGHLIGHT_APPROVED,
        RunState.POOL_GENERATED,
        RunState.EVALUATED,
    }
)


class EventType(str, Enum):
    CREATED = "created"
    LOCATED = "located"
    EXCLUDE = "exclude"
    CHECKPOINT = "checkpoint"
    PROMPT_OPTIMIZED = "prompt_optimized"
    HIGHLIGHT_GENERATED = "highlight_generated"
    POOL_GENERATED = "pool_generated"
    EVALUATED = "evaluated"
    SELECTION_READY = "selection_ready"
    REGENERATE = "regenerate"
    EXPERT_PICK = "expert_pick"
    EXPERT_DISAGREES = "expert_disagrees"
    ERROR = "error"
    RESUME = "resume"


class CheckpointStage(str, Enum):
    DESCRIPTION = "description"
    PROMPT = "prompt"
    HIGHLIGHT = "highlight"
    SELECTION = "selection"


class CheckpointDecision(str, Enum):
    APPROVED = "approved"
    EDITED = "edited"
    REJECTED = "rejected"


REVISE_TARGETS = {
    "description": RunState.LOCATED,
    "prompt": RunState.PROMPT_OPTIMIZED,
    "highlight": RunState.HIGHLIGHTED,
}

# Artifact name prefixes produced by each pipeline stage, in order.
STAGE_ARTIFACTS = (
    ("description", ("locator",)),
    ("prompt", ("prompt",)),
    ("highlight", ("highlight",)),
    ("pool", ("candidates/",)),
    ("eval", ("masks/", "eval")),
)


class IllegalTransitionError(RuntimeError):
    """(state, event) is not an edge of the transition graph."""

    def __init__(self, state: RunState, event_name: str, reason: str = ""):
        self.state = state
        self.event_name = event_name
        self.reason = reason
        detail = f" ({reason})" if reason else ""
        super().__init__(f"event {event_name!r} is illegal in state {state.value}{detail}")


class UnknownCandidateError(KeyError):
    """An expert pick referenced a candidate outside the advanced top-k."""


@dataclass(frozen=True)
class RunEvent:
    seq: int
    ts: float
    type: EventType
    payload: dict

    def to_dict(self) -> dict:
        return {"seq": self.seq, "ts": self.ts, "type": self.type.value, "payload": self.payload}

    @classmethod
    def from_dict(cls, data: dict) -> "RunEvent":
        return cls(
            seq=int(data["seq"]),
            ts=float(data["ts"]),
            type=EventType(data["type"]),
            payload=data["payload"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class ArtifactRef:
    name: str
    sha256: str
    path: str
    stale: bool = False


@dataclass(frozen=True)
class CheckpointRecord:
    stage: CheckpointStage
    decision: CheckpointDecision
    editor: str
    payload_before: str
    payload_after: str
    timestamp: float

    def __post_init__(self) -> None:
        if self.decision is CheckpointDecision.EDITED and self.payload_after == self.payload_before:
            raise ValueError("an edited checkpoint must change the payload hash")


@dataclass(frozen=True)
class PipelineRun:
    """Immutable snapshot of one run; a new version per applied event."""

    run_id: str
    scene_id: str = ""
    scenario_id: int = 0
    state: RunState = RunState.CREATED
    version: int = 0
    round: int = 1
    revision: int = 0
    max_rounds: int = DEFAULT_MAX_ROUNDS
    params: dict = field(default_factory=dict)
    checkpoints: tuple[CheckpointRecord, ...] = ()
    artifacts: dict[str, ArtifactRef] = field(default_factory=dict)
    description: LaneDescription | None = None
    prompt: OptimizedPrompt | None = None
    highlight_id: str | None = None
    pool_ids: tuple[str, ...] = ()
    advanced: tuple[str, ...] = ()
    verdicts: dict[str, str] = field(default_factory=dict)
    disposition: str | None = None
    agent_selection: str | None = None
    selected: str | None = None
    expert_pick: str | None = None
    pending_disagreement: bool = False
    resume_state: str | None = None
    error: str | None = None

    @property
    def is_terminal(self) -> bool:
        return self.state in TERMINAL_STATES

    @property
    def checkpoint_stage(self) -> str | None:
        return CHECKPOINT_STATES.get(self.state)

    def live_artifacts(self) -> dict[str, ArtifactRef]:
        return {k: v for k, v in self.artifacts.items() if not v.stale}


def _event_name(event: RunEvent) -> str:
    if event.type is EventType.CHECKPOINT:
        return f"checkpoint:{event.payload.get('stage')}:{event.payload.get('decision')}"
    if event.type is EventType.EXPERT_DISAGREES:
        return f"expert_disagrees:{event.payload.get('revise')}"
    return event.type.value


def _is_legal(run: PipelineRun, event: RunEvent) -> tuple[bool, str]:
    """Whether `event` is an edge from run.state, with a reason when not."""
    state, etype, payload = run.state, event.type, event.payload

    if etype is EventType.CREATED:
        return (run.version == 0 and state is RunState.CREATED, "run already created")

    if etype is EventType.ERROR:
        return (state in EXECUTABLE_STATES, "errors arise only in executable states")

    if etype is EventType.RESUME:
        return (state is RunState.ERRORED, "only an errored run can resume")

    if etype is EventType.CHECKPOINT:
        stage = payload.get("stage")
        decision = payload.get("decision")
        expected = CHECKPOINT_STATES.get(state)
        if expected is None or expected != stage or stage == "selection":
            return (False, f"no {stage!r} checkpoint pending")
        if decision not in ("approved", "edited", "rejected"):
            return (False, f"unknown decision {decision!r}")
        if stage == "highlight" and decision == "edited":
            return (False, "highlight checkpoints support approve/reject only")
        if stage == "description" and run.description is not None and not run.description.present:
            return (False, "absent description cannot pass its checkpoint")
        return (True, "")

    if etype is EventType.LOCATED:
        return (state is RunState.CREATED, "locate runs only from Created")

    if etype is EventType.EXCLUDE:
        if state is not RunState.LOCATED:
            return (False, "exclusion branches only from Located")
        if run.description is None or run.description.present:
            return (False, "exclusion requires an absent lane description")
        return (True, "")

    if etype is EventType.PROMPT_OPTIMIZED:
        return (state is RunState.DESCRIPTION_APPROVED, "optimizer runs after description approval")

    if etype is EventType.HIGHLIGHT_GENERATED:
        return (state is RunState.PROMPT_APPROVED, "highlight runs after prompt approval")

    if etype is EventType.POOL_GENERATED:
        if state is not RunState.HIGHLIGHT_APPROVED:
            return (False, "pool generation runs after highlight approval")
        if run.highlight_id is None or not any(
            not ref.stale and ref.name.startswith("highlight") for ref in run.artifacts.values()
        ):
            return (False, "no live highlight artifact")
        return (True, "")

    if etype is EventType.EVALUATED:
        return (state is RunState.POOL_GENERATED, "evaluation runs on a generated pool")

    if etype is EventType.SELECTION_READY:
        if state is not RunState.EVALUATED:
            return (False, "selection follows evaluation")
        if run.disposition == "regenerate":
            return (False, "a regenerate disposition must regenerate")
        return (True, "")

    if etype is EventType.REGENERATE:
        if state is not RunState.EVALUATED:
            return (False, "regeneration follows evaluation")
        if run.disposition != "regenerate":
            return (False, "disposition does not call for regeneration")
        if run.round >= run.max_rounds:
            return (False, "round budget exhausted")
        return (True, "")

    if etype is EventType.EXPERT_PICK:
        return (state is RunState.AWAITING_EXPERT_PICK, "no expert pick pending")

    if etype is EventType.EXPERT_DISAGREES:
        if state not in (RunState.AWAITING_EXPERT_PICK, RunState.EVALUATED):
            return (False, "disagreement arises at selection review")
        if payload.get("revise") not in REVISE_TARGETS:
            return (False, f"unknown revise target {payload.get('revise')!r}")
        if run.revision >= run.max_rounds:
            return (False, "revision budget exhausted")
        return (True, "")

    return (False, f"unknown event type {etype!r}")


def _add_artifacts(run: PipelineRun, refs: list[dict]) -> dict[str, ArtifactRef]:
    artifacts = dict(run.artifacts)
    for ref in refs:
        artifacts[ref["name"]] = ArtifactRef(
            name=ref["name"], sha256=ref["sha256"], path=ref["path"]
        )
    return artifacts


def _mark_stale(artifacts: dict[str, ArtifactRef], prefixes: tuple[str, ...]) -> dict[str, ArtifactRef]:
    out = {}
    for name, ref in artifacts.items():
        if any(name.startswith(p) for p in prefixes):
            ref = replace(ref, stale=True)
        out[name] = ref
    return out


def _stale_prefixes_from(stage: str, include_self: bool) -> tuple[str, ...]:
    names = [s for s, _ in STAGE_ARTIFACTS]
    idx = names.index(stage)
    if not include_self:
        idx += 1
    prefixes: list[str] = []
    for _, stage_prefixes in STAGE_ARTIFACTS[idx:]:
        prefixes.extend(stage_prefixes)
    return tuple(prefixes)


def _clear_downstream(run_fields: dict, stage: str) -> None:
    """Reset run fields invalidated by returning to `stage`'s checkpoint."""
    if stage in ("description", "prompt"):
        run_fields.update(highlight_id=None)
    run_fields.update(
        pool_ids=(),
        advanced=(),
        verdicts={},
        disposition=None,
        agent_selection=None,
        expert_pick=None,
        pending_disagreement=False,
    )
    if stage == "description":
        run_fields.update(prompt=None)


def _apply_checkpoint(run: PipelineRun, event: RunEvent) -> PipelineRun:
    payload = event.payload
    stage = CheckpointStage(payload["stage"])
    decision = CheckpointDecision(payload["decision"])
    record = CheckpointRecord(
        stage=stage,
        decision=decision,
        editor=payload.get("editor", ""),
        payload_before=payload.get("payload_before", ""),
        payload_after=payload.get("payload_after", payload.get("payload_before", "")),
        timestamp=event.ts,
    )
    fields: dict[str, Any] = {
        "checkpoints": run.checkpoints + (record,),
        "version": run.version + 1,
    }
    artifacts = _add_artifacts(run, payload.get("artifacts", []))

    if decision is CheckpointDecision.REJECTED:
        if stage is CheckpointStage.DESCRIPTION:
            fields.update(state=RunState.CREATED, description=None)
            artifacts = _mark_stale(artifacts, _stale_prefixes_from("description", True))
            _clear_downstream(fields, "description")
        elif stage is CheckpointStage.PROMPT:
            fields.update(state=RunState.DESCRIPTION_APPROVED, prompt=None)
            artifacts = _mark_stale(artifacts, _stale_prefixes_from("prompt", True))
            _clear_downstream(fields, "prompt")
        else:
            fields.update(state=RunState.PROMPT_APPROVED, highlight_id=None)
            artifacts = _mark_stale(artifacts, _stale_prefixes_from("highlight", True))
            _clear_downstream(fields, "highlight")
        return replace(run, artifacts=artifacts, **fields)

    if decision is CheckpointDecision.EDITED:
        if stage is CheckpointStage.DESCRIPTION and "updated_description" in payload:
            fields["description"] = LaneDescription.from_dict(payload["updated_description"])
        elif stage is CheckpointStage.PROMPT and "updated_prompt" in payload:
            fields["prompt"] = OptimizedPrompt.from_dict(payload["updated_prompt"])

    fields["state"] = {
        CheckpointStage.DESCRIPTION: RunState.DESCRIPTION_APPROVED,
        CheckpointStage.PROMPT: RunState.PROMPT_APPROVED,
        CheckpointStage.HIGHLIGHT: RunState.HIGHLIGHT_APPROVED,
    }[stage]
    return replace(run, artifacts=artifacts, **fields)


def apply_event(run: PipelineRun | None, event: RunEvent) -> PipelineRun:
    """Apply one legal event; raises IllegalTransitionError otherwise."""
    if event.type is EventType.CREATED:
        if run is not None:
            raise IllegalTransitionError(run.state, _event_name(event), "run already created")
        payload = event.payload
        return PipelineRun(
            run_id=payload["run_id"],
            scene_id=payload["scene_id"],
            scenario_id=int(payload["scenario_id"]),
            state=RunState.CREATED,
            version=1,
            max_rounds=int(payload.get("max_rounds", DEFAULT_MAX_ROUNDS)),
            params=dict(payload.get("params", {})),
            artifacts=_add_artifacts(
                PipelineRun(run_id=payload["run_id"]), payload.get("artifacts", [])
            ),
        )
    if run is None:
        raise IllegalTransitionError(RunState.CREATED, _event_name(event), "run does not exist yet")

    legal, reason = _is_legal(run, event)
    if not legal:
        raise IllegalTransitionError(run.state, _event_name(event), reason)

    payload = event.payload
    bump = {"version": run.version + 1}

    if event.type is EventType.CHECKPOINT:
        return _apply_checkpoint(run, event)

    if event.type is EventType.LOCATED:
        description = LaneDescription.from_dict(payload["description"])
        return replace(
            run,
            state=RunState.LOCATED,
            description=description,
            artifacts=_add_artifacts(run, payload.get("artifacts", [])),
            **bump,
        )

    if event.type is EventType.EXCLUDE:
        return replace(run, state=RunState.EXCLUDED, **bump)

    if event.type is EventType.PROMPT_OPTIMIZED:
        return replace(
            run,
            state=RunState.PROMPT_OPTIMIZED,
            prompt=OptimizedPrompt.from_dict(payload["prompt"]),
            artifacts=_add_artifacts(run, payload.get("artifacts", [])),
            **bump,
        )

    if event.type is EventType.HIGHLIGHT_GENERATED:
        return replace(
            run,
            state=RunState.HIGHLIGHTED,
            highlight_id=payload["candidate_id"],
            artifacts=_add_artifacts(run, payload.get("artifacts", [])),
            **bump,
        )

    if event.type is EventType.POOL_GENERATED:
        return replace(
            run,
            state=RunState.POOL_GENERATED,
            pool_ids=tuple(payload["candidate_ids"]),
            artifacts=_add_artifacts(run, payload.get("artifacts", [])),
            **bump,
        )

    if event.type is EventType.EVALUATED:
        return replace(
            run,
            state=RunState.EVALUATED,
            advanced=tuple(payload["advanced"]),
            verdicts=dict(payload["verdicts"]),
            disposition=payload["disposition"],
            agent_selection=payload.get("selected"),
            artifacts=_add_artifacts(run, payload.get("artifacts", [])),
            **bump,
        )

    if event.type is EventType.SELECTION_READY:
        return replace(run, state=RunState.AWAITING_EXPERT_PICK, **bump)

    if event.type is EventType.REGENERATE:
        artifacts = _mark_stale(run.artifacts, _stale_prefixes_from("pool", True))
        return replace(
            run,
            state=RunState.HIGHLIGHT_APPROVED,
            round=run.round + 1,
            pool_ids=(),
            advanced=(),
            verdicts={},
            disposition=None,
            agent_selection=None,
            artifacts=artifacts,
            **bump,
        )

    if event.type is EventType.EXPERT_PICK:
        pick = payload.get("candidate_id")
        if pick is not None and pick not in run.advanced:
            raise UnknownCandidateError(
                f"candidate {pick!r} is not among the advanced candidates {list(run.advanced)}"
            )
        concur = pick is not None and pick == run.agent_selection
        record = CheckpointRecord(
            stage=CheckpointStage.SELECTION,
            decision=CheckpointDecision.APPROVED if concur else CheckpointDecision.REJECTED,
            editor=payload.get("editor", ""),
            payload_before=payload.get("payload_before", ""),
            payload_after=payload.get("payload_before", ""),
            timestamp=event.ts,
        )
        if concur:
            return replace(
                run,
                state=RunState.FINALIZED,
                selected=pick,
                expert_pick=pick,
                pending_disagreement=False,
                checkpoints=run.checkpoints + (record,),
                **bump,
            )
        return replace(
            run,
            expert_pick=pick,
            pending_disagreement=True,
            checkpoints=run.checkpoints + (record,),
            **bump,
        )

    if event.type is EventType.EXPERT_DISAGREES:
        target_name = payload["revise"]
        fields: dict[str, Any] = {
            "state": REVISE_TARGETS[target_name],
            "revision": run.revision + 1,
        }
        _clear_downstream(fields, target_name)
        artifacts = _mark_stale(run.artifacts, _stale_prefixes_from(target_name, False))
        return replace(run, artifacts=artifacts, **fields, **bump)

    if event.type is EventType.ERROR:
        return replace(
            run,
            state=RunState.ERRORED,
            resume_state=run.state.value,
            error=payload.get("message", ""),
            **bump,
        )

    if event.type is EventType.RESUME:
        return replace(run, state=RunState(run.resume_state), resume_state=None, error=None, **bump)

    raise IllegalTransitionError(run.state, _event_name(event), "unhandled event type")


def advance(run: PipelineRun | None, event: RunEvent) -> PipelineRun:
    """Public transition entry point; alias of apply_event with legality checks."""
    return apply_event(run, event)


def replay(events: list[RunEvent]) -> PipelineRun:
    """Reconstruct the current run from its event log."""
    if not events:
        raise ValueError("cannot replay an empty event log")
    run: PipelineRun | None = None
    for event in events:
        run = apply_event(run, event)
    assert run is not None
    return run


def legal_event_names(run: PipelineRun) -> set[str]:
    """All event names legal in the run's current state (used by tests/UI)."""
    names: set[str] = set()
    probes: list[RunEvent] = []
    for stage in ("description", "prompt", "highlight"):
        for decision in ("approved", "edited", "rejected"):
            probes.append(
                RunEvent(0, 0.0, EventType.CHECKPOINT, {"stage": stage, "decision": decision})
            )
    for target in REVISE_TARGETS:
        probes.append(RunEvent(0, 0.0, EventType.EXPERT_DISAGREES, {"revise": target}))
    for etype in EventType:
        if etype in (EventType.CHECKPOINT, EventType.EXPERT_DISAGREES, EventType.CREATED):
            continue
        probes.append(RunEvent(0, 0.0, etype, {}))
    for probe in probes:
        ok, _ = _is_legal(run, probe)
        if ok:
            names.add(_event_name(probe))
    return names
