"""The run engine: executes pipeline stages, applies checkpoints and expert
picks, and persists every event before updating in-memory state.

Distinct runs execute fully concurrently; within a run all transitions are
serialized through a single per-run lock.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import uuid
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .. import agents
from ..domain import (
    CandidateDesign,
    LaneDescription,
    OptimizedPrompt,
    Stage,
    StreetScene,
    get_scenario,
    validate_scene,
)
from ..evaluator import DEFAULT_MASK_FILL, DEFAULT_TOP_K, evaluate_pool
from ..imaging import image_from_bytes, png_bytes, sha256_hex
from ..providers.base import ProviderError, ProviderSet
from ..references import reference_for_scenario
from .machine import (
    DEFAULT_MAX_ROUNDS,
    EventType,
    IllegalTransitionError,
    PipelineRun,
    RunEvent,
    RunState,
    apply_event,
)
from .store import RunStore

logger = logging.getLogger(__name__)


class VersionConflictError(RuntimeError):
    def __init__(self, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"run version conflict: expected {expected}, at {actual}")


@dataclass
class EngineConfig:
    pool_size: int = agents.DEFAULT_POOL_SIZE
    color: str = agents.DEFAULT_HIGHLIGHT_COLOR
    top_k: int = DEFAULT_TOP_K
    max_rounds: int = DEFAULT_MAX_ROUNDS
    mask_fill: tuple[int, int, int] = DEFAULT_MASK_FILL
    auto_approve: bool = True
    strict_verdicts: bool = False
    seed: int | None = 0
    reference_overrides: dict[str, str] = field(default_factory=dict)


class Engine:
    def __init__(
        self,
        runs_dir: str | Path,
        providers: ProviderSet,
        config: EngineConfig | None = None,
        clock: Callable[[], float] = time.time,
    ):
        self.store = RunStore(runs_dir)
        self.providers = providers
        self.config = config or EngineConfig()
        self.clock = clock
        self._runs: dict[str, PipelineRun] = {}
        self._events: dict[str, list[RunEvent]] = {}
        self._locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._registry_lock = threading.Lock()

    # -- plumbing ----------------------------------------------------------

    def _lock_for(self, run_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks[run_id]

    def _commit(self, run: PipelineRun | None, run_id: str, etype: EventType, payload: dict) -> PipelineRun:
        seq = (run.version if run else 0) + 1
        event = RunEvent(seq=seq, ts=self.clock(), type=etype, payload=payload)
        new_run = apply_event(run, event)
        self.store.append_event(run_id, event)
        self._runs[run_id] = new_run
        self._events.setdefault(run_id, []).append(event)
        return new_run

    def get_run(self, run_id: str) -> PipelineRun:
        if run_id not in self._runs:
            run = self.store.load(run_id)
            self._runs[run_id] = run
            self._events[run_id] = self.store.read_events(run_id)
        return self._runs[run_id]

    def events_for(self, run_id: str) -> list[RunEvent]:
        self.get_run(run_id)
        return list(self._events[run_id])

    def list_runs(self) -> list[str]:
        known = set(self._runs) | set(self.store.list_runs())
        return sorted(known)

    def _check_version(self, run: PipelineRun, expected_version: int | None) -> None:
        if expected_version is not None and expected_version != run.version:
            raise VersionConflictError(expected_version, run.version)

    def _artifact_name(self, run: PipelineRun | None, base: str) -> str:
        """Versioned artifact naming: first write keeps the canonical name."""
        if run is None or base not in run.artifacts:
            return base
        stem, dot, suffix = base.rpartition(".")
        k = 2
        while True:
            name = f"{stem}.v{k}.{suffix}" if dot else f"{base}.v{k}"
            if name not in run.artifacts:
                return name
            k += 1

    @staticmethod
    def _ref_dicts(*refs) -> list[dict]:
        return [{"name": r.name, "sha256": r.sha256, "path": r.path} for r in refs]

    def _candidate_prefix(self, run: PipelineRun) -> str:
        if run.revision:
            return f"r{run.round}v{run.revision}-"
        return f"r{run.round}-"

    # -- run lifecycle -----------------------------------------------------

    def create_run(
        self,
        scene: StreetScene,
        scenario_id: int,
        *,
        user_prompt: str | None = None,
        run_id: str | None = None,
        pool_size: int | None = None,
        color: str | None = None,
    ) -> PipelineRun:
        scenario = get_scenario(scenario_id)
        result = validate_scene(scene)
        if not result.ok:
            raise ValueError(f"scene rejected: {result.violation}")
        pool_size = pool_size if pool_size is not None else self.config.pool_size
        if not agents.POOL_SIZE_MIN <= pool_size <= agents.POOL_SIZE_MAX:
            raise ValueError(
                f"pool_size must be in [{agents.POOL_SIZE_MIN}, {agents.POOL_SIZE_MAX}], got {pool_size}"
            )
        color = color or self.config.color
        if user_prompt is None:
            clauses = scenario.prompt_fragment.replace("\n", " ")
            user_prompt = f"Redesign the bike lane to match this configuration. {clauses}"
        if run_id is None:
            if self.config.seed is not None:
                material = "|".join(
                    (scene.digest(), str(scenario_id), str(self.config.seed), str(pool_size), color, user_prompt)
                )
                run_id = f"run-{sha256_hex(material.encode())[:12]}"
            else:
                run_id = f"run-{uuid.uuid4().hex[:12]}"
        if self.store.exists(run_id):
            raise FileExistsError(f"run {run_id!r} already exists")

        with self._lock_for(run_id):
            scene_ref = self.store.write_artifact(run_id, "scene.png", png_bytes(scene.image))
            payload = {
                "run_id": run_id,
                "scene_id": scene.scene_id,
                "scenario_id": scenario_id,
                "max_rounds": self.config.max_rounds,
                "params": {
                    "pool_size": pool_size,
                    "color": color,
                    "user_prompt": user_prompt,
                    "seed": self.config.seed,
                    "scene_meta": scene.metadata(),
                },
                "artifacts": self._ref_dicts(scene_ref),
            }
            return self._commit(None, run_id, EventType.CREATED, payload)

    # -- stage execution ---------------------------------------------------

    def execute_stage(self, run_id: str) -> PipelineRun:
        """Run the agent/evaluator operation for the run's current state."""
        with self._lock_for(run_id):
            run = self.get_run(run_id)
            state = run.state
            if state is RunState.CREATED:
                return self._stage_locate(run)
            if state is RunState.DESCRIPTION_APPROVED:
                return self._stage_optimize(run)
            if state is RunState.PROMPT_APPROVED:
                return self._stage_highlight(run)
            if state is RunState.HIGHLIGHT_APPROVED:
                return self._stage_pool(run)
            if state is RunState.POOL_GENERATED:
                return self._stage_evaluate(run)
            if state is RunState.EVALUATED:
                return self._stage_route_selection(run)
            raise IllegalTransitionError(state, "execute_stage", "state is not executable")

    def _guarded(self, run: PipelineRun, stage_fn: Callable[[PipelineRun], PipelineRun]) -> PipelineRun:
        try:
            return stage_fn(run)
        except ProviderError as err:
            logger.warning("run %s errored in %s: %s", run.run_id, run.state.value, err)
            return self._commit(
                run, run.run_id, EventType.ERROR, {"message": str(err), "stage_state": run.state.value}
            )

    def _scene_image(self, run: PipelineRun):
        return image_from_bytes(self.store.read_artifact(run, "scene.png"))

    def _stage_locate(self, run: PipelineRun) -> PipelineRun:
        def go(run: PipelineRun) -> PipelineRun:
            scene_image = self._scene_image(run)
            scene = StreetScene(
                scene_id=run.scene_id,
                latitude=0.0,
                longitude=0.0,
                heading=0.0,
                pitch=0.0,
                fov=0.0,
                image=scene_image,
            )
            lane = agents.locate_lane(scene, self.providers.describer)
            name = self._artifact_name(run, "locator.json")
            ref = self.store.write_artifact(
                run.run_id, name, (json.dumps(lane.to_dict(), sort_keys=True, indent=2) + "\n").encode()
            )
            new_run = self._commit(
                run,
                run.run_id,
                EventType.LOCATED,
                {"description": lane.to_dict(), "artifacts": self._ref_dicts(ref)},
            )
            if not lane.present:
                new_run = self._commit(
                    new_run, run.run_id, EventType.EXCLUDE, {"reason": "no_lane"}
                )
            return new_run

        return self._guarded(run, go)

    def _stage_optimize(self, run: PipelineRun) -> PipelineRun:
        def go(run: PipelineRun) -> PipelineRun:
            scenario = get_scenario(run.scenario_id)
            opt = agents.optimize_prompt(
                run.params["user_prompt"], scenario, None, self.providers.describer
            )
            name = self._artifact_name(run, "prompt.txt")
            ref = self.store.write_artifact(run.run_id, name, (opt.text + "\n").encode())
            return self._commit(
                run,
                run.run_id,
                EventType.PROMPT_OPTIMIZED,
                {"prompt": opt.to_dict(), "artifacts": self._ref_dicts(ref)},
            )

        return self._guarded(run, go)

    def _stage_highlight(self, run: PipelineRun) -> PipelineRun:
        def go(run: PipelineRun) -> PipelineRun:
            scene_image = self._scene_image(run)
            scene = StreetScene(
                scene_id=run.scene_id, latitude=0.0, longitude=0.0, heading=0.0,
                pitch=0.0, fov=0.0, image=scene_image,
            )
            assert run.description is not None
            highlight = agents.generate_highlight(
                scene,
                run.description,
                run.params["color"],
                self.providers.editor,
                run_id=run.run_id,
                candidate_prefix=self._candidate_prefix(run),
            )
            name = self._artifact_name(run, "highlight.png")
            ref = self.store.write_artifact(run.run_id, name, png_bytes(highlight.image))
            return self._commit(
                run,
                run.run_id,
                EventType.HIGHLIGHT_GENERATED,
                {"candidate_id": highlight.candidate_id, "artifacts": self._ref_dicts(ref)},
            )

        return self._guarded(run, go)

    def _live_artifact_for(self, run: PipelineRun, prefix: str) -> str:
        live = [name for name, ref in run.artifacts.items() if not ref.stale and name.startswith(prefix)]
        if not live:
            raise KeyError(f"run {run.run_id} has no live artifact with prefix {prefix!r}")
        return sorted(live)[-1]

    def _final_prompt(self, run: PipelineRun) -> str:
        assert run.prompt is not None and run.description is not None
        return agents.compose_generation_prompt(run.prompt, run.description)

    def _stage_pool(self, run: PipelineRun) -> PipelineRun:
        def go(run: PipelineRun) -> PipelineRun:
            highlight_name = self._live_artifact_for(run, "highlight")
            highlight_image = image_from_bytes(self.store.read_artifact(run, highlight_name))
            highlight = CandidateDesign(
                candidate_id=run.highlight_id or "h",
                run_id=run.run_id,
                stage=Stage.HIGHLIGHT,
                image=highlight_image,
            )
            candidates = agents.generate_candidates(
                highlight,
                self._final_prompt(run),
                run.params["pool_size"],
                self.providers.editor,
                run_id=run.run_id,
                candidate_prefix=self._candidate_prefix(run),
            )
            refs = [
                self.store.write_artifact(
                    run.run_id, f"candidates/{cand.candidate_id}.png", png_bytes(cand.image)
                )
                for cand in candidates
            ]
            return self._commit(
                run,
                run.run_id,
                EventType.POOL_GENERATED,
                {
                    "candidate_ids": [c.candidate_id for c in candidates],
                    "parent_id": highlight.candidate_id,
                    "artifacts": self._ref_dicts(*refs),
                },
            )

        return self._guarded(run, go)

    def _stage_evaluate(self, run: PipelineRun) -> PipelineRun:
        def go(run: PipelineRun) -> PipelineRun:
            scenario = get_scenario(run.scenario_id)
            candidates = []
            for cid in run.pool_ids:
                data = self.store.read_artifact(run, f"candidates/{cid}.png")
                candidates.append(
                    CandidateDesign(
                        candidate_id=cid,
                        run_id=run.run_id,
                        stage=Stage.FINAL,
                        image=image_from_bytes(data),
                        parent_id=run.highlight_id,
                    )
                )
            reference = reference_for_scenario(run.scenario_id, self.config.reference_overrides)
            report = evaluate_pool(
                candidates,
                scenario,
                self._final_prompt(run),
                reference,
                segmenter=self.providers.segmenter,
                embedder=self.providers.embedder,
                judge=self.providers.judge,
                fill=self.config.mask_fill,
                k=self.config.top_k,
                rounds_remaining=run.round < run.max_rounds,
                strict_verdicts=self.config.strict_verdicts,
            )
            refs = [
                self.store.write_artifact(run.run_id, f"masks/{cid}.png", png_bytes(mask * 255))
                for cid, mask in sorted(report.masks.items())
            ]
            eval_name = self._artifact_name(run, "eval.json")
            eval_ref = self.store.write_artifact(
                run.run_id,
                eval_name,
                (json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n").encode(),
            )
            payload = {
                "advanced": list(report.advanced),
                "verdicts": {k: v.value for k, v in report.outcome.verdicts.items()},
                "disposition": report.outcome.disposition.value,
                "selected": report.outcome.selected,
                "artifacts": self._ref_dicts(*refs, eval_ref),
            }
            return self._commit(run, run.run_id, EventType.EVALUATED, payload)

        return self._guarded(run, go)

    def _stage_route_selection(self, run: PipelineRun) -> PipelineRun:
        if run.disposition == "regenerate":
            return self._commit(run, run.run_id, EventType.REGENERATE, {"round": run.round + 1})
        return self._commit(run, run.run_id, EventType.SELECTION_READY, {})

    # -- checkpoints and expert review --------------------------------------

    def _checkpoint_payload_hash(self, run: PipelineRun, stage: str) -> str:
        prefix = {"description": "locator", "prompt": "prompt", "highlight": "highlight"}[stage]
        try:
            name = self._live_artifact_for(run, prefix)
        except KeyError:
            return ""
        return run.artifacts[name].sha256

    def apply_checkpoint(
        self,
        run_id: str,
        stage: str,
        decision: str,
        *,
        editor: str = "",
        updated_description: dict | None = None,
        updated_prompt_text: str | None = None,
        expected_version: int | None = None,
    ) -> PipelineRun:
        """Approve/edit/reject the pending description, prompt, or highlight."""
        with self._lock_for(run_id):
            run = self.get_run(run_id)
            self._check_version(run, expected_version)
            before = self._checkpoint_payload_hash(run, stage) if stage in ("description", "prompt", "highlight") else ""
            payload: dict = {
                "stage": stage,
                "decision": decision,
                "editor": editor,
                "payload_before": before,
                "payload_after": before,
            }
            if decision == "edited":
                if stage == "description":
                    if updated_description is None:
                        raise ValueError("edited description checkpoint requires updated_description")
                    lane = LaneDescription.from_dict(updated_description)
                    if not lane.present:
                        raise ValueError("cannot edit a description into absence; reject instead")
                    name = self._artifact_name(run, "locator.json")
                    ref = self.store.write_artifact(
                        run_id, name, (json.dumps(lane.to_dict(), sort_keys=True, indent=2) + "\n").encode()
                    )
                    payload.update(
                        updated_description=lane.to_dict(),
                        payload_after=ref.sha256,
                        artifacts=self._ref_dicts(ref),
                    )
                elif stage == "prompt":
                    if not updated_prompt_text:
                        raise ValueError("edited prompt checkpoint requires updated_prompt_text")
                    assert run.prompt is not None
                    opt = OptimizedPrompt.from_text(
                        updated_prompt_text,
                        scenario_id=run.prompt.scenario_id,
                        user_prompt=run.prompt.user_prompt,
                        exemplar_set_id=run.prompt.exemplar_set_id,
                    )
                    name = self._artifact_name(run, "prompt.txt")
                    ref = self.store.write_artifact(run_id, name, (opt.text + "\n").encode())
                    payload.update(
                        updated_prompt=opt.to_dict(),
                        payload_after=ref.sha256,
                        artifacts=self._ref_dicts(ref),
                    )
                else:
                    raise ValueError(f"stage {stage!r} does not support edited checkpoints")
            return self._commit(run, run_id, EventType.CHECKPOINT, payload)

    def record_expert_pick(
        self,
        run_id: str,
        candidate_id: str | None,
        *,
        editor: str = "",
        expected_version: int | None = None,
    ) -> PipelineRun:
        """Expert concurrence finalizes; any mismatch raises a disagreement."""
        with self._lock_for(run_id):
            run = self.get_run(run_id)
            self._check_version(run, expected_version)
            eval_ref = run.artifacts.get("eval.json")
            payload = {
                "candidate_id": candidate_id,
                "editor": editor,
                "payload_before": eval_ref.sha256 if eval_ref else "",
            }
            return self._commit(run, run_id, EventType.EXPERT_PICK, payload)

    def record_disagreement(
        self, run_id: str, revise: str, *, editor: str = "", expected_version: int | None = None
    ) -> PipelineRun:
        """Route a disagreement to its upstream revision target."""
        with self._lock_for(run_id):
            run = self.get_run(run_id)
            self._check_version(run, expected_version)
            return self._commit(
                run, run_id, EventType.EXPERT_DISAGREES, {"revise": revise, "editor": editor}
            )

    def resume(self, run_id: str) -> PipelineRun:
        with self._lock_for(run_id):
            run = self.get_run(run_id)
            return self._commit(run, run_id, EventType.RESUME, {})

    # -- headless driver -----------------------------------------------------

    def run_to_completion(self, run_id: str, max_steps: int = 200) -> PipelineRun:
        """Drive a run until it finalizes, excludes, errors, or needs a human.

        With auto_approve on, checkpoints approve unchanged payloads and the
        expert pick mirrors the agent selection ("auto" editor).
        """
        for _ in range(max_steps):
            run = self.get_run(run_id)
            if run.is_terminal or run.state is RunState.ERRORED:
                return run
            stage = run.checkpoint_stage
            if stage is None:
                self.execute_stage(run_id)
                continue
            if not self.config.auto_approve:
                return run
            if stage == "selection":
                if run.agent_selection is None:
                    return run  # exhausted pools need a human decision
                self.record_expert_pick(run_id, run.agent_selection, editor="auto")
            else:
                self.apply_checkpoint(run_id, stage, "approved", editor="auto")
        raise RuntimeError(f"run {run_id} did not settle within {max_steps} steps")
