"""HTTP API over the run engine, QC store, and reports.

Every mutation delegates to orchestrator operations and carries the run
version for optimistic concurrency. Error codes map 1:1 onto status codes:
validation 400, not_found 404, illegal_transition 409 (including stale
versions), integrity 500, provider_failure 502.
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from ..domain import get_scenario, scenario_catalog
from ..imaging import b64_to_bytes, image_from_bytes, sha256_hex
from ..ingest import (
    AlreadyDecidedError,
    AcquisitionRequest,
    ImagerySource,
    MixedLocationError,
    NoImageryError,
    QCStore,
    UnknownSceneError,
    fetch_views,
)
from ..metrics import MissingPicksError, evaluator_accuracy, read_gold_labels
from ..orchestrator import (
    Engine,
    IllegalTransitionError,
    IntegrityError,
    PipelineRun,
    RunNotFoundError,
    UnknownCandidateError,
    VersionConflictError,
)
from ..domain import SceneSource, StreetScene
from ..providers.base import ProviderError
from .config import AppConfig, build_imagery_source


class ApiError(Exception):
    """code is one of: not_found, illegal_transition, validation,
    provider_failure, integrity."""

    STATUS = {
        "validation": 400,
        "not_found": 404,
        "illegal_transition": 409,
        "integrity": 500,
        "provider_failure": 502,
    }

    def __init__(self, code: str, message: str, stage: str | None = None):
        self.code = code
        self.message = message
        self.stage = stage
        super().__init__(message)

    def response(self) -> JSONResponse:
        body = {"code": self.code, "message": self.message}
        if self.stage:
            body["stage"] = self.stage
        return JSONResponse(status_code=self.STATUS[self.code], content=body)


def _to_api_error(exc: Exception) -> ApiError:
    if isinstance(exc, ApiError):
        return exc
    if isinstance(exc, (RunNotFoundError, KeyError, FileNotFoundError)):
        return ApiError("not_found", str(exc))
    if isinstance(exc, VersionConflictError):
        return ApiError("illegal_transition", str(exc))
    if isinstance(exc, IllegalTransitionError):
        return ApiError("illegal_transition", str(exc), stage=exc.state.value)
    if isinstance(exc, IntegrityError):
        return ApiError("integrity", str(exc))
    if isinstance(exc, ProviderError):
        return ApiError("provider_failure", str(exc))
    if isinstance(
        exc,
        (ValueError, MixedLocationError, AlreadyDecidedError, MissingPicksError),
    ):
        return ApiError("validation", str(exc))
    raise exc


class CreateRunBody(BaseModel):
    scenario_id: int
    scene_png_b64: str
    scene_id: str = ""
    user_prompt: str | None = None
    pool_size: int | None = None
    color: str | None = None


class AdvanceBody(BaseModel):
    expected_version: int | None = None


class CheckpointBody(BaseModel):
    decision: str
    editor: str = ""
    updated_description: dict | None = None
    updated_prompt_text: str | None = None
    expected_version: int | None = None


class ExpertPickBody(BaseModel):
    candidate_id: str | None = None
    editor: str = ""
    revise: str | None = None
    expected_version: int | None = None


class IngestBody(BaseModel):
    locations: list[dict]
    headings: list[float] | None = None
    size: int | None = None
    pitch: float | None = None
    fov: float | None = None


class QcChoiceBody(BaseModel):
    scene_id: str
    reviewer: str = ""


def run_view(run: PipelineRun) -> dict:
    """Projection of a run for the UI; artifact URLs are content-hash based."""
    return {
        "run_id": run.run_id,
        "scene_id": run.scene_id,
        "scenario_id": run.scenario_id,
        "state": run.state.value,
        "version": run.version,
        "round": run.round,
        "revision": run.revision,
        "checkpoint": run.checkpoint_stage,
        "pending_disagreement": run.pending_disagreement,
        "pool_ids": list(run.pool_ids),
        "advanced": list(run.advanced),
        "verdicts": dict(run.verdicts),
        "agent_selection": run.agent_selection,
        "selected": run.selected,
        "expert_pick": run.expert_pick,
        "disposition": run.disposition,
        "error": run.error,
        "description": run.description.to_dict() if run.description else None,
        "prompt": run.prompt.to_dict() if run.prompt else None,
        "params": {k: v for k, v in run.params.items() if k != "scene_meta"},
        "artifacts": {
            name: {
                "sha256": ref.sha256,
                "stale": ref.stale,
                "url": f"/artifacts/{ref.sha256}",
            }
            for name, ref in run.artifacts.items()
        },
    }


def create_app(
    engine: Engine,
    qc_store: QCStore | None = None,
    config: AppConfig | None = None,
    imagery_source: ImagerySource | None = None,
) -> FastAPI:
    app = FastAPI(title="bikescape", version="0.1.0")
    config = config or AppConfig()

    @app.exception_handler(ApiError)
    async def handle_api_error(request: Request, exc: ApiError):
        return exc.response()

    @app.exception_handler(Exception)
    async def handle_errors(request: Request, exc: Exception):  # pragma: no cover - plumbing
        try:
            return _to_api_error(exc).response()
        except Exception:
            raise exc

    def _engine_call(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as exc:  # mapped to transport codes
            raise _to_api_error(exc) from exc

    @app.get("/scenarios")
    def scenarios():
        return [s.to_dict() for s in scenario_catalog()]

    @app.post("/runs", status_code=201)
    def create_run(body: CreateRunBody):
        try:
            get_scenario(body.scenario_id)
        except KeyError as exc:
            raise ApiError("validation", str(exc)) from exc
        try:
            image = image_from_bytes(b64_to_bytes(body.scene_png_b64))
        except Exception as exc:
            raise ApiError("validation", f"undecodable scene image: {exc}") from exc
        scene = StreetScene(
            scene_id=body.scene_id or f"scene-{sha256_hex(image.tobytes())[:10]}",
            latitude=0.0,
            longitude=0.0,
            heading=0.0,
            pitch=0.0,
            fov=0.0,
            image=image,
            source=SceneSource.LOCAL_FILE,
        )
        run = _engine_call(
            engine.create_run,
            scene,
            body.scenario_id,
            user_prompt=body.user_prompt,
            pool_size=body.pool_size,
            color=body.color,
        )
        return run_view(run)

    @app.get("/runs")
    def list_runs():
        views = []
        for run_id in engine.list_runs():
            views.append(run_view(_engine_call(engine.get_run, run_id)))
        return views

    @app.get("/runs/{run_id}")
    def get_run(run_id: str):
        return run_view(_engine_call(engine.get_run, run_id))

    @app.post("/runs/{run_id}/advance")
    def advance_run(run_id: str, body: AdvanceBody):
        run = _engine_call(engine.get_run, run_id)
        if body.expected_version is not None and body.expected_version != run.version:
            raise ApiError(
                "illegal_transition",
                f"run version conflict: expected {body.expected_version}, at {run.version}",
            )
        return run_view(_engine_call(engine.execute_stage, run_id))

    @app.post("/runs/{run_id}/checkpoints/{stage}")
    def checkpoint(run_id: str, stage: str, body: CheckpointBody):
        run = _engine_call(
            engine.apply_checkpoint,
            run_id,
            stage,
            body.decision,
            editor=body.editor,
            updated_description=body.updated_description,
            updated_prompt_text=body.updated_prompt_text,
            expected_version=body.expected_version,
        )
        return run_view(run)

    @app.get("/runs/{run_id}/candidates")
    def candidates(run_id: str):
        run = _engine_call(engine.get_run, run_id)
        advanced = set(run.advanced)
        out = []
        for cid in run.pool_ids:
            ref = run.artifacts.get(f"candidates/{cid}.png")
            mask_ref = run.artifacts.get(f"masks/{cid}.png")
            out.append(
                {
                    "candidate_id": cid,
                    "stage": "final",
                    "advanced": cid in advanced,
                    "verdict": run.verdicts.get(cid, "pending"),
                    "agent_selected": cid == run.agent_selection,
                    "selected": cid == run.selected,
                    "image_url": f"/artifacts/{ref.sha256}" if ref else None,
                    "mask_url": f"/artifacts/{mask_ref.sha256}" if mask_ref else None,
                }
            )
        return {"run_id": run_id, "version": run.version, "candidates": out}

    @app.post("/runs/{run_id}/expert-pick")
    def expert_pick(run_id: str, body: ExpertPickBody):
        try:
            run = engine.record_expert_pick(
                run_id,
                body.candidate_id,
                editor=body.editor,
                expected_version=body.expected_version,
            )
        except UnknownCandidateError as exc:
            raise ApiError("validation", str(exc)) from exc
        except Exception as exc:
            raise _to_api_error(exc) from exc
        if run.pending_disagreement and body.revise:
            run = _engine_call(engine.record_disagreement, run_id, body.revise, editor=body.editor)
        return run_view(run)

    @app.get("/artifacts/{sha256}")
    def artifact_by_hash(sha256: str):
        for run_id in engine.list_runs():
            run = engine.get_run(run_id)
            for ref in run.artifacts.values():
                if ref.sha256 == sha256:
                    data = engine.store.artifact_path(run_id, ref).read_bytes()
                    media = "image/png" if ref.path.endswith(".png") else "application/octet-stream"
                    if ref.path.endswith(".json"):
                        media = "application/json"
                    elif ref.path.endswith(".txt"):
                        media = "text/plain"
                    return Response(
                        content=data,
                        media_type=media,
                        headers={"Cache-Control": "public, max-age=31536000, immutable"},
                    )
        raise ApiError("not_found", f"no artifact with hash {sha256[:12]}")

    @app.post("/ingest", status_code=201)
    def ingest(body: IngestBody):
        if qc_store is None:
            raise ApiError("validation", "QC store is not configured")
        source = imagery_source or build_imagery_source(config)
        ingest_cfg = config.ingest
        items = []
        for loc in body.locations:
            req = AcquisitionRequest(
                latitude=float(loc["lat"]),
                longitude=float(loc["lon"]),
                headings=tuple(body.headings or ingest_cfg.get("headings", (0, 90, 180, 270))),
                pitch=body.pitch if body.pitch is not None else ingest_cfg.get("pitch", 0.0),
                fov=body.fov if body.fov is not None else ingest_cfg.get("fov", 90.0),
                size=body.size or ingest_cfg.get("size", 1024),
            )
            try:
                scenes = fetch_views(req, source)
            except NoImageryError as exc:
                raise ApiError("not_found", str(exc)) from exc
            item = qc_store.enqueue_qc(scenes, location_id=loc.get("location_id"))
            items.append(_qc_view(item))
        return items

    def _qc_view(item) -> dict:
        return {
            "item_id": item.item_id,
            "location_id": item.location_id,
            "version": item.version,
            "candidates": [s.metadata() for s in item.candidates],
            "chosen": item.chosen,
            "reviewer": item.reviewer,
            "decided_at": item.decided_at,
        }

    @app.get("/qc")
    def qc_items():
        if qc_store is None:
            raise ApiError("validation", "QC store is not configured")
        return [_qc_view(item) for item in qc_store.list_items()]

    @app.post("/qc/{item_id}/choice")
    def qc_choice(item_id: str, body: QcChoiceBody):
        if qc_store is None:
            raise ApiError("validation", "QC store is not configured")
        try:
            item = qc_store.get_item(item_id)
            decided = qc_store.record_choice(item, body.scene_id, body.reviewer)
        except UnknownSceneError as exc:
            raise ApiError("validation", str(exc)) from exc
        except AlreadyDecidedError as exc:
            raise ApiError("illegal_transition", str(exc)) from exc
        except KeyError as exc:
            raise ApiError("not_found", str(exc)) from exc
        return _qc_view(decided)

    @app.get("/reports/accuracy")
    def accuracy_report(labels_path: str, runs_dir: str | None = None):
        try:
            labels = read_gold_labels(labels_path)
        except FileNotFoundError as exc:
            raise ApiError("not_found", str(exc)) from exc
        picks: dict[str, str] = {}
        target = engine if runs_dir is None else Engine(runs_dir, engine.providers, engine.config)
        for run_id in target.list_runs():
            run = target.get_run(run_id)
            if run.selected:
                picks[run_id] = run.selected
        try:
            report = evaluator_accuracy(labels, picks)
        except MissingPicksError as exc:
            raise ApiError("validation", str(exc)) from exc
        return report.to_dict()

    ui_dir = Path(config.ui_dir) if config.ui_dir else None
    if ui_dir and ui_dir.exists():  # pragma: no cover - optional static hosting
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
