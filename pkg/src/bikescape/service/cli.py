"""Command-line interface.

Subcommands: ingest, run, resume, eval, report, serve. The CLI executes the
same core operations as the HTTP API; exit status is 0 on success and nonzero
with a diagnostic on failure.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from ..domain import SceneSource, StreetScene, get_scenario
from ..imaging import load_image, sha256_hex
from ..ingest import QCStore, ingest_manifest, read_manifest
from ..metrics import MissingPicksError, evaluator_accuracy, read_gold_labels
from ..orchestrator import Engine, RunState
from ..providers.base import ProviderError
from ..references import reference_for_scenario
from .config import build_engine, build_imagery_source, build_provider_set, load_config

logger = logging.getLogger(__name__)


def _load_app_config(config_path: str | None, mock: bool, seed: int | None):
    overrides: dict = {}
    if mock:
        overrides["mode"] = "mock"
    if seed is not None:
        overrides["seed"] = seed
    return load_config(config_path, **overrides)


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Street-view bicycle-infrastructure design pipeline."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING)


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--headings", default="0,90,180,270", show_default=True)
@click.option("--size", default=1024, show_default=True, type=int)
@click.option("--pitch", default=None, type=float)
@click.option("--fov", default=None, type=float)
@click.option("--workdir", default=".", show_default=True, type=click.Path(file_okay=False))
@click.option("--mock", is_flag=True, help="Use the synthetic imagery source.")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
def ingest(manifest, headings, size, pitch, fov, workdir, mock, config_path) -> None:
    """Fetch multi-heading captures for each manifest location and enqueue QC."""
    config = _load_app_config(config_path, mock, None)
    try:
        heading_values = tuple(float(h) for h in headings.split(","))
    except ValueError:
        raise click.BadParameter("headings must be a comma-separated list of degrees")
    source = build_imagery_source(config)
    store = QCStore(Path(workdir) / config.qc_dir)
    locations = read_manifest(manifest)
    try:
        items = ingest_manifest(
            locations,
            source,
            store,
            headings=heading_values,
            pitch=pitch if pitch is not None else config.ingest.get("pitch", 0.0),
            fov=fov if fov is not None else config.ingest.get("fov", 90.0),
            size=size,
        )
    except ProviderError as err:
        _fail(f"acquisition failed: {err}")
    click.echo(f"enqueued {len(items)} QC item(s) from {len(locations)} location(s)")
    for item in items:
        click.echo(f"  {item.item_id}: {len(item.candidates)} candidate view(s)")


def _scene_from_file(path: str) -> StreetScene:
    image = load_image(path)
    return StreetScene(
        scene_id=f"{Path(path).stem}-{sha256_hex(image.tobytes())[:10]}",
        latitude=0.0,
        longitude=0.0,
        heading=0.0,
        pitch=0.0,
        fov=0.0,
        image=image,
        source=SceneSource.LOCAL_FILE,
    )


@main.command()
@click.option("--scene", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--scenario", required=True, type=click.IntRange(1, 8))
@click.option("--pool-size", default=None, type=click.IntRange(5, 10))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--color", default=None)
@click.option("--user-prompt", default=None)
@click.option("--run-id", default=None)
@click.option("--workdir", default=".", show_default=True, type=click.Path(file_okay=False))
@click.option("--mock", is_flag=True, help="Use deterministic mock providers.")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
def run(scene, scenario, pool_size, seed, color, user_prompt, run_id, workdir, mock, config_path) -> None:
    """Execute one full pipeline run headlessly (auto-approved checkpoints)."""
    config = _load_app_config(config_path, mock, seed)
    engine = build_engine(config, workdir)
    try:
        created = engine.create_run(
            _scene_from_file(scene),
            scenario,
            user_prompt=user_prompt,
            run_id=run_id,
            pool_size=pool_size,
            color=color,
        )
        final = engine.run_to_completion(created.run_id)
    except (ProviderError, FileExistsError, ValueError) as err:
        _fail(str(err))
    click.echo(f"run {final.run_id}: {final.state.value}")
    if final.selected:
        click.echo(f"selected candidate: {final.selected}")
    if final.state is RunState.ERRORED:
        _fail(f"run errored: {final.error} (resume with `bikescape resume --run-id {final.run_id}`)")
    click.echo(f"run directory: {engine.store.run_dir(final.run_id)}")


@main.command()
@click.option("--run-id", required=True)
@click.option("--workdir", default=".", show_default=True, type=click.Path(file_okay=False))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--mock", is_flag=True)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
def resume(run_id, workdir, seed, mock, config_path) -> None:
    """Resume an errored run; retries only the failed stage."""
    config = _load_app_config(config_path, mock, seed)
    engine = build_engine(config, workdir)
    try:
        current = engine.get_run(run_id)
        if current.state is RunState.ERRORED:
            engine.resume(run_id)
        final = engine.run_to_completion(run_id)
    except Exception as err:
        _fail(str(err))
    click.echo(f"run {run_id}: {final.state.value}")


@main.command("eval")
@click.option("--candidates", "candidates_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--scenario", required=True, type=click.IntRange(1, 8))
@click.option("--final-prompt", default="", help="Prompt text the designs must satisfy.")
@click.option("--reference", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default="eval.json", show_default=True, type=click.Path(dir_okay=False))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--mock", is_flag=True)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
def eval_cmd(candidates_dir, scenario, final_prompt, reference, out, seed, mock, config_path) -> None:
    """Re-rank a directory of candidate PNGs against a reference design."""
    from ..domain import CandidateDesign, Stage
    from ..evaluator import evaluate_pool
    from ..imaging import image_from_bytes

    config = _load_app_config(config_path, mock, seed)
    providers = build_provider_set(config)
    scenario_obj = get_scenario(scenario)
    paths = sorted(Path(candidates_dir).glob("*.png"))
    if not paths:
        _fail(f"no candidate PNGs in {candidates_dir}")
    candidates = [
        CandidateDesign(candidate_id=p.stem, run_id="adhoc", stage=Stage.FINAL, image=load_image(p))
        for p in paths
    ]
    reference_image = (
        image_from_bytes(Path(reference).read_bytes())
        if reference
        else reference_for_scenario(scenario)
    )
    try:
        report = evaluate_pool(
            candidates,
            scenario_obj,
            final_prompt or f"Bike lane design. {scenario_obj.prompt_fragment}",
            reference_image,
            segmenter=providers.segmenter,
            embedder=providers.embedder,
            judge=providers.judge,
            fill=tuple(config.pipeline.get("mask_fill", (128, 128, 128))),
        )
    except ProviderError as err:
        _fail(str(err))
    Path(out).write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    click.echo(f"ranked {len(candidates)} candidate(s); report written to {out}")
    for entry in report.pool.entries:
        sim = "n/a" if entry.similarity is None else f"{entry.similarity:.4f}"
        click.echo(f"  {entry.candidate_id}: {sim}")


@main.command()
@click.option("--labels", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--runs", "runs_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--json", "json_out", default=None, type=click.Path(dir_okay=False))
@click.option("--seed", default=0, type=int)
def report(labels, runs_dir, json_out, seed) -> None:
    """Score evaluator picks in a runs directory against gold labels."""
    config = _load_app_config(None, True, seed)
    engine = Engine(runs_dir, build_provider_set(config), config.engine_config())
    picks: dict[str, str] = {}
    for run_id in engine.list_runs():
        loaded = engine.get_run(run_id)
        if loaded.selected:
            picks[run_id] = loaded.selected
    try:
        table = evaluator_accuracy(read_gold_labels(labels), picks)
    except (MissingPicksError, ValueError) as err:
        _fail(str(err))
    click.echo(table.format_table())
    if json_out:
        Path(json_out).write_text(table.to_json())


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--workdir", default=".", show_default=True, type=click.Path(file_okay=False))
@click.option("--mock", is_flag=True)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
def serve(host, port, workdir, mock, config_path) -> None:
    """Start the HTTP API (and the review UI, when built and configured)."""
    import uvicorn

    from .api import create_app

    config = _load_app_config(config_path, mock, None)
    engine = build_engine(config, workdir)
    qc_store = QCStore(Path(workdir) / config.qc_dir)
    app = create_app(engine, qc_store, config)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
