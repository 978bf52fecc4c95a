import json

import numpy as np
import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from bikescape.imaging import b64_of, png_bytes, save_png
from bikescape.ingest import QCStore, SyntheticImagerySource
from bikescape.orchestrator import Engine
from bikescape.providers import mock_provider_set
from bikescape.service.api import create_app
from bikescape.service.cli import main as cli_main
from bikescape.service.config import load_config

from conftest import make_image


@pytest.fixture
def client(tmp_path):
    config = load_config()
    engine = Engine(tmp_path / "runs", mock_provider_set(0), config.engine_config())
    app = create_app(
        engine, QCStore(tmp_path / "qc"), config, imagery_source=SyntheticImagerySource()
    )
    return TestClient(app)


def _create_run(client, scenario=2, seed=21):
    b64 = b64_of(png_bytes(make_image(seed, 96)))
    response = client.post("/runs", json={"scenario_id": scenario, "scene_png_b64": b64})
    assert response.status_code == 201
    return response.json()


def _drive_to(client, run_id, target_states):
    for _ in range(30):
        view = client.get(f"/runs/{run_id}").json()
        if view["state"] in target_states:
            return view
        if view["checkpoint"] and view["checkpoint"] != "selection":
            client.post(
                f"/runs/{run_id}/checkpoints/{view['checkpoint']}",
                json={"decision": "approved", "editor": "test"},
            )
        else:
            client.post(f"/runs/{run_id}/advance", json={})
    raise AssertionError(f"run never reached {target_states}")


class TestScenariosEndpoint:
    def test_catalog_export(self, client):
        data = client.get("/scenarios").json()
        assert len(data) == 8
        assert data[1]["right"]["kind"] == "painted_buffer"
        assert data[1]["right"]["buffer_width_ft"] == 3.0

    def test_matches_shipped_asset(self, client):
        from importlib import resources

        shipped = json.loads(
            resources.files("bikescape").joinpath("assets", "scenarios.json").read_text()
        )
        assert client.get("/scenarios").json() == shipped


class TestRunEndpoints:
    def test_create_and_get(self, client):
        view = _create_run(client)
        assert view["state"] == "Created"
        assert view["version"] == 1
        fetched = client.get(f"/runs/{view['run_id']}").json()
        assert fetched["run_id"] == view["run_id"]

    def test_scenario_9_rejected(self, client):
        response = client.post(
            "/runs", json={"scenario_id": 9, "scene_png_b64": b64_of(png_bytes(make_image(1)))}
        )
        assert response.status_code == 400
        assert response.json()["code"] == "validation"

    def test_unknown_run_404(self, client):
        response = client.get("/runs/run-missing")
        assert response.status_code == 404
        assert response.json()["code"] == "not_found"

    def test_checkpoint_on_wrong_state_409(self, client):
        view = _create_run(client)
        response = client.post(
            f"/runs/{view['run_id']}/checkpoints/highlight", json={"decision": "approved"}
        )
        assert response.status_code == 409
        assert response.json()["code"] == "illegal_transition"

    def test_stale_version_conflict(self, client):
        view = _create_run(client)
        response = client.post(
            f"/runs/{view['run_id']}/advance", json={"expected_version": view["version"] + 7}
        )
        assert response.status_code == 409

    def test_candidates_gallery_marks_top3(self, client):
        view = _create_run(client, scenario=3)
        _drive_to(client, view["run_id"], {"AwaitingExpertPick"})
        gallery = client.get(f"/runs/{view['run_id']}/candidates").json()
        assert len(gallery["candidates"]) == 6
        assert sum(c["advanced"] for c in gallery["candidates"]) == 3
        assert sum(c["agent_selected"] for c in gallery["candidates"]) == 1
        for cand in gallery["candidates"]:
            assert cand["image_url"].startswith("/artifacts/")

    def test_expert_concurrence_finalizes(self, client):
        view = _create_run(client, scenario=4)
        state = _drive_to(client, view["run_id"], {"AwaitingExpertPick"})
        response = client.post(
            f"/runs/{view['run_id']}/expert-pick",
            json={"candidate_id": state["agent_selection"], "editor": "expert"},
        )
        assert response.json()["state"] == "Finalized"

    def test_disagreement_with_revise_target(self, client):
        view = _create_run(client, scenario=5)
        state = _drive_to(client, view["run_id"], {"AwaitingExpertPick"})
        other = next(c for c in state["advanced"] if c != state["agent_selection"])
        response = client.post(
            f"/runs/{view['run_id']}/expert-pick",
            json={"candidate_id": other, "editor": "expert", "revise": "prompt"},
        )
        body = response.json()
        assert body["state"] == "PromptOptimized"
        assert body["revision"] == 1

    def test_pick_outside_advanced_rejected(self, client):
        view = _create_run(client, scenario=6)
        _drive_to(client, view["run_id"], {"AwaitingExpertPick"})
        response = client.post(
            f"/runs/{view['run_id']}/expert-pick", json={"candidate_id": "r1-f99"}
        )
        assert response.status_code == 400

    def test_artifact_served_by_hash_with_immutable_cache(self, client):
        view = _create_run(client, scenario=1)
        _drive_to(client, view["run_id"], {"AwaitingExpertPick"})
        run = client.get(f"/runs/{view['run_id']}").json()
        sha = run["artifacts"]["highlight.png"]["sha256"]
        response = client.get(f"/artifacts/{sha}")
        assert response.status_code == 200
        assert "immutable" in response.headers["cache-control"]
        assert response.headers["content-type"] == "image/png"

    def test_checkpoint_reapproval_idempotent_shape(self, client):
        view = _create_run(client, scenario=2)
        client.post(f"/runs/{view['run_id']}/advance", json={})
        first = client.post(
            f"/runs/{view['run_id']}/checkpoints/description", json={"decision": "approved"}
        )
        assert first.status_code == 200
        again = client.post(
            f"/runs/{view['run_id']}/checkpoints/description", json={"decision": "approved"}
        )
        assert again.status_code == 409  # state moved on; surfaced as illegal transition


class TestQcEndpoints:
    def test_ingest_and_choice_flow(self, client):
        response = client.post(
            "/ingest",
            json={"locations": [{"location_id": "L1", "lat": 42.37, "lon": -71.1}], "size": 128},
        )
        assert response.status_code == 201
        item = response.json()[0]
        assert len(item["candidates"]) == 4
        assert item["chosen"] is None

        listing = client.get("/qc").json()
        assert listing[0]["item_id"] == item["item_id"]

        chosen_scene = item["candidates"][2]["scene_id"]
        decided = client.post(
            f"/qc/{item['item_id']}/choice", json={"scene_id": chosen_scene, "reviewer": "r"}
        )
        assert decided.json()["chosen"] == chosen_scene

        double = client.post(
            f"/qc/{item['item_id']}/choice", json={"scene_id": chosen_scene, "reviewer": "r"}
        )
        assert double.status_code == 409

    def test_foreign_scene_choice_rejected(self, client):
        response = client.post(
            "/ingest", json={"locations": [{"location_id": "L2", "lat": 10.0, "lon": 20.0}], "size": 128}
        )
        item = response.json()[0]
        bad = client.post(f"/qc/{item['item_id']}/choice", json={"scene_id": "nope"})
        assert bad.status_code == 400


class TestCli:
    def test_run_mock_finalizes(self, tmp_path):
        scene_path = tmp_path / "scene.png"
        save_png(make_image(30, 128), scene_path)
        runner = CliRunner()
        result = runner.invoke(
            cli_main,
            [
                "run", "--scene", str(scene_path), "--scenario", "3",
                "--pool-size", "6", "--mock", "--workdir", str(tmp_path),
            ],
        )
        assert result.exit_code == 0, result.output
        assert "Finalized" in result.output
        run_dirs = list((tmp_path / "runs").iterdir())
        assert len(run_dirs) == 1
        assert (run_dirs[0] / "eval.json").exists()

    def test_run_scenario_out_of_range_is_usage_error(self, tmp_path):
        scene_path = tmp_path / "scene.png"
        save_png(make_image(31, 64), scene_path)
        runner = CliRunner()
        result = runner.invoke(
            cli_main, ["run", "--scene", str(scene_path), "--scenario", "9", "--mock"]
        )
        assert result.exit_code == 2
        assert "--scenario" in result.output

    def test_pool_size_out_of_range_rejected(self, tmp_path):
        scene_path = tmp_path / "scene.png"
        save_png(make_image(32, 64), scene_path)
        runner = CliRunner()
        result = runner.invoke(
            cli_main,
            ["run", "--scene", str(scene_path), "--scenario", "1", "--pool-size", "4", "--mock"],
        )
        assert result.exit_code == 2

    def test_ingest_command(self, tmp_path):
        manifest = tmp_path / "loc.csv"
        manifest.write_text("location_id,lat,lon,context_tag\nL1,42.0,-71.0,urban\n")
        runner = CliRunner()
        result = runner.invoke(
            cli_main,
            ["ingest", "--manifest", str(manifest), "--size", "64", "--mock", "--workdir", str(tmp_path)],
        )
        assert result.exit_code == 0, result.output
        assert "enqueued 1 QC item(s)" in result.output
        assert (tmp_path / "qc" / "qc.jsonl").exists()

    def test_report_command(self, tmp_path):
        scene_path = tmp_path / "scene.png"
        save_png(make_image(33, 128), scene_path)
        runner = CliRunner()
        run_result = runner.invoke(
            cli_main,
            ["run", "--scene", str(scene_path), "--scenario", "2", "--mock", "--workdir", str(tmp_path)],
        )
        assert run_result.exit_code == 0
        run_id = next((tmp_path / "runs").iterdir()).name
        selected = json.loads((tmp_path / "runs" / run_id / "eval.json").read_text())["selected"]

        labels = tmp_path / "gold.csv"
        labels.write_text(
            "case_id,scenario_id,correct_candidate_id\n" f"{run_id},2,{selected}\n"
        )
        report_result = runner.invoke(
            cli_main, ["report", "--labels", str(labels), "--runs", str(tmp_path / "runs")]
        )
        assert report_result.exit_code == 0, report_result.output
        assert "100.0" in report_result.output

    def test_eval_command(self, tmp_path):
        candidates = tmp_path / "cands"
        candidates.mkdir()
        for i in range(3):
            save_png(make_image(40 + i, 64), candidates / f"c{i}.png")
        runner = CliRunner()
        result = runner.invoke(
            cli_main,
            [
                "eval", "--candidates", str(candidates), "--scenario", "4",
                "--mock", "--out", str(tmp_path / "eval.json"),
            ],
        )
        assert result.exit_code == 0, result.output
        report = json.loads((tmp_path / "eval.json").read_text())
        assert len(report["entries"]) == 3
        assert report["disposition"] in ("selected", "regenerate", "exhausted")

    def test_resume_command_on_healthy_run(self, tmp_path):
        scene_path = tmp_path / "scene.png"
        save_png(make_image(50, 96), scene_path)
        runner = CliRunner()
        first = runner.invoke(
            cli_main,
            ["run", "--scene", str(scene_path), "--scenario", "1", "--mock", "--workdir", str(tmp_path)],
        )
        assert first.exit_code == 0
        run_id = next((tmp_path / "runs").iterdir()).name
        result = runner.invoke(
            cli_main, ["resume", "--run-id", run_id, "--mock", "--workdir", str(tmp_path)]
        )
        assert result.exit_code == 0
        assert "Finalized" in result.output
