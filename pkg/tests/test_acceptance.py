"""Acceptance suite.

One test per acceptance criterion; each prints a PASS line on success
(run with `pytest tests/test_acceptance.py -v -s` to see them). The whole
module runs headless: mock providers only, no network, no frontend.
"""

import json
import math
import random
import socket
import time
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from bikescape.agents import generate_candidates, generate_highlight
from bikescape.domain import (
    BoundaryKind,
    CandidateDesign,
    LaneDescription,
    Stage,
    get_scenario,
    scenario_catalog,
)
from bikescape.evaluator import (
    apply_mask,
    cosine_similarity,
    evaluate_pool,
    mask_candidate,
    rank_pool,
    top_k,
)
from bikescape.imaging import image_digest
from bikescape.orchestrator import Engine, EngineConfig, RunState, replay
from bikescape.providers import (
    EmbeddingVector,
    HistogramEmbedder,
    MockImageEditor,
    MockSegmenter,
    StaticJudge,
    mock_provider_set,
)
from bikescape.providers.base import ComplianceJudge, ImageEmbedder
from bikescape.references import reference_for_scenario
from bikescape.service.cli import main as cli_main

from conftest import make_image, make_scene
import test_orchestrator as machine_helpers


def _announce(line: str) -> None:
    print(f"\nACCEPTANCE PASS: {line}")


# ---------------------------------------------------------------------------
# 1. Mock end-to-end determinism
# ---------------------------------------------------------------------------


def _normalized_log(path: Path) -> list[dict]:
    events = [json.loads(line) for line in path.read_text().splitlines() if line]
    for event in events:
        event.pop("ts", None)
    return events


def _tree(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()
    }


def test_mock_end_to_end_determinism(tmp_path):
    """Two `run --mock` invocations on the same scene+scenario are byte-identical
    (event log compared modulo timestamps) and finish in under five seconds."""
    from bikescape.imaging import save_png

    scene_path = tmp_path / "scene.png"
    save_png(make_image(424, 256), scene_path)
    runner = CliRunner()

    started = time.perf_counter()
    results = []
    for workdir in (tmp_path / "a", tmp_path / "b"):
        workdir.mkdir()
        result = runner.invoke(
            cli_main,
            [
                "run", "--scene", str(scene_path), "--scenario", "3",
                "--pool-size", "6", "--seed", "0", "--mock", "--workdir", str(workdir),
            ],
        )
        assert result.exit_code == 0, result.output
        results.append(workdir)
    elapsed = time.perf_counter() - started
    assert elapsed < 5.0, f"two mock runs took {elapsed:.2f}s"

    runs_a = list((results[0] / "runs").iterdir())
    runs_b = list((results[1] / "runs").iterdir())
    assert len(runs_a) == len(runs_b) == 1
    assert runs_a[0].name == runs_b[0].name, "run ids must be deterministic"

    tree_a, tree_b = _tree(runs_a[0]), _tree(runs_b[0])
    assert set(tree_a) == set(tree_b)
    for rel in tree_a:
        if rel == "run.log":
            assert _normalized_log(runs_a[0] / rel) == _normalized_log(runs_b[0] / rel)
        else:
            assert tree_a[rel] == tree_b[rel], f"artifact {rel} differs between runs"
    _announce(f"mock e2e determinism: {len(tree_a)} files byte-identical, {elapsed:.2f}s < 5s")


# ---------------------------------------------------------------------------
# 2. Re-rank oracle equivalence
# ---------------------------------------------------------------------------


class _RandomTableEmbedder(ImageEmbedder):
    """Random (but fixed per digest) vectors standing in for CLIP embeddings."""

    def __init__(self, rng: np.random.Generator, dim: int = 8):
        self.rng = rng
        self.dim = dim
        self.table: dict[str, tuple] = {}

    def embed(self, image):
        key = image_digest(image)
        if key not in self.table:
            self.table[key] = tuple(self.rng.uniform(-1.0, 1.0, self.dim))
        return EmbeddingVector(values=self.table[key])


def _oracle_order(candidates, reference_masked, segmenter, embedder):
    ref = embedder.embed(reference_masked).values
    scored = []
    for cand in candidates:
        masked, _, _ = mask_candidate(cand.image, segmenter)
        vec = embedder.embed(masked).values
        dot = sum(x * y for x, y in zip(vec, ref))
        sim = dot / (math.sqrt(sum(x * x for x in vec)) * math.sqrt(sum(y * y for y in ref)))
        scored.append((cand.candidate_id, sim))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored


def test_rerank_matches_brute_force_oracle():
    """For 100 randomized pools (sizes 5-10, random embeddings, duplicate-image
    ties) rank_pool ordering equals an independent brute-force sort, and
    top_k(·,3) returns exactly the 3 largest similarities."""
    rng = np.random.default_rng(20260810)
    segmenter = MockSegmenter()
    for trial in range(100):
        size = int(rng.integers(5, 11))
        embedder = _RandomTableEmbedder(rng)
        images = []
        for i in range(size):
            if i >= 2 and rng.random() < 0.25:
                images.append(images[int(rng.integers(0, i))])  # forced tie
            else:
                images.append(make_image(int(rng.integers(0, 2**31)), 24))
        candidates = [
            CandidateDesign(candidate_id=f"c{i:02d}", run_id="run", stage=Stage.FINAL, image=img)
            for i, img in enumerate(images)
        ]
        reference = make_image(int(rng.integers(0, 2**31)), 24)
        ref_masked, _, _ = mask_candidate(reference, segmenter)

        pool = rank_pool(candidates, ref_masked, segmenter=segmenter, embedder=embedder)
        oracle = _oracle_order(candidates, ref_masked, segmenter, embedder)
        assert [e.candidate_id for e in pool.entries] == [cid for cid, _ in oracle], f"trial {trial}"
        for entry, (_, sim) in zip(pool.entries, oracle):
            assert abs(entry.similarity - sim) < 1e-12
        assert top_k(pool, 3) == [cid for cid, _ in oracle[:3]]
    _announce("re-rank oracle equivalence over 100 randomized pools (exact ordering)")


# ---------------------------------------------------------------------------
# 3. Cosine correctness
# ---------------------------------------------------------------------------


def test_cosine_properties_over_1000_pairs():
    """1,000 random non-zero pairs: bounded in [-1,1]±1e-12, symmetric, 1 for
    identical vectors, and common positive scaling never changes ranking."""
    rng = np.random.default_rng(7)
    for _ in range(1000):
        dim = int(rng.integers(2, 32))
        a = EmbeddingVector(values=tuple(rng.uniform(-10, 10, dim) + 0.01))
        b = EmbeddingVector(values=tuple(rng.uniform(-10, 10, dim) + 0.01))
        value = cosine_similarity(a, b)
        assert -1.0 - 1e-12 <= value <= 1.0 + 1e-12
        assert value == cosine_similarity(b, a)
        assert abs(cosine_similarity(a, a) - 1.0) <= 1e-12

    for trial in range(20):
        dim = 8
        ref = EmbeddingVector(values=tuple(rng.uniform(0.1, 1.0, dim)))
        vectors = [EmbeddingVector(values=tuple(rng.uniform(0.1, 1.0, dim))) for _ in range(10)]
        lam = float(rng.uniform(0.001, 1000.0))
        base_rank = sorted(
            range(10), key=lambda i: (-cosine_similarity(vectors[i], ref), i)
        )
        scaled = [EmbeddingVector(values=tuple(lam * v for v in vec.values)) for vec in vectors]
        scaled_ref = EmbeddingVector(values=tuple(lam * v for v in ref.values))
        scaled_rank = sorted(
            range(10), key=lambda i: (-cosine_similarity(scaled[i], scaled_ref), i)
        )
        assert base_rank == scaled_rank, f"scaling by {lam} changed ranking (trial {trial})"
    _announce("cosine correctness over 1,000 pairs + scale-invariant ranking")


# ---------------------------------------------------------------------------
# 4. Masking locality
# ---------------------------------------------------------------------------


def test_masking_locality_over_50_pairs():
    """50 random image pairs identical inside a random mask and arbitrary
    outside: masked outputs pixel-identical, histogram similarities 1±1e-12."""
    rng = np.random.default_rng(11)
    embedder = HistogramEmbedder()
    for trial in range(50):
        size = int(rng.integers(16, 64))
        inside = rng.integers(0, 255, (size, size, 3), dtype=np.uint8)
        outside_a = rng.integers(0, 255, (size, size, 3), dtype=np.uint8)
        outside_b = rng.integers(0, 255, (size, size, 3), dtype=np.uint8)
        mask = (rng.random((size, size)) > rng.uniform(0.2, 0.8)).astype(np.uint8)

        img_a = np.where(mask[:, :, None].astype(bool), inside, outside_a)
        img_b = np.where(mask[:, :, None].astype(bool), inside, outside_b)
        masked_a = apply_mask(img_a, mask)
        masked_b = apply_mask(img_b, mask)
        assert np.array_equal(masked_a, masked_b), f"trial {trial}"
        sim = cosine_similarity(embedder.embed(masked_a), embedder.embed(masked_b))
        assert abs(sim - 1.0) <= 1e-12, f"trial {trial}: similarity {sim}"
    _announce("masking locality over 50 constructed pairs (pixel-identical, sim=1)")


# ---------------------------------------------------------------------------
# 5. Pipeline gating properties
# ---------------------------------------------------------------------------


def test_pipeline_gating(tmp_path):
    """pool_size outside [5,10] rejected; compliance judged only on the
    advanced top-3; an absent lane yields an Excluded run with zero downstream
    artifacts."""
    scene = make_scene(77, 96)
    highlight = generate_highlight(
        scene, LaneDescription(present=True, raw_text="lane"), "green", MockImageEditor(0)
    )
    for bad in (4, 11):
        with pytest.raises(ValueError):
            generate_candidates(highlight, "final", bad, MockImageEditor(0))
    engine = Engine(tmp_path / "r1", mock_provider_set(0), EngineConfig(seed=0))
    with pytest.raises(ValueError):
        engine.create_run(scene, 1, pool_size=4)

    class CountingJudge(ComplianceJudge):
        def __init__(self):
            self.digests = []

        def judge(self, image, prompt):
            self.digests.append(image_digest(image))
            return "yes"

    candidates = [
        CandidateDesign(candidate_id=f"c{i:02d}", run_id="run", stage=Stage.FINAL, image=make_image(500 + i, 24))
        for i in range(6)
    ]
    judge = CountingJudge()
    report = evaluate_pool(
        candidates, get_scenario(2), "final", reference_for_scenario(2),
        segmenter=MockSegmenter(), embedder=HistogramEmbedder(), judge=judge,
    )
    assert len(judge.digests) == 3
    by_id = {c.candidate_id: image_digest(c.image) for c in candidates}
    assert sorted(judge.digests) == sorted(by_id[cid] for cid in report.advanced)
    outside = set(by_id) - set(report.advanced)
    assert all(by_id[cid] not in judge.digests for cid in outside)

    excl_engine = Engine(
        tmp_path / "r2", mock_provider_set(0, lane_absent=True), EngineConfig(seed=0)
    )
    run = excl_engine.create_run(make_scene(78, 96), 1)
    final = excl_engine.run_to_completion(run.run_id)
    assert final.state is RunState.EXCLUDED
    files = {
        str(p.relative_to(excl_engine.store.run_dir(run.run_id)))
        for p in excl_engine.store.run_dir(run.run_id).rglob("*")
        if p.is_file()
    }
    assert files == {"scene.png", "locator.json", "run.log"}
    _announce("pipeline gating: pool bounds, top-3-only judging, exclusion")


# ---------------------------------------------------------------------------
# 6. State-machine exhaustiveness
# ---------------------------------------------------------------------------


def test_state_machine_exhaustiveness(tmp_path):
    """Every (state, event) pair transitions or reports illegal_transition;
    200 random legal event sequences replay exactly; the round budget holds
    under an adversarial all-"no" judge."""
    from bikescape.orchestrator import IllegalTransitionError, PipelineRun

    pairs = 0
    legal = 0
    for state in RunState:
        run = machine_helpers.run_in_state(state)
        for probe in machine_helpers.probe_events():
            pairs += 1
            try:
                out = machine_helpers.apply_event(run, probe)
                legal += 1
                assert isinstance(out, PipelineRun)
            except IllegalTransitionError:
                pass
            except machine_helpers.UnknownCandidateError:
                legal += 1  # payload-level validation on a legal edge
    assert pairs >= len(RunState) * 20

    rng = random.Random(99)
    for _ in range(200):
        events, final = machine_helpers.random_walk(rng)
        assert replay(events) == final
        assert final.round <= final.max_rounds
        assert final.revision <= final.max_rounds

    engine = Engine(
        tmp_path / "adv", mock_provider_set(0, judge=StaticJudge("no")),
        EngineConfig(seed=0, max_rounds=3),
    )
    run = engine.create_run(make_scene(80, 96), 4)
    final = engine.run_to_completion(run.run_id)
    assert final.round == 3
    assert final.round <= final.max_rounds
    assert final.disposition == "exhausted"
    assert final.state is RunState.AWAITING_EXPERT_PICK
    _announce(
        f"state machine: {pairs} (state,event) pairs total ({legal} legal), "
        "200 replayed walks, round budget held"
    )


# ---------------------------------------------------------------------------
# 7. Metrics fidelity
# ---------------------------------------------------------------------------


def test_metrics_fidelity():
    """Planted match counts reproduce the reference per-scenario accuracies
    exactly at one-decimal formatting; accept_case honors its boundaries."""
    from bikescape.metrics import ComplianceRecord, FidelityScore, accept_case, composite_fidelity, evaluator_accuracy
    from test_metrics import TABLE_1_MATCHES, TABLE_1_PERCENT, planted_dataset

    labels, picks = planted_dataset(TABLE_1_MATCHES, cases_per_scenario=200)
    report = evaluator_accuracy(labels, picks)
    assert report.percent_by_scenario() == TABLE_1_PERCENT

    boundary = FidelityScore(5, 4, 3)  # equal weights -> composite exactly 4.0
    clean = ComplianceRecord(hard={"h": True}, soft={"s": True})
    assert composite_fidelity(boundary) == pytest.approx(4.0)
    assert accept_case(boundary, clean) is True
    flagged = FidelityScore(5, 5, 4, background_change_flag=True)
    assert accept_case(flagged, clean) is False
    assert accept_case(FidelityScore(5, 5, 5), ComplianceRecord(hard={"h": False})) is False
    _announce("metrics fidelity: planted accuracies {95.5..97.0} exact, accept_case boundaries")


# ---------------------------------------------------------------------------
# 8. Template fidelity
# ---------------------------------------------------------------------------


def test_template_fidelity():
    """Shipped templates contain their anchor phrases verbatim and render
    cleanly with complete variable maps."""
    import re

    from bikescape.templating import load_template

    anchors = {
        "locator": "describe precisely the physical location",
        "optimizer": "Output only the optimized prompt",
        "highlight": "into a {COLOR}-painted lane",
        "compliance": "a single lowercase word, exactly",
    }
    fills = {
        "locator": {},
        "optimizer": {"EXEMPLARS": "e", "BOUNDARY_CLAUSES": "b", "USER_PROMPT": "u"},
        "highlight": {"COLOR": "green"},
        "compliance": {"CHECKLIST": "c", "FINAL_PROMPT": "f"},
    }
    placeholder = re.compile(r"\{[A-Z][A-Z0-9_]*\}")
    for name, anchor in anchors.items():
        template = load_template(name)
        assert anchor in template.system_text + "\n" + template.user_text, name
        rendered = template.render(fills[name])
        assert not placeholder.search(rendered.system), name
        assert not placeholder.search(rendered.user), name
    _announce("template fidelity: 4 anchor phrases verbatim, rendering leaves no placeholders")


# ---------------------------------------------------------------------------
# 9. Catalog fidelity
# ---------------------------------------------------------------------------


def test_catalog_fidelity():
    """scenario_catalog() matches all 8 rows field-for-field."""
    expected = [
        (1, BoundaryKind.DIRECT_MOVING_LANE, 0.0, BoundaryKind.DIRECT_PARKED_CARS, 0.0),
        (2, BoundaryKind.DIRECT_MOVING_LANE, 0.0, BoundaryKind.PAINTED_BUFFER, 3.0),
        (3, BoundaryKind.DIRECT_MOVING_LANE, 0.0, BoundaryKind.BOLLARD_BUFFER, 1.5),
        (4, BoundaryKind.DIRECT_MOVING_LANE, 0.0, BoundaryKind.ARMADILLO_BUFFER, 1.5),
        (5, BoundaryKind.DIRECT_MOVING_LANE, 0.0, BoundaryKind.DIRECT_EDGE, 0.0),
        (6, BoundaryKind.PAINTED_BUFFER, 3.0, BoundaryKind.DIRECT_EDGE, 0.0),
        (7, BoundaryKind.BOLLARD_BUFFER, 1.5, BoundaryKind.DIRECT_EDGE, 0.0),
        (8, BoundaryKind.ARMADILLO_BUFFER, 1.5, BoundaryKind.DIRECT_EDGE, 0.0),
    ]
    catalog = scenario_catalog()
    assert len(catalog) == 8
    for scenario, (sid, lk, lw, rk, rw) in zip(catalog, expected):
        assert scenario.scenario_id == sid
        assert scenario.left.kind is lk and scenario.left.buffer_width_ft == lw
        assert scenario.right.kind is rk and scenario.right.buffer_width_ft == rw
        assert scenario.reference_image_id
    _announce("catalog fidelity: all 8 rows match field-for-field")


# ---------------------------------------------------------------------------
# 10. Headless, offline, no secondary component
# ---------------------------------------------------------------------------


def test_headless_offline_run(tmp_path, monkeypatch):
    """The full mock pipeline completes with socket creation disabled and no
    frontend built — the suite needs neither network nor the UI."""

    def _blocked(*args, **kwargs):
        raise AssertionError("network use attempted in offline acceptance run")

    monkeypatch.setattr(socket, "socket", _blocked)
    engine = Engine(tmp_path / "runs", mock_provider_set(0), EngineConfig(seed=0))
    run = engine.create_run(make_scene(90, 128), 7)
    final = engine.run_to_completion(run.run_id)
    assert final.state is RunState.FINALIZED
    assert final.selected is not None
    assert engine.store.load(run.run_id) == final
    _announce("headless offline e2e with sockets disabled (no secondary component)")
