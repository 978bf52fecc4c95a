"""Run persistence: JSON-lines event logs plus content-hashed artifacts.

Layout per run (documented, bit-stable):

    runs/<run_id>/
      run.log            # the event log; replaying it IS the run state
      scene.png          # input scene
      locator.json       # lane description
      prompt.txt         # optimized prompt text
      highlight.png      # cascade step one
      candidates/<id>.png
      masks/<id>.png
      eval.json          # evaluation report

Artifacts superseded by edits or revisions get versioned names (`prompt.v2.txt`)
and are marked stale in the run's artifact map — never deleted.
"""

from __future__ import annotations

import os
from pathlib import Path

from ..imaging import sha256_hex
from .machine import ArtifactRef, PipelineRun, RunEvent, replay


class RunNotFoundError(KeyError):
    pass


class IntegrityError(RuntimeError):
    """An artifact's bytes no longer match the hash recorded in the log."""

    def __init__(self, artifact_name: str, message: str):
        self.artifact_name = artifact_name
        super().__init__(message)


class RunStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def run_dir(self, run_id: str) -> Path:
        return self.root / run_id

    def log_path(self, run_id: str) -> Path:
        return self.run_dir(run_id) / "run.log"

    def exists(self, run_id: str) -> bool:
        return self.log_path(run_id).exists()

    def list_runs(self) -> list[str]:
        if not self.root.exists():
            return []
        return sorted(p.name for p in self.root.iterdir() if (p / "run.log").exists())

    def append_event(self, run_id: str, event: RunEvent) -> None:
        path = self.log_path(run_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a") as fh:
            fh.write(event.to_json() + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def read_events(self, run_id: str) -> list[RunEvent]:
        path = self.log_path(run_id)
        if not path.exists():
            raise RunNotFoundError(f"unknown run {run_id!r}")
        import json

        return [
            RunEvent.from_dict(json.loads(line))
            for line in path.read_text().splitlines()
            if line.strip()
        ]

    def write_artifact(self, run_id: str, name: str, data: bytes) -> ArtifactRef:
        """Write artifact bytes under the run directory; path mirrors the name."""
        path = self.run_dir(run_id) / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        return ArtifactRef(name=name, sha256=sha256_hex(data), path=name)

    def artifact_path(self, run_id: str, ref_or_name: ArtifactRef | str) -> Path:
        rel = ref_or_name.path if isinstance(ref_or_name, ArtifactRef) else ref_or_name
        return self.run_dir(run_id) / rel

    def read_artifact(self, run: PipelineRun, name: str) -> bytes:
        ref = run.artifacts.get(name)
        if ref is None:
            raise KeyError(f"run {run.run_id} has no artifact {name!r}")
        data = self.artifact_path(run.run_id, ref).read_bytes()
        if sha256_hex(data) != ref.sha256:
            raise IntegrityError(name, f"artifact {name!r} bytes do not match recorded hash")
        return data

    def verify_artifacts(self, run: PipelineRun) -> None:
        for name, ref in run.artifacts.items():
            path = self.artifact_path(run.run_id, ref)
            if not path.exists():
                raise IntegrityError(name, f"artifact {name!r} is missing from the run directory")
            if sha256_hex(path.read_bytes()) != ref.sha256:
                raise IntegrityError(name, f"artifact {name!r} bytes do not match recorded hash")

    def load(self, run_id: str) -> PipelineRun:
        """Replay the event log and verify every referenced artifact."""
        run = replay(self.read_events(run_id))
        self.verify_artifacts(run)
        return run

    def persist(self, run_id: str, events: list[RunEvent]) -> None:
        """Append any events not yet on disk (idempotent by sequence number)."""
        have = 0
        if self.exists(run_id):
            have = len(self.read_events(run_id))
        for event in events[have:]:
            self.append_event(run_id, event)
