"""Application configuration.

A single JSON (or TOML, on Python 3.11+) file configures provider mode and
endpoints, pipeline knobs, ingest defaults, and model bindings. Secrets are
never stored in config — only the names of environment variables that hold
them. Packaged defaults live in `assets/defaults.json`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ..ingest import ImagerySource, StaticImageryClient, SyntheticImagerySource
from ..orchestrator.engine import Engine, EngineConfig
from ..providers.base import ProviderConfig, ProviderSet
from ..providers.http import http_provider_set
from ..providers.mock import mock_provider_set
from ..providers.fixtures import replay_provider_set

CAPABILITIES = ("editor", "describer", "embedder", "segmenter", "judge")


@dataclass
class AppConfig:
    mode: str = "mock"  # mock | replay | live
    seed: int | None = 0
    runs_dir: str = "runs"
    qc_dir: str = "qc"
    fixtures_dir: str = "fixtures"
    pipeline: dict = field(default_factory=dict)
    ingest: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)
    providers: dict = field(default_factory=dict)
    ui_dir: str = ""

    def engine_config(self) -> EngineConfig:
        p = self.pipeline
        return EngineConfig(
            pool_size=int(p.get("pool_size", 6)),
            color=p.get("color", "green"),
            top_k=int(p.get("top_k", 3)),
            max_rounds=int(p.get("max_rounds", 3)),
            mask_fill=tuple(p.get("mask_fill", (128, 128, 128))),
            auto_approve=bool(p.get("auto_approve", True)),
            strict_verdicts=bool(p.get("strict_verdicts", False)),
            seed=self.seed,
            reference_overrides=dict(p.get("reference_overrides", {})),
        )

    def provider_config(self, capability: str) -> ProviderConfig:
        raw = dict(self.providers.get(capability, {}))
        raw.pop("_note", None)
        return ProviderConfig(
            endpoint=raw.get("endpoint", ""),
            credential_ref=raw.get("credential_ref", ""),
            timeout=float(raw.get("timeout", 30.0)),
            max_retries=int(raw.get("max_retries", 3)),
            retry_backoff=float(raw.get("retry_backoff", 1.0)),
            concurrency_limit=int(raw.get("concurrency_limit", 4)),
            options=raw.get("options", {}),
        )


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _defaults() -> dict:
    text = resources.files("bikescape").joinpath("assets", "defaults.json").read_text()
    return json.loads(text)


def _read_config_file(path: Path) -> dict:
    if path.suffix == ".toml":
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError as exc:
            raise RuntimeError("TOML config requires Python 3.11+; use JSON instead") from exc
        return tomllib.loads(path.read_text())
    return json.loads(path.read_text())


def load_config(path: str | Path | None = None, **overrides) -> AppConfig:
    data = _defaults()
    if path is not None:
        data = _deep_merge(data, _read_config_file(Path(path)))
    data = _deep_merge(data, overrides)
    paths = data.get("paths", {})
    return AppConfig(
        mode=data.get("mode", "mock"),
        seed=data.get("seed", 0),
        runs_dir=paths.get("runs_dir", "runs"),
        qc_dir=paths.get("qc_dir", "qc"),
        fixtures_dir=paths.get("fixtures_dir", "fixtures"),
        pipeline=data.get("pipeline", {}),
        ingest=data.get("ingest", {}),
        models=data.get("models", {}),
        providers=data.get("providers", {}),
        ui_dir=data.get("ui_dir", ""),
    )


def build_provider_set(config: AppConfig) -> ProviderSet:
    if config.mode == "mock":
        return mock_provider_set(config.seed or 0)
    if config.mode == "replay":
        return replay_provider_set(config.fixtures_dir)
    if config.mode == "live":
        return http_provider_set({cap: config.provider_config(cap) for cap in CAPABILITIES})
    raise ValueError(f"unknown provider mode {config.mode!r}")


def build_imagery_source(config: AppConfig) -> ImagerySource:
    if config.mode == "mock":
        return SyntheticImagerySource()
    ingest_cfg = dict(config.ingest)
    return StaticImageryClient(
        ProviderConfig(
            endpoint=ingest_cfg.get("endpoint", ""),
            credential_ref=ingest_cfg.get("credential_ref", ""),
            timeout=float(ingest_cfg.get("timeout", 30.0)),
            max_retries=int(ingest_cfg.get("max_retries", 3)),
            retry_backoff=float(ingest_cfg.get("retry_backoff", 1.0)),
        )
    )


def build_engine(config: AppConfig, workdir: str | Path = ".") -> Engine:
    workdir = Path(workdir)
    return Engine(
        workdir / config.runs_dir,
        build_provider_set(config),
        config.engine_config(),
    )
