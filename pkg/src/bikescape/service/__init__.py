"""HTTP API and CLI surfaces."""

from .config import AppConfig, build_engine, build_provider_set, load_config

__all__ = ["AppConfig", "build_engine", "build_provider_set", "load_config"]
