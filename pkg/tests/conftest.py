"""Shared fixtures for the test suite."""

from __future__ import annotations

import socket

import numpy as np
import pytest

from bikescape.domain import SceneSource, StreetScene


def make_image(seed: int = 0, size: int = 64) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 255, (size, size, 3), dtype=np.uint8)


def make_scene(seed: int = 0, size: int = 64, **overrides) -> StreetScene:
    kwargs = dict(
        scene_id=f"scene-{seed}",
        latitude=42.35,
        longitude=-71.06,
        heading=90.0,
        pitch=0.0,
        fov=90.0,
        image=make_image(seed, size),
        source=SceneSource.LOCAL_FILE,
    )
    kwargs.update(overrides)
    return StreetScene(**kwargs)


@pytest.fixture
def scene() -> StreetScene:
    return make_scene(1, 96)


@pytest.fixture
def no_network(monkeypatch):
    """Forbid socket creation for the duration of a test."""

    def _blocked(*args, **kwargs):
        raise AssertionError("network activity attempted during an offline test")

    monkeypatch.setattr(socket, "socket", _blocked)
    yield
