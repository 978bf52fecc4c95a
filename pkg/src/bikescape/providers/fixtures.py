"""Record/replay fixtures for provider calls.

Recordings are content-addressed: each request is canonicalized, hashed, and
stored as `<fixtures_dir>/<operation>/<request-sha256>.json`. Replay reads
those files and nothing else — it performs no network activity by
construction.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..imaging import (
    b64_of,
    b64_to_bytes,
    image_digest,
    image_from_bytes,
    mask_from_bytes,
    png_bytes,
    to_image,
)
from .base import (
    ComplianceJudge,
    EmbeddingVector,
    FixtureMissError,
    ImageEditor,
    ImageEmbedder,
    LaneSegmenter,
    ProviderSet,
    VisionDescriber,
    check_edit_preconditions,
)
from ..imaging import sha256_hex


class FixtureStore:
    """Content-addressed request → response store on disk."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    @staticmethod
    def request_key(operation: str, payload: dict) -> str:
        canonical = json.dumps({"op": operation, **payload}, sort_keys=True, separators=(",", ":"))
        return sha256_hex(canonical.encode())

    def path_for(self, operation: str, key: str) -> Path:
        return self.root / operation / f"{key}.json"

    def save(self, operation: str, key: str, response: dict) -> Path:
        path = self.path_for(operation, key)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(response, sort_keys=True, indent=2) + "\n")
        return path

    def load(self, operation: str, key: str) -> dict:
        path = self.path_for(operation, key)
        if not path.exists():
            raise FixtureMissError(f"no recording for {operation} request {key[:12]}")
        return json.loads(path.read_text())


def _image_key(image: np.ndarray | None) -> str:
    return image_digest(to_image(image)) if image is not None else "-"


class RecordingProviderSet:
    """Wraps a live (or any) provider set and records every response."""

    def __init__(self, inner: ProviderSet, store: FixtureStore):
        self.inner = inner
        self.store = store
        self.providers = ProviderSet(
            editor=_RecEditor(inner.editor, store),
            describer=_RecDescriber(inner.describer, store),
            embedder=_RecEmbedder(inner.embedder, store),
            segmenter=_RecSegmenter(inner.segmenter, store),
            judge=_RecJudge(inner.judge, store),
        )


def replay_provider_set(fixtures_dir: str | Path) -> ProviderSet:
    """A provider set that answers purely from recorded fixtures."""
    store = FixtureStore(fixtures_dir)
    return ProviderSet(
        editor=_ReplayEditor(store),
        describer=_ReplayDescriber(store),
        embedder=_ReplayEmbedder(store),
        segmenter=_ReplaySegmenter(store),
        judge=_ReplayJudge(store),
    )


class _RecEditor(ImageEditor):
    def __init__(self, inner: ImageEditor, store: FixtureStore):
        self.inner, self.store = inner, store

    def edit_image(self, image, prompt, n):
        images = self.inner.edit_image(image, prompt, n)
        key = self.store.request_key(
            "edit_image", {"image": _image_key(image), "prompt": prompt, "n": n}
        )
        self.store.save(
            "edit_image", key, {"images_png_b64": [b64_of(png_bytes(img)) for img in images]}
        )
        return images


class _ReplayEditor(ImageEditor):
    def __init__(self, store: FixtureStore):
        self.store = store

    def edit_image(self, image, prompt, n):
        check_edit_preconditions(prompt, n)
        key = self.store.request_key(
            "edit_image", {"image": _image_key(image), "prompt": prompt, "n": n}
        )
        data = self.store.load("edit_image", key)
        return [image_from_bytes(b64_to_bytes(b)) for b in data["images_png_b64"]]


class _RecDescriber(VisionDescriber):
    def __init__(self, inner: VisionDescriber, store: FixtureStore):
        self.inner, self.store = inner, store

    def describe(self, image, system_prompt, user_prompt):
        text = self.inner.describe(image, system_prompt, user_prompt)
        key = self.store.request_key(
            "describe",
            {"image": _image_key(image), "system": system_prompt, "user": user_prompt},
        )
        self.store.save("describe", key, {"text": text})
        return text


class _ReplayDescriber(VisionDescriber):
    def __init__(self, store: FixtureStore):
        self.store = store

    def describe(self, image, system_prompt, user_prompt):
        key = self.store.request_key(
            "describe",
            {"image": _image_key(image), "system": system_prompt, "user": user_prompt},
        )
        return self.store.load("describe", key)["text"]


class _RecEmbedder(ImageEmbedder):
    def __init__(self, inner: ImageEmbedder, store: FixtureStore):
        self.inner, self.store = inner, store

    def embed(self, image):
        vector = self.inner.embed(image)
        key = self.store.request_key("embed", {"image": _image_key(image)})
        self.store.save("embed", key, {"values": list(vector.values)})
        return vector


class _ReplayEmbedder(ImageEmbedder):
    def __init__(self, store: FixtureStore):
        self.store = store

    def embed(self, image):
        key = self.store.request_key("embed", {"image": _image_key(image)})
        return EmbeddingVector(values=tuple(self.store.load("embed", key)["values"]))


class _RecSegmenter(LaneSegmenter):
    def __init__(self, inner: LaneSegmenter, store: FixtureStore):
        self.inner, self.store = inner, store

    def segment(self, image):
        mask = self.inner.segment(image)
        key = self.store.request_key("segment", {"image": _image_key(image)})
        self.store.save("segment", key, {"mask_png_b64": b64_of(png_bytes(mask))})
        return mask


class _ReplaySegmenter(LaneSegmenter):
    def __init__(self, store: FixtureStore):
        self.store = store

    def segment(self, image):
        key = self.store.request_key("segment", {"image": _image_key(image)})
        return mask_from_bytes(b64_to_bytes(self.store.load("segment", key)["mask_png_b64"]))


class _RecJudge(ComplianceJudge):
    def __init__(self, inner: ComplianceJudge, store: FixtureStore):
        self.inner, self.store = inner, store

    def judge(self, image, prompt):
        text = self.inner.judge(image, prompt)
        key = self.store.request_key("judge", {"image": _image_key(image), "prompt": prompt})
        self.store.save("judge", key, {"text": text})
        return text


class _ReplayJudge(ComplianceJudge):
    def __init__(self, store: FixtureStore):
        self.store = store

    def judge(self, image, prompt):
        key = self.store.request_key("judge", {"image": _image_key(image), "prompt": prompt})
        return self.store.load("judge", key)["text"]
