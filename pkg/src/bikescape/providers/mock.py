"""Deterministic mock providers.

Every mock is a pure function of (inputs, seed): repeated pipelines with
identical seeds produce byte-identical artifacts end to end. No mock touches
the network.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from ..imaging import image_digest, load_image, to_image, to_mask
from .base import (
    ComplianceJudge,
    ConcurrencyLimited,
    EmbeddingVector,
    ImageEditor,
    ImageEmbedder,
    LaneSegmenter,
    MockMissError,
    ProviderSet,
    VisionDescriber,
    check_edit_preconditions,
)

LOCATOR_MARKER = "describe precisely the physical location"
OPTIMIZER_MARKER = "Output only the optimized prompt"

_NAMED_COLORS = {
    "green": (34, 139, 34),
    "red": (178, 34, 34),
    "blue": (30, 90, 160),
    "yellow": (230, 200, 40),
    "orange": (230, 140, 30),
    "purple": (120, 60, 160),
    "white": (240, 240, 240),
}


def _h(*parts: bytes | str | int) -> int:
    digest = hashlib.sha256()
    for part in parts:
        if isinstance(part, bytes):
            digest.update(part)
        else:
            digest.update(str(part).encode())
        digest.update(b"\x00")
    return int.from_bytes(digest.digest()[:8], "big")


def lane_corridor_mask(height: int, width: int) -> np.ndarray:
    """Perspective trapezoid on the right side of the roadway."""
    img = Image.new("L", (width, height), 0)
    draw = ImageDraw.Draw(img)
    draw.polygon(
        [
            (int(0.55 * width), height - 1),
            (int(0.95 * width), height - 1),
            (int(0.74 * width), int(0.55 * height)),
            (int(0.62 * width), int(0.55 * height)),
        ],
        fill=1,
    )
    return to_mask(np.asarray(img))


def _color_from_prompt(prompt: str, index: int, seed: int) -> tuple[int, int, int]:
    lowered = prompt.lower()
    base = None
    for name, rgb in _NAMED_COLORS.items():
        if f"{name}-painted" in lowered:
            base = rgb
            break
    if base is None:
        for name, rgb in _NAMED_COLORS.items():
            if name in lowered:
                base = rgb
                break
    if base is None:
        k = _h(prompt, seed)
        base = (64 + k % 128, 64 + (k >> 8) % 128, 64 + (k >> 16) % 128)
    jitter = _h(prompt, index, seed)
    shift = ((jitter % 31) - 15, ((jitter >> 5) % 31) - 15, ((jitter >> 10) % 31) - 15)
    return tuple(int(np.clip(c + s, 0, 255)) for c, s in zip(base, shift))


class MockImageEditor(ConcurrencyLimited, ImageEditor):
    """Paints the lane corridor with a prompt/seed-derived color per output."""

    def __init__(self, seed: int = 0, limit: int = 4):
        super().__init__(limit)
        self.seed = seed

    def edit_image(self, image: np.ndarray, prompt: str, n: int) -> list[np.ndarray]:
        check_edit_preconditions(prompt, n)
        return self._limited(self._edit, image, prompt, n)

    def _edit(self, image: np.ndarray, prompt: str, n: int) -> list[np.ndarray]:
        src = to_image(image)
        corridor = lane_corridor_mask(*src.shape[:2]).astype(bool)
        out = []
        for i in range(n):
            color = _color_from_prompt(prompt, i, self.seed)
            edited = src.copy()
            edited[corridor] = color
            # A thin index-dependent stripe keeps candidate histograms distinct.
            stripe_row = (_h(image_digest(src), prompt, i, self.seed) % src.shape[0])
            edited[stripe_row : stripe_row + 1, :, :] = (
                (i * 37) % 256,
                (i * 59) % 256,
                (i * 83) % 256,
            )
            out.append(edited)
        return out


class MockDescriber(ConcurrencyLimited, VisionDescriber):
    """Synthesizes deterministic locator/optimizer responses from input hashes."""

    def __init__(self, seed: int = 0, lane_absent: bool = False, limit: int = 4):
        super().__init__(limit)
        self.seed = seed
        self.lane_absent = lane_absent

    def describe(self, image: np.ndarray | None, system_prompt: str, user_prompt: str) -> str:
        if not system_prompt or not user_prompt:
            raise ValueError("prompts must be non-empty")
        return self._limited(self._describe, image, system_prompt, user_prompt)

    def _describe(self, image: np.ndarray | None, system_prompt: str, user_prompt: str) -> str:
        key = image_digest(to_image(image)) if image is not None else "-"
        if LOCATOR_MARKER in user_prompt:
            if self.lane_absent:
                return "No bike lane is present in this image."
            return self._lane_description(key)
        if OPTIMIZER_MARKER in user_prompt:
            return self._optimized_prompt(user_prompt)
        return f"Deterministic mock response {_h(key, system_prompt, user_prompt, self.seed):016x}."

    def _lane_description(self, key: str) -> str:
        k = _h(key, self.seed)
        width_ft = 4 + k % 3
        pattern = ("smooth asphalt", "green-painted", "lightly worn asphalt")[(k >> 4) % 3]
        neighbor = ("parked cars", "curb", "sidewalk edge")[(k >> 8) % 3]
        return (
            "A bike lane is present along the right side of the roadway, adjacent to the curb. "
            "Markings: the lane is bounded by two parallel solid white lines, with the left line "
            "separating it from the motor-vehicle lane. "
            f"Pattern: {pattern} surface with periodic bicycle glyphs. "
            f"Width: approximately {width_ft} feet wide. "
            f"Position: the corridor runs between the travel lane on its left and the {neighbor} "
            "on its right."
        )

    def _optimized_prompt(self, user_prompt: str) -> str:
        clauses = [
            line.strip()
            for line in user_prompt.splitlines()
            if line.strip().startswith(("Left boundary:", "Right boundary:"))
        ]
        parts = [
            "The area currently highlighted with two white boundary lines represents the "
            "existing bike lane. Clearly depict an updated bike lane approximately 6 feet wide, "
            "located along the right-hand side of the road."
        ]
        parts.extend(f"{c}." for c in clauses)
        parts.append(
            "Keep all paint strictly contained between the two continuous solid white boundary "
            "lines and preserve every element outside the lane corridor unchanged."
        )
        return " ".join(parts)


class CannedDescriber(ConcurrencyLimited, VisionDescriber):
    """Fixture table keyed by image content hash; unknown inputs are a miss.

    Text-only calls (image is None) are keyed by "-".
    """

    def __init__(self, table: dict[str, str], limit: int = 4):
        super().__init__(limit)
        self.table = dict(table)

    def describe(self, image: np.ndarray | None, system_prompt: str, user_prompt: str) -> str:
        if not system_prompt or not user_prompt:
            raise ValueError("prompts must be non-empty")
        key = image_digest(to_image(image)) if image is not None else "-"
        if key not in self.table:
            raise MockMissError(f"no canned response for image {key[:12]}")
        return self._limited(lambda: self.table[key])


class HistogramEmbedder(ConcurrencyLimited, ImageEmbedder):
    """8-bin byte histogram over all channels, normalized to sum 1.

    Cheap, deterministic, and sensitive to the masked lane region's fill and
    paint colors — exactly what re-rank tests need.
    """

    dimension = 8

    def __init__(self, limit: int = 4):
        super().__init__(limit)

    def embed(self, image: np.ndarray) -> EmbeddingVector:
        return self._limited(self._embed, image)

    def _embed(self, image: np.ndarray) -> EmbeddingVector:
        arr = to_image(image)
        counts, _ = np.histogram(arr.ravel(), bins=self.dimension, range=(0, 256))
        values = counts.astype(np.float64) / float(arr.size)
        return EmbeddingVector.from_array(values)


class MockSegmenter(ConcurrencyLimited, LaneSegmenter):
    """Returns the procedural lane corridor for the image's dimensions."""

    def __init__(self, limit: int = 4):
        super().__init__(limit)

    def segment(self, image: np.ndarray) -> np.ndarray:
        arr = to_image(image)
        return self._limited(lane_corridor_mask, *arr.shape[:2])


class SidecarSegmenter(ConcurrencyLimited, LaneSegmenter):
    """Reads masks from sidecar PNG files keyed by image content hash."""

    def __init__(self, mask_dir: str | Path, limit: int = 4):
        super().__init__(limit)
        self.mask_dir = Path(mask_dir)

    def segment(self, image: np.ndarray) -> np.ndarray:
        key = image_digest(to_image(image))
        path = self.mask_dir / f"{key}.png"
        if not path.exists():
            raise MockMissError(f"no sidecar mask for image {key[:12]}")
        return self._limited(lambda: to_mask(load_image(path)[:, :, 0]))


class StaticJudge(ConcurrencyLimited, ComplianceJudge):
    """Always returns the same raw verdict text."""

    def __init__(self, text: str = "yes", limit: int = 4):
        super().__init__(limit)
        self.text = text

    def judge(self, image: np.ndarray, prompt: str) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        to_image(image)
        return self._limited(lambda: self.text)


class CannedJudge(ConcurrencyLimited, ComplianceJudge):
    """Verdicts keyed on (image content hash, prompt sha256)."""

    def __init__(self, table: dict[tuple[str, str], str], limit: int = 4):
        super().__init__(limit)
        self.table = dict(table)

    def judge(self, image: np.ndarray, prompt: str) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        key = (image_digest(to_image(image)), hashlib.sha256(prompt.encode()).hexdigest())
        if key not in self.table:
            raise MockMissError(f"no canned verdict for {key[0][:12]}")
        return self._limited(lambda: self.table[key])


def mock_provider_set(
    seed: int = 0,
    *,
    lane_absent: bool = False,
    judge: ComplianceJudge | None = None,
    limit: int = 4,
) -> ProviderSet:
    """The default all-mock bundle used by `run --mock` and the test suite."""
    return ProviderSet(
        editor=MockImageEditor(seed=seed, limit=limit),
        describer=MockDescriber(seed=seed, lane_absent=lane_absent, limit=limit),
        embedder=HistogramEmbedder(limit=limit),
        segmenter=MockSegmenter(limit=limit),
        judge=judge if judge is not None else StaticJudge("yes", limit=limit),
    )
