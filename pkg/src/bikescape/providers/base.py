"""Provider contracts for the four external model capabilities plus street-view
imagery, the shared error taxonomy, and output validation applied at the
client boundary.

Every concrete provider (live HTTP, deterministic mock, fixture replay) sits
behind the same small interfaces so the pipeline never cares which one it got.
"""

from __future__ import annotations

import math
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from ..imaging import to_image, to_mask

DEFAULT_CONCURRENCY_LIMIT = 4


class ProviderError(Exception):
    """Base for all provider failures. `retryable` drives the retry policy."""

    retryable = False

    def __init__(self, message: str, *, attempts: int | None = None):
        super().__init__(message)
        self.attempts = attempts


class TimeoutError_(ProviderError):
    retryable = True


class RateLimitedError(ProviderError):
    retryable = True


class MalformedResponseError(ProviderError):
    retryable = False


class AuthFailureError(ProviderError):
    retryable = False


class MockMissError(ProviderError):
    """A canned mock had no entry for the requested input."""

    retryable = False


class FixtureMissError(ProviderError):
    """Replay store has no recording for this request hash."""

    retryable = False


class PartialBatchError(ProviderError):
    """An edit batch produced fewer images than requested; carries the partial set."""

    retryable = True

    def __init__(self, message: str, images: list | None = None, *, attempts: int | None = None):
        super().__init__(message, attempts=attempts)
        self.images = images or []


@dataclass(frozen=True)
class ProviderConfig:
    """Transport settings for one provider endpoint."""

    endpoint: str = ""
    credential_ref: str = ""
    timeout: float = 30.0
    max_retries: int = 3
    retry_backoff: float = 1.0
    concurrency_limit: int = DEFAULT_CONCURRENCY_LIMIT
    options: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-dimension embedding; not guaranteed unit-norm."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("embedding must be non-empty")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("embedding must contain only finite values")

    @property
    def dimension(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "EmbeddingVector":
        return cls(values=tuple(float(v) for v in np.asarray(arr).ravel()))


class ConcurrencyLimited:
    """Mixin enforcing a per-provider cap on in-flight calls.

    The limit is enforced by the client, not by callers; default 4.
    """

    def __init__(self, limit: int = DEFAULT_CONCURRENCY_LIMIT):
        self._slots = threading.BoundedSemaphore(limit)

    def _limited(self, fn, *args, **kwargs):
        with self._slots:
            return fn(*args, **kwargs)


class ImageEditor(ABC):
    """edit_image: prompt-conditioned image editing (the generation primitive)."""

    @abstractmethod
    def edit_image(self, image: np.ndarray, prompt: str, n: int) -> list[np.ndarray]:
        """Return exactly `n` edited images with the input's dimensions."""


class VisionDescriber(ABC):
    """describe: multimodal text generation; `image` may be None for text-only calls."""

    @abstractmethod
    def describe(self, image: np.ndarray | None, system_prompt: str, user_prompt: str) -> str:
        """Return a non-empty text response."""


class ImageEmbedder(ABC):
    @abstractmethod
    def embed(self, image: np.ndarray) -> EmbeddingVector:
        """Return an embedding of the provider's fixed dimension."""


class LaneSegmenter(ABC):
    @abstractmethod
    def segment(self, image: np.ndarray) -> np.ndarray:
        """Return a binary mask matching the image dimensions. All-zero is valid."""


class ComplianceJudge(ABC):
    @abstractmethod
    def judge(self, image: np.ndarray, prompt: str) -> str:
        """Return the raw verdict text untouched; parsing is the evaluator's job."""


def check_edit_preconditions(prompt: str, n: int) -> None:
    if not 1 <= n <= 10:
        raise ValueError(f"n must be in [1, 10], got {n}")
    if not prompt:
        raise ValueError("prompt must be non-empty")


def check_described(text: str) -> str:
    if not isinstance(text, str) or not text:
        raise MalformedResponseError("describe returned an empty response")
    return text


def check_edited(images: list[np.ndarray], source: np.ndarray, n: int) -> list[np.ndarray]:
    if len(images) != n:
        raise MalformedResponseError(f"expected {n} images, got {len(images)}")
    src = to_image(source)
    out = []
    for img in images:
        arr = to_image(img)
        if arr.shape != src.shape:
            raise MalformedResponseError(
                f"edited image shape {arr.shape} != input shape {src.shape}"
            )
        out.append(arr)
    return out


def check_mask(mask: np.ndarray, source: np.ndarray) -> np.ndarray:
    arr = np.asarray(mask)
    src = to_image(source)
    if arr.shape[:2] != src.shape[:2]:
        raise MalformedResponseError(
            f"mask dimensions {arr.shape[:2]} != image dimensions {src.shape[:2]}"
        )
    uniq = np.unique(arr)
    if not np.all(np.isin(uniq, (0, 1))):
        raise MalformedResponseError("mask values must be in {0, 1}")
    return to_mask(arr)


@dataclass(frozen=True)
class ProviderSet:
    """The bundle of capabilities one pipeline run consumes."""

    editor: ImageEditor
    describer: VisionDescriber
    embedder: ImageEmbedder
    segmenter: LaneSegmenter
    judge: ComplianceJudge
