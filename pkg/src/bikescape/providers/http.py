"""Live HTTP providers.

All capabilities speak a small JSON wire format against a configured endpoint
(see README). Credentials are read from the environment variable named in the
provider config and sent as a bearer token; retryable transport failures go
through the shared retry policy.
"""

from __future__ import annotations

import logging
import os
import time
from typing import Callable

import numpy as np
import requests

from ..imaging import b64_of, b64_to_bytes, image_from_bytes, mask_from_bytes, png_bytes, to_image
from .base import (
    AuthFailureError,
    ComplianceJudge,
    ConcurrencyLimited,
    EmbeddingVector,
    ImageEditor,
    ImageEmbedder,
    LaneSegmenter,
    MalformedResponseError,
    ProviderConfig,
    ProviderSet,
    RateLimitedError,
    TimeoutError_,
    VisionDescriber,
    check_edit_preconditions,
    check_edited,
    check_described,
    check_mask,
)
from .retry import call_with_retries

logger = logging.getLogger(__name__)


class HttpProvider(ConcurrencyLimited):
    """Shared transport: POST JSON, map failures onto the error taxonomy."""

    def __init__(self, config: ProviderConfig, sleep: Callable[[float], None] = time.sleep):
        super().__init__(config.concurrency_limit)
        self.config = config
        self._sleep = sleep
        self._session = requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.credential_ref:
            token = os.environ.get(self.config.credential_ref)
            if not token:
                raise AuthFailureError(
                    f"credential environment variable {self.config.credential_ref!r} is unset"
                )
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def post_json(self, path: str, payload: dict) -> dict:
        url = self.config.endpoint.rstrip("/") + path

        def attempt() -> dict:
            try:
                response = self._session.post(
                    url, json=payload, headers=self._headers(), timeout=self.config.timeout
                )
            except requests.exceptions.Timeout as exc:
                raise TimeoutError_(f"request to {url} timed out") from exc
            except requests.exceptions.ConnectionError as exc:
                raise TimeoutError_(f"connection to {url} failed: {exc}") from exc
            if response.status_code in (401, 403):
                raise AuthFailureError(f"auth failure ({response.status_code}) from {url}")
            if response.status_code == 429:
                raise RateLimitedError(f"rate limited by {url}")
            if response.status_code >= 500:
                raise RateLimitedError(f"server error {response.status_code} from {url}")
            if response.status_code != 200:
                raise MalformedResponseError(
                    f"unexpected status {response.status_code} from {url}"
                )
            try:
                return response.json()
            except ValueError as exc:
                raise MalformedResponseError(f"non-JSON response from {url}") from exc

        return self._limited(
            call_with_retries,
            attempt,
            max_retries=self.config.max_retries,
            backoff_base=self.config.retry_backoff,
            sleep=self._sleep,
            label=url,
        )


class HttpImageEditor(HttpProvider, ImageEditor):
    def edit_image(self, image: np.ndarray, prompt: str, n: int) -> list[np.ndarray]:
        check_edit_preconditions(prompt, n)
        src = to_image(image)
        data = self.post_json(
            "/edit", {"image_png_b64": b64_of(png_bytes(src)), "prompt": prompt, "n": n}
        )
        try:
            images = [image_from_bytes(b64_to_bytes(b)) for b in data["images_png_b64"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponseError(f"bad edit response shape: {exc}") from exc
        return check_edited(images, src, n)


class HttpDescriber(HttpProvider, VisionDescriber):
    def describe(self, image: np.ndarray | None, system_prompt: str, user_prompt: str) -> str:
        if not system_prompt or not user_prompt:
            raise ValueError("prompts must be non-empty")
        payload = {"system": system_prompt, "user": user_prompt}
        if image is not None:
            payload["image_png_b64"] = b64_of(png_bytes(to_image(image)))
        data = self.post_json("/describe", payload)
        if "text" not in data:
            raise MalformedResponseError("describe response missing 'text'")
        return check_described(data["text"])


class HttpEmbedder(HttpProvider, ImageEmbedder):
    def embed(self, image: np.ndarray) -> EmbeddingVector:
        data = self.post_json("/embed", {"image_png_b64": b64_of(png_bytes(to_image(image)))})
        try:
            return EmbeddingVector(values=tuple(float(v) for v in data["values"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponseError(f"bad embedding response: {exc}") from exc


class HttpSegmenter(HttpProvider, LaneSegmenter):
    def segment(self, image: np.ndarray) -> np.ndarray:
        src = to_image(image)
        data = self.post_json("/segment", {"image_png_b64": b64_of(png_bytes(src))})
        try:
            mask = mask_from_bytes(b64_to_bytes(data["mask_png_b64"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponseError(f"bad segment response: {exc}") from exc
        return check_mask(mask, src)


class HttpJudge(HttpProvider, ComplianceJudge):
    def judge(self, image: np.ndarray, prompt: str) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        data = self.post_json(
            "/judge", {"image_png_b64": b64_of(png_bytes(to_image(image))), "prompt": prompt}
        )
        if "text" not in data or not isinstance(data["text"], str):
            raise MalformedResponseError("judge response missing 'text'")
        return data["text"]


def http_provider_set(
    configs: dict[str, ProviderConfig], sleep: Callable[[float], None] = time.sleep
) -> ProviderSet:
    """Build a live bundle from per-capability configs keyed by capability name."""
    return ProviderSet(
        editor=HttpImageEditor(configs["editor"], sleep),
        describer=HttpDescriber(configs["describer"], sleep),
        embedder=HttpEmbedder(configs["embedder"], sleep),
        segmenter=HttpSegmenter(configs["segmenter"], sleep),
        judge=HttpJudge(configs["judge"], sleep),
    )
