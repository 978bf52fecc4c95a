"""Retry with exponential backoff for retryable provider errors.

Attempt accounting is fixed: for persistent failures the total attempt count
is max_retries + 1, and the k-th backoff delay is base * 2**k. The sleep
function is injectable so tests can drive a virtual clock.
"""

from __future__ import annotations

import logging
import time
from typing import Callable, TypeVar

from .base import ProviderError

logger = logging.getLogger(__name__)

T = TypeVar("T")


def call_with_retries(
    fn: Callable[[], T],
    *,
    max_retries: int,
    backoff_base: float = 1.0,
    sleep: Callable[[float], None] = time.sleep,
    label: str = "provider call",
) -> T:
    """Invoke `fn`, retrying retryable ProviderErrors up to `max_retries` times.

    The raised error carries `attempts` — the total number of invocations made.
    Non-retryable errors propagate immediately with attempts set.
    """
    attempts = 0
    while True:
        attempts += 1
        try:
            return fn()
        except ProviderError as err:
            err.attempts = attempts
            if not err.retryable or attempts > max_retries:
                raise
            delay = backoff_base * (2 ** (attempts - 1))
            logger.debug("%s failed (attempt %d): %s; retrying in %.2fs", label, attempts, err, delay)
            sleep(delay)
