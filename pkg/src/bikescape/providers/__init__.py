"""Pluggable model providers: contracts, retry policy, mocks, fixtures, HTTP."""

from .base import (
    AuthFailureError,
    ComplianceJudge,
    EmbeddingVector,
    FixtureMissError,
    ImageEditor,
    ImageEmbedder,
    LaneSegmenter,
    MalformedResponseError,
    MockMissError,
    ProviderConfig,
    ProviderError,
    ProviderSet,
    RateLimitedError,
    TimeoutError_,
    VisionDescriber,
)
from .fixtures import FixtureStore, RecordingProviderSet, replay_provider_set
from .mock import (
    CannedDescriber,
    CannedJudge,
    HistogramEmbedder,
    MockDescriber,
    MockImageEditor,
    MockSegmenter,
    SidecarSegmenter,
    StaticJudge,
    lane_corridor_mask,
    mock_provider_set,
)
from .retry import call_with_retries

__all__ = [
    "AuthFailureError",
    "CannedDescriber",
    "CannedJudge",
    "ComplianceJudge",
    "EmbeddingVector",
    "FixtureMissError",
    "FixtureStore",
    "HistogramEmbedder",
    "ImageEditor",
    "ImageEmbedder",
    "LaneSegmenter",
    "MalformedResponseError",
    "MockDescriber",
    "MockImageEditor",
    "MockMissError",
    "MockSegmenter",
    "ProviderConfig",
    "ProviderError",
    "ProviderSet",
    "RateLimitedError",
    "RecordingProviderSet",
    "SidecarSegmenter",
    "StaticJudge",
    "TimeoutError_",
    "VisionDescriber",
    "call_with_retries",
    "lane_corridor_mask",
    "mock_provider_set",
    "replay_provider_set",
]
