"""Pluggable model backends: contracts, deterministic mocks, HTTP adapters."""
from .base import (
    AbsentDetectorBackend,
    BackendError,
    BackendSuite,
    BackendUnavailableError,
    EmbeddingBackend,
    EmbeddingVector,
    GroundingBackend,
    ImageOpsBackend,
    InpaintingBackend,
    PromptRewriteBackend,
)
from .mock import (
    MockAbsentDetectorBackend,
    MockEmbeddingBackend,
    MockGroundingBackend,
    MockImageOpsBackend,
    MockInpaintingBackend,
    MockPromptRewriteBackend,
    mock_suite,
)
from .remote import RemoteChannel, connect_backends

__all__ = [
    "AbsentDetectorBackend",
    "BackendError",
    "BackendSuite",
    "BackendUnavailableError",
    "EmbeddingBackend",
    "EmbeddingVector",
    "GroundingBackend",
    "ImageOpsBackend",
    "InpaintingBackend",
    "PromptRewriteBackend",
    "MockAbsentDetectorBackend",
    "MockEmbeddingBackend",
    "MockGroundingBackend",
    "MockImageOpsBackend",
    "MockInpaintingBackend",
    "MockPromptRewriteBackend",
    "mock_suite",
    "RemoteChannel",
    "connect_backends",
]
