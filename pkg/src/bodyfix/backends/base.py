"""Abstract contracts for the pluggable model backends.

Every heavy model the pipeline leans on (grounding, inpainting, the absent
detector, embeddings, image utilities, prompt rewriting) sits behind one of
these interfaces. Each has a deterministic in-process mock and an HTTP
adapter for out-of-process workers; the pipeline never imports model code.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from ..core import BBox, BodyPartClass, ImageRef, PartDetection


class BackendError(Exception):
    """Base class for backend failures."""


class BackendUnavailableError(BackendError):
    """The backing model endpoint cannot be reached or returned a server error."""


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-dimension embedding with finite entries."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise ValueError("embedding must not be empty")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding entries must be finite")

    @property
    def dimension(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


class GroundingBackend(ABC):
    """Open-vocabulary detector: find boxes for the requested part classes."""

    @abstractmethod
    def ground(
        self, image: ImageRef, vocabulary: Iterable[BodyPartClass], threshold: float
    ) -> list[PartDetection]:
        """Return detections with score >= threshold, deterministic order."""


class InpaintingBackend(ABC):
    """Regenerate the content of a region under a text prompt."""

    @abstractmethod
    def inpaint(self, image: ImageRef, region: BBox, prompt: str) -> ImageRef:
        """Return a new image; the input is never mutated."""


class AbsentDetectorBackend(ABC):
    """Propose at most one missing body part with its predicted location."""

    @abstractmethod
    def detect_absent(self, image: ImageRef) -> Optional[tuple[BodyPartClass, BBox]]:
        ...


class EmbeddingBackend(ABC):
    @abstractmethod
    def embed_image(self, image: ImageRef) -> EmbeddingVector:
        ...

    @abstractmethod
    def embed_text(self, text: str) -> EmbeddingVector:
        ...


class ImageOpsBackend(ABC):
    """Auxiliary image utilities: super-resolution and video interpolation."""

    @abstractmethod
    def upscale(self, image: ImageRef, factor: int) -> ImageRef:
        ...

    @abstractmethod
    def interpolate_video(
        self, first: ImageRef, last: ImageRef, prompt: str, frame_count: int
    ) -> list[ImageRef]:
        """Return frame_count frames whose endpoints are the two inputs."""


class PromptRewriteBackend(ABC):
    @abstractmethod
    def rewrite_human_prompt(self, prompt: str) -> str:
        """Strip a generation prompt down to its human-relevant content."""


@dataclass(frozen=True)
class BackendSuite:
    """The full set of model backends one pipeline run is wired to."""

    grounding: GroundingBackend
    inpainting: InpaintingBackend
    absent: AbsentDetectorBackend
    embedder: EmbeddingBackend
    image_ops: ImageOpsBackend
    rewriter: PromptRewriteBackend
