"""HTTP adapters that fulfil the backend contracts against a remote worker.

Every adapter shares one RemoteChannel. The channel owns the transport,
applies the call timeout (CALIB_BACKEND_TIMEOUT_MS, default 30000), and
maps transport and status failures onto the local error model, so remote
and in-process suites misbehave identically from the pipeline's view.
"""
from __future__ import annotations

import os
from typing import Any, Optional

import httpx

from ..core import BBox, BodyPartClass, ConfigError, ImageRef, PartDetection
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

TIMEOUT_ENV_VAR = "CALIB_BACKEND_TIMEOUT_MS"
DEFAULT_TIMEOUT_MS = 30000


def call_timeout_ms(override: Optional[int] = None) -> int:
    if override is not None:
        value = override
    else:
        raw = os.environ.get(TIMEOUT_ENV_VAR, str(DEFAULT_TIMEOUT_MS))
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"{TIMEOUT_ENV_VAR} must be an integer, got {raw!r}") from None
    if value <= 0:
        raise ConfigError(f"backend timeout must be positive, got {value}")
    return value


class RemoteChannel:
    """POST JSON to one worker endpoint and normalize failures."""

    def __init__(
        self,
        endpoint: Optional[str] = None,
        client: Optional[httpx.Client] = None,
        timeout_ms: Optional[int] = None,
    ):
        if client is None and endpoint is None:
            raise ConfigError("remote backend needs an endpoint or an explicit client")
        self._owns_client = client is None
        if client is None:
            client = httpx.Client(
                base_url=endpoint, timeout=httpx.Timeout(call_timeout_ms(timeout_ms) / 1000.0)
            )
        self._client = client

    def close(self) -> None:
        if self._owns_client:
            self._client.close()

    def post(self, path: str, body: dict[str, Any]) -> dict[str, Any]:
        try:
            response = self._client.post(path, json=body)
        except httpx.TimeoutException as exc:
            raise BackendUnavailableError(f"backend call {path} timed out: {exc}") from exc
        except httpx.HTTPError as exc:
            raise BackendUnavailableError(f"backend call {path} failed: {exc}") from exc
        if response.status_code >= 500:
            raise BackendUnavailableError(
                f"backend call {path} returned {response.status_code}: {_detail(response)}"
            )
        if response.status_code in (400, 422):
            raise ValueError(f"backend rejected {path}: {_detail(response)}")
        if response.status_code >= 400:
            raise BackendError(
                f"backend call {path} returned {response.status_code}: {_detail(response)}"
            )
        try:
            doc = response.json()
        except ValueError as exc:
            raise BackendError(f"backend call {path} returned malformed JSON") from exc
        if not isinstance(doc, dict):
            raise BackendError(f"backend call {path} returned non-object JSON")
        return doc


def _detail(response: httpx.Response) -> str:
    try:
        doc = response.json()
    except ValueError:
        return response.text[:500]
    if isinstance(doc, dict) and "detail" in doc:
        return str(doc["detail"])
    return str(doc)[:500]


def _image_from_wire(doc: Any, path: str) -> ImageRef:
    try:
        return ImageRef(
            id=str(doc["id"]),
            width=int(doc["width"]),
            height=int(doc["height"]),
            payload=doc.get("path"),
        )
    except (TypeError, KeyError, ValueError) as exc:
        raise BackendError(f"backend call {path} returned a bad image ref: {exc}") from exc


class RemoteGroundingBackend(GroundingBackend):
    def __init__(self, channel: RemoteChannel):
        self._channel = channel

    def ground(
        self, image: ImageRef, vocabulary: set[BodyPartClass], threshold: float
    ) -> list[PartDetection]:
        doc = self._channel.post(
            "/ground",
            {
                "image": image.to_wire(),
                "vocabulary": sorted(p.value for p in vocabulary),
                "threshold": threshold,
            },
        )
        try:
            return [
                PartDetection(
                    part=BodyPartClass(d["part"]),
                    box=BBox.from_seq(d["box"]),
                    score=float(d["score"]),
                )
                for d in doc["detections"]
            ]
        except (TypeError, KeyError, ValueError) as exc:
            raise BackendError(f"backend call /ground returned bad detections: {exc}") from exc


class RemoteInpaintingBackend(InpaintingBackend):
    def __init__(self, channel: RemoteChannel):
        self._channel = channel

    def inpaint(self, image: ImageRef, region: BBox, prompt: str) -> ImageRef:
        doc = self._channel.post(
            "/inpaint",
            {"image": image.to_wire(), "region": list(region.as_tuple()), "prompt": prompt},
        )
        return _image_from_wire(doc.get("image"), "/inpaint")


class RemoteAbsentDetectorBackend(AbsentDetectorBackend):
    def __init__(self, channel: RemoteChannel):
        self._channel = channel

    def detect_absent(self, image: ImageRef) -> Optional[tuple[BodyPartClass, BBox]]:
        doc = self._channel.post("/detect_absent", {"image": image.to_wire()})
        finding = doc.get("finding")
        if finding is None:
            return None
        try:
            return (BodyPartClass(finding["part"]), BBox.from_seq(finding["box"]))
        except (TypeError, KeyError, ValueError) as exc:
            raise BackendError(
                f"backend call /detect_absent returned a bad finding: {exc}"
            ) from exc


class RemoteEmbeddingBackend(EmbeddingBackend):
    def __init__(self, channel: RemoteChannel):
        self._channel = channel

    def _vector(self, doc: dict[str, Any]) -> EmbeddingVector:
        try:
            return EmbeddingVector(tuple(doc["vector"]))
        except (TypeError, KeyError, ValueError) as exc:
            raise BackendError(f"backend call /embed returned a bad vector: {exc}") from exc

    def embed_image(self, image: ImageRef) -> EmbeddingVector:
        return self._vector(self._channel.post("/embed", {"image": image.to_wire()}))

    def embed_text(self, text: str) -> EmbeddingVector:
        return self._vector(self._channel.post("/embed", {"text": text}))


class RemoteImageOpsBackend(ImageOpsBackend):
    def __init__(self, channel: RemoteChannel):
        self._channel = channel

    def upscale(self, image: ImageRef, factor: int) -> ImageRef:
        doc = self._channel.post("/upscale", {"image": image.to_wire(), "factor": factor})
        return _image_from_wire(doc.get("image"), "/upscale")

    def interpolate_video(
        self, first: ImageRef, last: ImageRef, prompt: str, frame_count: int
    ) -> list[ImageRef]:
        doc = self._channel.post(
            "/interpolate",
            {
                "first": first.to_wire(),
                "last": last.to_wire(),
                "prompt": prompt,
                "frame_count": frame_count,
            },
        )
        frames = doc.get("frames")
        if not isinstance(frames, list):
            raise BackendError("backend call /interpolate returned no frame list")
        return [_image_from_wire(f, "/interpolate") for f in frames]


class RemotePromptRewriteBackend(PromptRewriteBackend):
    def __init__(self, channel: RemoteChannel):
        self._channel = channel

    def rewrite_human_prompt(self, prompt: str) -> str:
        doc = self._channel.post("/rewrite", {"prompt": prompt})
        rewritten = doc.get("prompt")
        if not isinstance(rewritten, str) or not rewritten:
            raise BackendError("backend call /rewrite returned an empty rewrite")
        return rewritten


def connect_backends(
    endpoint: Optional[str] = None,
    client: Optional[httpx.Client] = None,
    timeout_ms: Optional[int] = None,
) -> BackendSuite:
    """Wire all six backend roles to one worker endpoint."""
    channel = RemoteChannel(endpoint=endpoint, client=client, timeout_ms=timeout_ms)
    return BackendSuite(
        grounding=RemoteGroundingBackend(channel),
        inpainting=RemoteInpaintingBackend(channel),
        absent=RemoteAbsentDetectorBackend(channel),
        embedder=RemoteEmbeddingBackend(channel),
        image_ops=RemoteImageOpsBackend(channel),
        rewriter=RemotePromptRewriteBackend(channel),
    )
