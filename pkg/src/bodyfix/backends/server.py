"""HTTP worker exposing a backend suite to out-of-process callers.

Images cross the wire as {id, width, height, path?} references, never
inlined. The worker keeps every image it has seen or produced in an
in-memory store keyed by id; an unknown id with a path falls back to
loading that path as a scene fixture.
"""
from __future__ import annotations

import threading
from typing import Any, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from ..core import BBox, BodyPartClass, DataError, ImageRef
from ..scene import load_scene, scene_to_doc
from .base import BackendError, BackendSuite, BackendUnavailableError


class WireImage(BaseModel):
    id: str
    width: int
    height: int
    path: Optional[str] = None


class GroundRequest(BaseModel):
    image: WireImage
    vocabulary: list[str]
    threshold: float


class InpaintRequest(BaseModel):
    image: WireImage
    region: list[int] = Field(min_length=4, max_length=4)
    prompt: str


class DetectAbsentRequest(BaseModel):
    image: WireImage


class EmbedRequest(BaseModel):
    image: Optional[WireImage] = None
    text: Optional[str] = None


class UpscaleRequest(BaseModel):
    image: WireImage
    factor: int


class InterpolateRequest(BaseModel):
    first: WireImage
    last: WireImage
    prompt: str
    frame_count: int


class RewriteRequest(BaseModel):
    prompt: str


class ImageStore:
    """Thread-safe id -> ImageRef map with scene-fixture path fallback."""

    def __init__(self, seed: Optional[dict[str, ImageRef]] = None):
        self._lock = threading.Lock()
        self._images: dict[str, ImageRef] = dict(seed or {})

    def put(self, image: ImageRef) -> None:
        with self._lock:
            self._images[image.id] = image

    def get(self, image_id: str) -> Optional[ImageRef]:
        with self._lock:
            return self._images.get(image_id)

    def resolve(self, wire: WireImage) -> ImageRef:
        known = self.get(wire.id)
        if known is not None:
            return known
        if wire.path is None:
            raise HTTPException(status_code=404, detail=f"unknown image id {wire.id!r}")
        try:
            scene = load_scene(wire.path)
        except (OSError, DataError) as exc:
            raise HTTPException(
                status_code=400, detail=f"image {wire.id!r}: cannot load {wire.path!r}: {exc}"
            ) from exc
        if (scene.width, scene.height) != (wire.width, wire.height):
            raise HTTPException(
                status_code=400,
                detail=(
                    f"image {wire.id!r}: wire dims {wire.width}x{wire.height} do not"
                    f" match fixture {scene.width}x{scene.height}"
                ),
            )
        ref = ImageRef.from_scene(wire.id, scene)
        self.put(ref)
        return ref


def _wire_doc(image: ImageRef) -> dict[str, Any]:
    return {"id": image.id, "width": image.width, "height": image.height}


def _call(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ValueError, DataError) as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    except BackendUnavailableError as exc:
        raise HTTPException(status_code=503, detail=str(exc)) from exc
    except BackendError as exc:
        raise HTTPException(status_code=502, detail=str(exc)) from exc


def create_backend_app(
    suite: BackendSuite, images: Optional[dict[str, ImageRef]] = None
) -> FastAPI:
    """Build the worker app; `images` preseeds the store for id-only refs."""
    app = FastAPI(title="bodyfix backend worker")
    store = ImageStore(images)
    app.state.image_store = store

    @app.get("/health")
    def health() -> dict[str, str]:
        return {"status": "ok"}

    @app.get("/images/{image_id}")
    def get_image(image_id: str) -> dict[str, Any]:
        ref = store.get(image_id)
        if ref is None:
            raise HTTPException(status_code=404, detail=f"unknown image id {image_id!r}")
        doc = _wire_doc(ref)
        if ref.path() is not None:
            doc["path"] = ref.path()
        elif ref.payload is not None:
            doc["scene"] = scene_to_doc(ref.scene())
        return doc

    @app.post("/ground")
    def ground(req: GroundRequest) -> dict[str, Any]:
        image = store.resolve(req.image)
        try:
            vocabulary = {BodyPartClass(v) for v in req.vocabulary}
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        detections = _call(suite.grounding.ground, image, vocabulary, req.threshold)
        return {
            "detections": [
                {"part": d.part.value, "box": list(d.box.as_tuple()), "score": d.score}
                for d in detections
            ]
        }

    @app.post("/inpaint")
    def inpaint(req: InpaintRequest) -> dict[str, Any]:
        image = store.resolve(req.image)
        region = _call(BBox.from_seq, req.region)
        result = _call(suite.inpainting.inpaint, image, region, req.prompt)
        store.put(result)
        return {"image": _wire_doc(result)}

    @app.post("/detect_absent")
    def detect_absent(req: DetectAbsentRequest) -> dict[str, Any]:
        image = store.resolve(req.image)
        found = _call(suite.absent.detect_absent, image)
        if found is None:
            return {"finding": None}
        part, box = found
        return {"finding": {"part": part.value, "box": list(box.as_tuple())}}

    @app.post("/embed")
    def embed(req: EmbedRequest) -> dict[str, Any]:
        if (req.image is None) == (req.text is None):
            raise HTTPException(
                status_code=400, detail="embed takes exactly one of image or text"
            )
        if req.image is not None:
            vector = _call(suite.embedder.embed_image, store.resolve(req.image))
        else:
            vector = _call(suite.embedder.embed_text, req.text)
        return {"vector": list(vector.values)}

    @app.post("/upscale")
    def upscale(req: UpscaleRequest) -> dict[str, Any]:
        image = store.resolve(req.image)
        result = _call(suite.image_ops.upscale, image, req.factor)
        store.put(result)
        return {"image": _wire_doc(result)}

    @app.post("/interpolate")
    def interpolate(req: InterpolateRequest) -> dict[str, Any]:
        first = store.resolve(req.first)
        last = store.resolve(req.last)
        frames = _call(
            suite.image_ops.interpolate_video, first, last, req.prompt, req.frame_count
        )
        for frame in frames:
            store.put(frame)
        return {"frames": [_wire_doc(f) for f in frames]}

    @app.post("/rewrite")
    def rewrite(req: RewriteRequest) -> dict[str, Any]:
        return {"prompt": _call(suite.rewriter.rewrite_human_prompt, req.prompt)}

    return app
