"""Deterministic mock backends over scene-graph payloads.

These implement the backend contracts against SceneGraph images so the whole
pipeline can run, and be exhaustively tested, without any model weights. All
mocks are pure: equal inputs give equal outputs, and no call mutates its
input image.

Inpainting semantics:
  (a) every part at least half covered by the region is removed;
  (b) if the prompt is a regeneration or absent-repair template naming some
      part class, and a person adjacent to the region is left below the
      canonical count for that class, one new part is inserted with box equal
      to the region;
  (c) otherwise (canonical count met, removal template, or an unrecognized
      prompt) the region becomes background and nothing is inserted.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import replace
from typing import Iterable, Optional

import numpy as np

from ..core import (
    CANONICAL_COUNTS,
    BBox,
    BodyPartClass,
    ImageRef,
    PartDetection,
    PromptTemplateSet,
    coverage,
    default_templates,
    regeneration_prompt,
)
from ..scene import (
    OCCLUSION_COVERAGE,
    AbsentSlot,
    PartNode,
    PersonNode,
    SceneGraph,
    load_scene,
    scene_fingerprint,
)
from .base import (
    AbsentDetectorBackend,
    BackendSuite,
    EmbeddingBackend,
    EmbeddingVector,
    GroundingBackend,
    ImageOpsBackend,
    InpaintingBackend,
    PromptRewriteBackend,
)

DELETION_COVERAGE = 0.5


def _scene(image: ImageRef) -> SceneGraph:
    payload = image.payload
    if isinstance(payload, str):
        # path payload: the image lives on disk as a scene fixture
        return load_scene(payload)
    if not isinstance(payload, SceneGraph):
        raise ValueError(f"mock backends need scene payloads, image {image.id} has none")
    return payload


def _derived(image: ImageRef, op: str, scene: SceneGraph) -> ImageRef:
    return ImageRef(
        id=f"{image.id}|{op}", width=scene.width, height=scene.height, payload=scene
    )


class MockGroundingBackend(GroundingBackend):
    """Reads part boxes straight out of the scene graph, score 1.0 each."""

    def ground(
        self, image: ImageRef, vocabulary: Iterable[BodyPartClass], threshold: float
    ) -> list[PartDetection]:
        if not (0.0 <= threshold <= 1.0):
            raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
        vocab = set(vocabulary)
        hits = []
        for _, node in _scene(image).iter_parts():
            # occluded parts are still visible to the detector
            if node.part in vocab and 1.0 >= threshold:
                hits.append(PartDetection(part=node.part, box=node.box, score=1.0))
        return hits


class MockInpaintingBackend(InpaintingBackend):
    """Applies the removal/insertion rules documented in the module docstring."""

    def __init__(self, templates: Optional[PromptTemplateSet] = None) -> None:
        self._templates = templates or default_templates()
        self._by_prompt: dict[str, tuple[str, BodyPartClass]] = {}
        for part in BodyPartClass:
            regen = regeneration_prompt(self._templates, part)
            self._by_prompt.setdefault(regen, ("regenerate", part))
            repair = self._templates.absent_repair[part].replace("{part}", part.value)
            self._by_prompt.setdefault(repair, ("repair", part))
            removal = self._templates.redundant_removal[part].replace("{part}", part.value)
            self._by_prompt.setdefault(removal, ("remove", part))

    def inpaint(self, image: ImageRef, region: BBox, prompt: str) -> ImageRef:
        scene = _scene(image)
        if not region.within(scene.width, scene.height):
            raise ValueError(f"inpaint region {region.as_tuple()} exceeds image bounds")
        intent, part = self._by_prompt.get(prompt, ("remove", None))

        persons = []
        for person in scene.persons:
            kept = tuple(
                node for node in person.parts if coverage(node.box, region) < DELETION_COVERAGE
            )
            persons.append(person if kept == person.parts else replace(person, parts=kept))
        floating = tuple(
            node
            for node in scene.floating_parts
            if coverage(node.box, region) < DELETION_COVERAGE
        )

        if intent in ("regenerate", "repair") and part is not None:
            for i, person in enumerate(persons):
                if not _touches(person.body_box, region):
                    continue
                if person.count(part) >= CANONICAL_COUNTS[part]:
                    continue
                occluded = scene.is_covered(region)
                node = PartNode(part=part, box=region, occluded=occluded)
                persons[i] = replace(person, parts=person.parts + (node,))
                break

        out = SceneGraph(
            width=scene.width,
            height=scene.height,
            persons=tuple(persons),
            floating_parts=floating,
            occluders=scene.occluders,
        )
        op = f"inpaint[{','.join(map(str, region.as_tuple()))}]"
        return _derived(image, op, out)


def _touches(a: BBox, b: BBox) -> bool:
    return min(a.x_max, b.x_max) > max(a.x_min, b.x_min) and min(a.y_max, b.y_max) > max(
        a.y_min, b.y_min
    )


class MockAbsentDetectorBackend(AbsentDetectorBackend):
    """Counts owned parts per person against the canonical anatomy.

    Occluded parts count as present, and a deficit whose authored slot is
    itself covered by an occluder is not reported: an obstruction is a
    legitimate reason for a part to be invisible. Persons are scanned in
    scene order, classes in canonical order, one finding per call.
    """

    def detect_absent(self, image: ImageRef) -> Optional[tuple[BodyPartClass, BBox]]:
        scene = _scene(image)
        for person in scene.persons:
            for cls in BodyPartClass:
                if person.count(cls) >= CANONICAL_COUNTS[cls]:
                    continue
                slot = self._usable_slot(scene, person, cls)
                if slot is not None:
                    return (cls, slot.box)
        return None

    @staticmethod
    def _usable_slot(
        scene: SceneGraph, person: PersonNode, cls: BodyPartClass
    ) -> Optional[AbsentSlot]:
        for slot in person.absent_slots:
            if slot.part is not cls:
                continue
            if scene.is_covered(slot.box):
                continue
            filled = any(
                node.part is cls and coverage(slot.box, node.box) >= OCCLUSION_COVERAGE
                for node in person.parts
            )
            if not filled:
                return slot
        return None


class MockEmbeddingBackend(EmbeddingBackend):
    """Hash the content, seed an RNG, draw a fixed-dimension vector."""

    def __init__(self, dimension: int = 16) -> None:
        if dimension < 2:
            raise ValueError("embedding dimension must be >= 2")
        self.dimension = dimension

    def _vector(self, key: str) -> EmbeddingVector:
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "big")
        rng = np.random.default_rng(seed)
        return EmbeddingVector(values=tuple(rng.standard_normal(self.dimension)))

    def embed_image(self, image: ImageRef) -> EmbeddingVector:
        if image.payload is None:
            key = f"opaque:{image.id}:{image.width}x{image.height}"
        else:
            # hash content, not handles: path and in-memory refs to the
            # same scene must embed identically
            key = "scene:" + scene_fingerprint(_scene(image))
        return self._vector(key)

    def embed_text(self, text: str) -> EmbeddingVector:
        return self._vector("text:" + text)


class MockImageOpsBackend(ImageOpsBackend):
    def upscale(self, image: ImageRef, factor: int) -> ImageRef:
        if factor < 1:
            raise ValueError("upscale factor must be >= 1")
        scene = _scene(image)
        out = SceneGraph(
            width=scene.width * factor,
            height=scene.height * factor,
            persons=tuple(
                PersonNode(
                    person_id=p.person_id,
                    body_box=_scale(p.body_box, factor),
                    parts=tuple(replace(n, box=_scale(n.box, factor)) for n in p.parts),
                    absent_slots=tuple(
                        AbsentSlot(part=s.part, box=_scale(s.box, factor))
                        for s in p.absent_slots
                    ),
                )
                for p in scene.persons
            ),
            floating_parts=tuple(
                replace(n, box=_scale(n.box, factor)) for n in scene.floating_parts
            ),
            occluders=tuple(_scale(b, factor) for b in scene.occluders),
        )
        return _derived(image, f"up{factor}", out)

    def interpolate_video(
        self, first: ImageRef, last: ImageRef, prompt: str, frame_count: int
    ) -> list[ImageRef]:
        if frame_count < 2:
            raise ValueError("frame_count must be >= 2")
        a, b = _scene(first), _scene(last)
        if (a.width, a.height) != (b.width, b.height):
            raise ValueError("endpoint frames must share dimensions")
        frames = [first]
        for i in range(1, frame_count - 1):
            u = i / (frame_count - 1)
            scene = _lerp_scene(a, b, u)
            frames.append(ImageRef(
                id=f"{first.id}~{last.id}#frame{i}",
                width=scene.width, height=scene.height, payload=scene,
            ))
        frames.append(last)
        return frames


class MockPromptRewriteBackend(PromptRewriteBackend):
    """Keep the clauses that talk about people or body structure, drop the rest.

    Clause text is preserved verbatim; if nothing matches, the prompt is
    returned unchanged so the result is never empty.
    """

    LEXICON = frozenset(
        [
            "person", "people", "human", "humans", "man", "men", "woman", "women",
            "girl", "girls", "boy", "boys", "child", "children", "kid", "kids",
            "lady", "guy", "figure",
            "head", "ear", "ears", "hand", "hands", "arm", "arms",
            "leg", "legs", "foot", "feet", "face", "body",
        ]
    )

    def rewrite_human_prompt(self, prompt: str) -> str:
        sentences = [s.strip() for s in prompt.split(".") if s.strip()]
        kept_sentences = []
        for sentence in sentences:
            clauses = [c.strip() for c in sentence.split(",") if c.strip()]
            kept = [c for c in clauses if self._mentions_human(c)]
            if kept:
                kept_sentences.append(", ".join(kept) + ".")
        if not kept_sentences:
            return prompt
        return " ".join(kept_sentences)

    def _mentions_human(self, clause: str) -> bool:
        words = [w.strip(".,;:!?'\"()").lower() for w in clause.split()]
        return any(w in self.LEXICON for w in words)


def _scale(box: BBox, factor: int) -> BBox:
    return BBox(box.x_min * factor, box.y_min * factor, box.x_max * factor, box.y_max * factor)


def _lerp_box(a: BBox, b: BBox, u: float) -> BBox:
    # floor the mins and ceil the maxes: the rounded box contains the exact
    # interpolation, so overlaps present at both endpoints survive rounding
    def mix(p: int, q: int) -> float:
        return p + (q - p) * u

    return BBox(
        math.floor(mix(a.x_min, b.x_min)),
        math.floor(mix(a.y_min, b.y_min)),
        math.ceil(mix(a.x_max, b.x_max)),
        math.ceil(mix(a.y_max, b.y_max)),
    )


def _lerp_parts(
    pa: tuple[PartNode, ...], pb: tuple[PartNode, ...], u: float
) -> tuple[PartNode, ...]:
    # pair parts of the same class in order of appearance; odd ones out are
    # carried from the nearer endpoint
    out = []
    by_class_b: dict[BodyPartClass, list[PartNode]] = {}
    for node in pb:
        by_class_b.setdefault(node.part, []).append(node)
    for node in pa:
        peers = by_class_b.get(node.part)
        if peers:
            out.append(PartNode(part=node.part, box=_lerp_box(node.box, peers.pop(0).box, u)))
        elif u < 0.5:
            out.append(replace(node, occluded=False))
    for leftovers in by_class_b.values():
        if u >= 0.5:
            out.extend(replace(n, occluded=False) for n in leftovers)
    return tuple(out)


def _lerp_scene(a: SceneGraph, b: SceneGraph, u: float) -> SceneGraph:
    near = a if u < 0.5 else b
    persons = []
    for pa, pb in zip(a.persons, b.persons):
        persons.append(
            PersonNode(
                person_id=pa.person_id,
                body_box=_lerp_box(pa.body_box, pb.body_box, u),
                parts=_lerp_parts(pa.parts, pb.parts, u),
                absent_slots=(pa if u < 0.5 else pb).absent_slots,
            )
        )
    extras = a.persons[len(b.persons):] if u < 0.5 else b.persons[len(a.persons):]
    for person in extras:
        persons.append(
            replace(person, parts=tuple(replace(n, occluded=False) for n in person.parts))
        )
    floating = _lerp_parts(a.floating_parts, b.floating_parts, u)
    return SceneGraph(
        width=a.width,
        height=a.height,
        persons=tuple(persons),
        floating_parts=floating,
        occluders=near.occluders,
    )


def mock_suite(
    templates: Optional[PromptTemplateSet] = None, embedding_dimension: int = 16
) -> BackendSuite:
    """A fully wired deterministic suite over scene-graph images."""
    return BackendSuite(
        grounding=MockGroundingBackend(),
        inpainting=MockInpaintingBackend(templates),
        absent=MockAbsentDetectorBackend(),
        embedder=MockEmbeddingBackend(embedding_dimension),
        image_ops=MockImageOpsBackend(),
        rewriter=MockPromptRewriteBackend(),
    )
