"""Core domain types: body-part taxonomy, boxes, findings, prompts, config."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Optional, Sequence, Union


class ConfigError(Exception):
    """Bad pipeline configuration (unknown key, out-of-range value, unreadable file)."""


class DataError(Exception):
    """Malformed input data (scene fixture, annotation record, result document)."""


@enum.unique
class BodyPartClass(enum.Enum):
    """The fixed detection vocabulary, in canonical iteration order."""

    HEAD = "head"
    EAR = "ear"
    HAND = "hand"
    ARM = "arm"
    LEG = "leg"
    FOOT = "foot"

    @property
    def order(self) -> int:
        return _PART_ORDER[self]

    def __lt__(self, other: "BodyPartClass") -> bool:
        if not isinstance(other, BodyPartClass):
            return NotImplemented
        return _PART_ORDER[self] < _PART_ORDER[other]

    def __str__(self) -> str:
        return self.value


_PART_ORDER = {p: i for i, p in enumerate(BodyPartClass)}

# Expected part count for one complete human figure.
CANONICAL_COUNTS: Mapping[BodyPartClass, int] = MappingProxyType(
    {
        BodyPartClass.HEAD: 1,
        BodyPartClass.EAR: 2,
        BodyPartClass.HAND: 2,
        BodyPartClass.ARM: 2,
        BodyPartClass.LEG: 2,
        BodyPartClass.FOOT: 2,
    }
)


@enum.unique
class AbnormalityKind(enum.Enum):
    ABSENT = "absent"
    REDUNDANT = "redundant"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class AbnormalityLabel:
    """One of the twelve (kind, part) abnormality categories."""

    kind: AbnormalityKind
    part: BodyPartClass

    @property
    def sort_key(self) -> tuple[str, int]:
        return (self.kind.value, self.part.order)

    def __lt__(self, other: "AbnormalityLabel") -> bool:
        if not isinstance(other, AbnormalityLabel):
            return NotImplemented
        return self.sort_key < other.sort_key

    def __str__(self) -> str:
        return f"{self.kind.value}_{self.part.value}"


def all_labels() -> tuple[AbnormalityLabel, ...]:
    """Every (kind, part) combination, kind-major, parts in canonical order."""
    return tuple(
        AbnormalityLabel(kind, part) for kind in AbnormalityKind for part in BodyPartClass
    )


def parse_label(doc: Mapping[str, Any]) -> AbnormalityLabel:
    try:
        return AbnormalityLabel(AbnormalityKind(doc["kind"]), BodyPartClass(doc["part"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad abnormality label {doc!r}: {exc}") from exc


def label_to_doc(label: AbnormalityLabel) -> dict[str, str]:
    return {"kind": label.kind.value, "part": label.part.value}


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel box, min-corner inclusive, max-corner exclusive."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self) -> None:
        if not all(isinstance(v, int) for v in self.as_tuple()):
            raise ValueError(f"box coordinates must be ints, got {self.as_tuple()!r}")
        if self.x_min < 0 or self.y_min < 0:
            raise ValueError(f"box coordinates must be non-negative: {self.as_tuple()}")
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise ValueError(f"box must have positive extent: {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def area(self) -> int:
        return self.width * self.height

    def within(self, width: int, height: int) -> bool:
        return self.x_max <= width and self.y_max <= height

    @staticmethod
    def from_seq(seq: Sequence[int]) -> "BBox":
        if len(seq) != 4:
            raise DataError(f"box needs 4 coordinates, got {list(seq)!r}")
        return BBox(*(int(v) for v in seq))


def intersection_area(a: BBox, b: BBox) -> int:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0 or h <= 0:
        return 0
    return w * h


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    inter = intersection_area(a, b)
    if inter == 0:
        return 0.0
    return inter / (a.area + b.area - inter)


def coverage(part: BBox, region: BBox) -> float:
    """Fraction of `part` covered by `region` (intersection over part area)."""
    return intersection_area(part, region) / part.area


def expand_box(box: BBox, ratio: float, bounds: tuple[int, int]) -> BBox:
    """Grow each edge outward by ratio * side length, clamped to image bounds.

    The result always contains the input box.
    """
    if ratio < 0:
        raise ValueError(f"expansion ratio must be >= 0, got {ratio}")
    width, height = bounds
    if not box.within(width, height):
        raise ValueError(f"box {box.as_tuple()} exceeds bounds {bounds}")
    dx = int(box.width * ratio + 0.5)
    dy = int(box.height * ratio + 0.5)
    return BBox(
        max(0, box.x_min - dx),
        max(0, box.y_min - dy),
        min(width, box.x_max + dx),
        min(height, box.y_max + dy),
    )


@dataclass(frozen=True)
class PartDetection:
    """A grounded body-part instance with its confidence score."""

    part: BodyPartClass
    box: BBox
    score: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0) or math.isnan(self.score):
            raise ValueError(f"detection score must lie in [0, 1], got {self.score}")


@enum.unique
class Stage(enum.Enum):
    """Which pipeline pass produced a finding."""

    REDUNDANT = "redundant_stage"
    ABSENT = "absent_stage"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class AbnormalityFinding:
    """A detected abnormality: what is wrong, where, and which pass found it."""

    label: AbnormalityLabel
    box: BBox
    stage: Stage
    iteration: int = 0

    def __post_init__(self) -> None:
        if self.iteration < 0:
            raise ValueError("finding iteration must be >= 0")
        if self.stage is Stage.REDUNDANT:
            if self.label.kind is not AbnormalityKind.REDUNDANT:
                raise ValueError("redundant-stage findings must carry a redundant label")
            if self.iteration != 0:
                raise ValueError("redundant-stage findings always have iteration 0")
        elif self.label.kind is not AbnormalityKind.ABSENT:
            raise ValueError("absent-stage findings must carry an absent label")

    def to_doc(self) -> dict[str, Any]:
        return {
            "kind": self.label.kind.value,
            "part": self.label.part.value,
            "box": list(self.box.as_tuple()),
            "stage": self.stage.value,
            "iteration": self.iteration,
        }

    @staticmethod
    def from_doc(doc: Mapping[str, Any]) -> "AbnormalityFinding":
        try:
            return AbnormalityFinding(
                label=parse_label(doc),
                box=BBox.from_seq(doc["box"]),
                stage=Stage(doc["stage"]),
                iteration=int(doc["iteration"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad finding document {doc!r}: {exc}") from exc


@dataclass(frozen=True)
class ImageRef:
    """Handle to an image the pipeline works on.

    The payload is either a scene graph (the deterministic mock world) or a
    filesystem path for out-of-process model backends. Remote-produced images
    may carry no payload at all, only an id the worker can resolve.
    """

    id: str
    width: int
    height: int
    payload: Any = None

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image dims must be positive, got {self.width}x{self.height}")

    @property
    def bounds(self) -> tuple[int, int]:
        return (self.width, self.height)

    @staticmethod
    def from_scene(image_id: str, scene: Any) -> "ImageRef":
        return ImageRef(id=image_id, width=scene.width, height=scene.height, payload=scene)

    @staticmethod
    def from_file(image_id: str, path: str, width: int, height: int) -> "ImageRef":
        return ImageRef(id=image_id, width=width, height=height, payload=str(path))

    def scene(self) -> Any:
        if self.payload is None or isinstance(self.payload, str):
            raise ValueError(f"image {self.id} has no embedded scene payload")
        return self.payload

    def path(self) -> Optional[str]:
        return self.payload if isinstance(self.payload, str) else None

    def to_wire(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"id": self.id, "width": self.width, "height": self.height}
        if isinstance(self.payload, str):
            doc["path"] = self.payload
        return doc


@dataclass(frozen=True)
class DetectionResult:
    """Ordered findings for one image plus the post-loop working image."""

    image_id: str
    findings: tuple[AbnormalityFinding, ...]
    working_image: Optional[ImageRef]

    def __post_init__(self) -> None:
        object.__setattr__(self, "findings", tuple(self.findings))
        seen_absent = False
        for f in self.findings:
            if f.stage is Stage.ABSENT:
                seen_absent = True
            elif seen_absent:
                raise ValueError("redundant findings must precede absent findings")

    def to_doc(self) -> dict[str, Any]:
        return {
            "image_id": self.image_id,
            "findings": [f.to_doc() for f in self.findings],
            "working_image": self.working_image.id if self.working_image else None,
        }

    @staticmethod
    def from_doc(
        doc: Mapping[str, Any],
        images: Optional[Mapping[str, ImageRef]] = None,
    ) -> "DetectionResult":
        try:
            image_id = doc["image_id"]
            findings = tuple(AbnormalityFinding.from_doc(d) for d in doc["findings"])
        except KeyError as exc:
            raise DataError(f"detection result missing field {exc}") from exc
        working = None
        wid = doc.get("working_image")
        if images is not None and wid is not None:
            working = images.get(wid)
        return DetectionResult(image_id=image_id, findings=findings, working_image=working)


# --- prompt templates -------------------------------------------------------

_PLACEHOLDER = "{part}"


@dataclass(frozen=True)
class PromptTemplateSet:
    """Per-part prompt templates for the three inpainting intents."""

    regeneration: Mapping[BodyPartClass, str]
    absent_repair: Mapping[BodyPartClass, str]
    redundant_removal: Mapping[BodyPartClass, str]

    def __post_init__(self) -> None:
        for name in ("regeneration", "absent_repair", "redundant_removal"):
            table = getattr(self, name)
            object.__setattr__(self, name, MappingProxyType(dict(table)))
            table = getattr(self, name)
            for part in BodyPartClass:
                if part not in table:
                    raise ValueError(f"{name} template missing part {part.value}")
                if table[part].count(_PLACEHOLDER) > 1:
                    raise ValueError(
                        f"{name} template for {part.value} repeats the part placeholder"
                    )


def _table(template: str) -> dict[BodyPartClass, str]:
    return {part: template for part in BodyPartClass}


def default_templates() -> PromptTemplateSet:
    return PromptTemplateSet(
        regeneration=_table("a human {part}"),
        absent_repair=_table(
            "a natural human {part}, correct anatomy, seamless with surroundings"
        ),
        redundant_removal=_table(
            "plain background, empty area, no {part}, no human body part"
        ),
    )


def regeneration_prompt(templates: PromptTemplateSet, part: BodyPartClass) -> str:
    return templates.regeneration[part].replace(_PLACEHOLDER, part.value)


def render_prompt(templates: PromptTemplateSet, label: AbnormalityLabel) -> str:
    """Repair prompt for a finding: absent labels regenerate, redundant ones erase."""
    if label.kind is AbnormalityKind.ABSENT:
        table = templates.absent_repair
    else:
        table = templates.redundant_removal
    return table[label.part].replace(_PLACEHOLDER, label.part.value)


# --- pipeline configuration -------------------------------------------------

_UNIT_OPEN = ("grounding_threshold", "presence_threshold", "match_iou", "overlap_iou")


@dataclass(frozen=True)
class PipelineConfig:
    grounding_threshold: float = 0.35
    presence_threshold: float = 0.35
    match_iou: float = 0.5
    overlap_iou: float = 0.5
    box_expansion_ratio: float = 0.15
    max_absent_iterations: int = 6
    enable_superresolution: bool = False
    superresolution_factor: int = 2

    def __post_init__(self) -> None:
        for name in _UNIT_OPEN:
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if self.box_expansion_ratio < 0:
            raise ConfigError("box_expansion_ratio must be >= 0")
        if self.max_absent_iterations < 1:
            raise ConfigError("max_absent_iterations must be >= 1")
        if self.superresolution_factor < 1:
            raise ConfigError("superresolution_factor must be >= 1")


def config_from_dict(doc: Mapping[str, Any]) -> PipelineConfig:
    fields = {f for f in PipelineConfig.__dataclass_fields__}
    unknown = set(doc) - fields
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        return PipelineConfig(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str) -> PipelineConfig:
    """Load a JSON config file; keys must match PipelineConfig field names."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return config_from_dict(doc)
