"""Scene-graph image payloads: the deterministic world behind the mock backends.

A scene is a fully specified stand-in for an image: persons with owned part
boxes, optional detached (floating) parts, occluder rectangles, and authored
slots marking where a removed part used to be. Scenes are immutable; every
edit produces a new graph sharing untouched nodes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Optional, Sequence

from .core import BBox, BodyPartClass, DataError, coverage

# A part or slot counts as occluded/covered once half of it is overlapped.
OCCLUSION_COVERAGE = 0.5


@dataclass(frozen=True)
class PartNode:
    part: BodyPartClass
    box: BBox
    occluded: bool = False


@dataclass(frozen=True)
class AbsentSlot:
    """Authored location where a missing part belongs on a person."""

    part: BodyPartClass
    box: BBox


@dataclass(frozen=True)
class PersonNode:
    person_id: str
    body_box: BBox
    parts: tuple[PartNode, ...] = ()
    absent_slots: tuple[AbsentSlot, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "parts", tuple(self.parts))
        object.__setattr__(self, "absent_slots", tuple(self.absent_slots))

    def count(self, part: BodyPartClass) -> int:
        return sum(1 for p in self.parts if p.part is part)


@dataclass(frozen=True)
class SceneGraph:
    width: int
    height: int
    persons: tuple[PersonNode, ...] = ()
    floating_parts: tuple[PartNode, ...] = ()
    occluders: tuple[BBox, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "persons", tuple(self.persons))
        object.__setattr__(self, "floating_parts", tuple(self.floating_parts))
        object.__setattr__(self, "occluders", tuple(self.occluders))
        if self.width <= 0 or self.height <= 0:
            raise DataError(f"scene dims must be positive, got {self.width}x{self.height}")
        for person in self.persons:
            self._check_box(person.body_box, f"person {person.person_id} body")
            for node in person.parts:
                self._check_box(node.box, f"person {person.person_id} part {node.part}")
                if not _intersects(node.box, person.body_box):
                    raise DataError(
                        f"part {node.part} of person {person.person_id}"
                        " does not touch its body box"
                    )
                self._check_occluded_flag(node)
            for slot in person.absent_slots:
                self._check_box(slot.box, f"person {person.person_id} slot {slot.part}")
        for node in self.floating_parts:
            self._check_box(node.box, f"floating part {node.part}")
            self._check_occluded_flag(node)
        for box in self.occluders:
            self._check_box(box, "occluder")

    def _check_box(self, box: BBox, what: str) -> None:
        if not box.within(self.width, self.height):
            raise DataError(f"{what} box {box.as_tuple()} exceeds scene bounds")

    def _check_occluded_flag(self, node: PartNode) -> None:
        if node.occluded and not self.is_covered(node.box):
            raise DataError(
                f"part {node.part} at {node.box.as_tuple()} marked occluded"
                " but no occluder covers it"
            )

    def is_covered(self, box: BBox) -> bool:
        """True when some occluder overlaps at least half of the box."""
        return any(coverage(box, occ) >= OCCLUSION_COVERAGE for occ in self.occluders)

    def iter_parts(self) -> Iterable[tuple[Optional[PersonNode], PartNode]]:
        """All parts in deterministic order: persons first, then floating."""
        for person in self.persons:
            for node in person.parts:
                yield person, node
        for node in self.floating_parts:
            yield None, node


def _intersects(a: BBox, b: BBox) -> bool:
    return min(a.x_max, b.x_max) > max(a.x_min, b.x_min) and min(a.y_max, b.y_max) > max(
        a.y_min, b.y_min
    )


def recompute_occluded(scene: SceneGraph, box: BBox) -> bool:
    return scene.is_covered(box)


# --- fixture serialization ---------------------------------------------------


def scene_to_doc(scene: SceneGraph) -> dict[str, Any]:
    return {
        "width": scene.width,
        "height": scene.height,
        "persons": [
            {
                "person_id": person.person_id,
                "body_box": list(person.body_box.as_tuple()),
                "parts": [
                    {
                        "part": node.part.value,
                        "box": list(node.box.as_tuple()),
                        "occluded": node.occluded,
                    }
                    for node in person.parts
                ],
                "absent_slots": [
                    {"part": slot.part.value, "box": list(slot.box.as_tuple())}
                    for slot in person.absent_slots
                ],
            }
            for person in scene.persons
        ],
        "floating_parts": [
            {
                "part": node.part.value,
                "box": list(node.box.as_tuple()),
                "occluded": node.occluded,
            }
            for node in scene.floating_parts
        ],
        "occluders": [list(box.as_tuple()) for box in scene.occluders],
    }


def _part_from_doc(doc: Mapping[str, Any], where: str) -> PartNode:
    try:
        return PartNode(
            part=BodyPartClass(doc["part"]),
            box=BBox.from_seq(doc["box"]),
            occluded=bool(doc.get("occluded", False)),
        )
    except (KeyError, ValueError) as exc:
        raise DataError(f"bad part in {where}: {exc}") from exc


def scene_from_doc(doc: Mapping[str, Any]) -> SceneGraph:
    try:
        width = int(doc["width"])
        height = int(doc["height"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"scene fixture missing width/height: {exc}") from exc
    persons = []
    for pdoc in doc.get("persons", ()):
        try:
            person_id = str(pdoc["person_id"])
            body_box = BBox.from_seq(pdoc["body_box"])
        except (KeyError, ValueError) as exc:
            raise DataError(f"bad person entry: {exc}") from exc
        parts = tuple(
            _part_from_doc(d, f"person {person_id}") for d in pdoc.get("parts", ())
        )
        slots = []
        for sdoc in pdoc.get("absent_slots", ()):
            try:
                slots.append(
                    AbsentSlot(part=BodyPartClass(sdoc["part"]), box=BBox.from_seq(sdoc["box"]))
                )
            except (KeyError, ValueError) as exc:
                raise DataError(f"bad absent slot for person {person_id}: {exc}") from exc
        persons.append(
            PersonNode(person_id=person_id, body_box=body_box, parts=parts, absent_slots=tuple(slots))
        )
    floating = tuple(
        _part_from_doc(d, "floating_parts") for d in doc.get("floating_parts", ())
    )
    try:
        occluders = tuple(BBox.from_seq(s) for s in doc.get("occluders", ()))
    except ValueError as exc:
        raise DataError(f"bad occluder: {exc}") from exc
    return SceneGraph(
        width=width, height=height, persons=tuple(persons),
        floating_parts=floating, occluders=occluders,
    )


def load_scene(path: str) -> SceneGraph:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read scene {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"scene {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise DataError(f"scene {path} must hold a JSON object")
    return scene_from_doc(doc)


def save_scene(scene: SceneGraph, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_doc(scene), fh, indent=2, sort_keys=True)
        fh.write("\n")


def scene_fingerprint(scene: SceneGraph) -> str:
    """Stable content hash input; equal scenes serialize identically."""
    return json.dumps(scene_to_doc(scene), sort_keys=True, separators=(",", ":"))
