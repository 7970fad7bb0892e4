"""Cyclic absent-part detection: propose, gate, repair, repeat.

The absent detector proposes one missing part per call. Each proposal passes
two gates before being repaired in place on a working copy: it must not
coincide with an already-flagged redundant region of the same class (that
contradiction means the proposal re-describes something the redundancy pass
already handled), and the part must not already be visible where the
proposal points. Any gate firing, or the iteration cap, ends the loop.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .backends.base import BackendSuite
from .core import (
    AbnormalityFinding,
    AbnormalityKind,
    AbnormalityLabel,
    ImageRef,
    PipelineConfig,
    PromptTemplateSet,
    Stage,
    default_templates,
    expand_box,
    iou,
    render_prompt,
)


@enum.unique
class DiscardReason(enum.Enum):
    MATCHES_REDUNDANT = "matches_redundant"
    ALREADY_PRESENT = "already_present"
    MAX_ITERATIONS = "max_iterations"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class AbsentLoopState:
    """Where the loop ended: final working image plus the finding ledger."""

    iteration: int
    current_image: ImageRef
    accepted: tuple[AbnormalityFinding, ...]
    discarded: tuple[tuple[AbnormalityFinding, DiscardReason], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "accepted", tuple(self.accepted))
        object.__setattr__(self, "discarded", tuple(self.discarded))
        for f in self.accepted:
            if f.label.kind is not AbnormalityKind.ABSENT:
                raise ValueError("absent loop accepted a non-absent finding")


def detect_absent_cyclic(
    image: ImageRef,
    redundant_findings: Sequence[AbnormalityFinding],
    config: PipelineConfig,
    backends: BackendSuite,
    templates: Optional[PromptTemplateSet] = None,
) -> AbsentLoopState:
    """Run the propose/gate/repair loop until quiet or the iteration cap.

    The loop performs at most max_absent_iterations + 1 detector calls no
    matter how the backend behaves. Accepted findings carry strictly
    increasing iteration indices; each is repaired into the working copy
    before the next proposal.
    """
    templates = templates or default_templates()
    current = image
    iteration = 0
    accepted: list[AbnormalityFinding] = []
    discarded: list[tuple[AbnormalityFinding, DiscardReason]] = []

    while True:
        proposal = backends.absent.detect_absent(current)
        if proposal is None:
            break
        part, box = proposal
        finding = AbnormalityFinding(
            label=AbnormalityLabel(AbnormalityKind.ABSENT, part),
            box=box,
            stage=Stage.ABSENT,
            iteration=iteration,
        )
        if iteration >= config.max_absent_iterations:
            discarded.append((finding, DiscardReason.MAX_ITERATIONS))
            break
        if _matches_redundant(finding, redundant_findings, config.overlap_iou):
            discarded.append((finding, DiscardReason.MATCHES_REDUNDANT))
            break
        if _already_present(finding, current, config, backends):
            discarded.append((finding, DiscardReason.ALREADY_PRESENT))
            break
        accepted.append(finding)
        region = expand_box(box, config.box_expansion_ratio, current.bounds)
        current = backends.inpainting.inpaint(
            current, region, render_prompt(templates, finding.label)
        )
        iteration += 1

    return AbsentLoopState(
        iteration=iteration,
        current_image=current,
        accepted=tuple(accepted),
        discarded=tuple(discarded),
    )


def _matches_redundant(
    finding: AbnormalityFinding,
    redundant_findings: Sequence[AbnormalityFinding],
    overlap_iou: float,
) -> bool:
    return any(
        r.label.part is finding.label.part and iou(r.box, finding.box) >= overlap_iou
        for r in redundant_findings
    )


def _already_present(
    finding: AbnormalityFinding,
    image: ImageRef,
    config: PipelineConfig,
    backends: BackendSuite,
) -> bool:
    hits = backends.grounding.ground(
        image, (finding.label.part,), config.presence_threshold
    )
    return any(iou(h.box, finding.box) >= config.match_iou for h in hits)


def loop_trace_rows(state: AbsentLoopState) -> list[dict]:
    """Flatten a loop state into JSON-ready trace rows."""
    rows: list[dict] = []
    for f in state.accepted:
        rows.append(
            {
                "iteration": f.iteration,
                "action": "accepted",
                "part": f.label.part.value,
                "box": list(f.box.as_tuple()),
            }
        )
    for f, reason in state.discarded:
        rows.append(
            {
                "iteration": f.iteration,
                "action": "discarded",
                "part": f.label.part.value,
                "box": list(f.box.as_tuple()),
                "reason": reason.value,
            }
        )
    rows.append({"iteration": state.iteration, "action": "terminated"})
    return rows


def write_loop_trace(state: AbsentLoopState, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in loop_trace_rows(state):
            fh.write(json.dumps(row) + "\n")
