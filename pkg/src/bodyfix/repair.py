"""Repair planning and replay.

Detection runs on working copies, but the delivered image is rebuilt from
the ORIGINAL by replaying every recorded finding in order: redundant
removals first, then absent repairs, each region expanded just before its
inpaint call. Optional super-resolution runs exactly once, last.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

from .backends.base import BackendError, BackendSuite
from .core import (
    AbnormalityKind,
    AbnormalityLabel,
    BBox,
    DetectionResult,
    ImageRef,
    PipelineConfig,
    PromptTemplateSet,
    default_templates,
    expand_box,
    label_to_doc,
    render_prompt,
)


@dataclass(frozen=True)
class PlanStep:
    label: AbnormalityLabel
    box: BBox
    prompt: str


@dataclass(frozen=True)
class RepairPlan:
    image_id: str
    steps: tuple[PlanStep, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))
        seen_absent = False
        for step in self.steps:
            if step.label.kind is AbnormalityKind.ABSENT:
                seen_absent = True
            elif seen_absent:
                raise ValueError("removal steps must precede absent repairs")


def build_plan(
    result: DetectionResult, templates: Optional[PromptTemplateSet] = None
) -> RepairPlan:
    """One inpainting step per finding, in finding order."""
    templates = templates or default_templates()
    steps = tuple(
        PlanStep(label=f.label, box=f.box, prompt=render_prompt(templates, f.label))
        for f in result.findings
    )
    return RepairPlan(image_id=result.image_id, steps=steps)


def execute_plan(
    original: ImageRef, plan: RepairPlan, config: PipelineConfig, backends: BackendSuite
) -> ImageRef:
    """Replay the plan over the original image and return the repaired one."""
    current = original
    for index, step in enumerate(plan.steps):
        region = expand_box(step.box, config.box_expansion_ratio, original.bounds)
        try:
            current = backends.inpainting.inpaint(current, region, step.prompt)
        except BackendError as exc:
            raise type(exc)(f"repair step {index} ({step.label}): {exc}") from exc
    if config.enable_superresolution:
        try:
            current = backends.image_ops.upscale(current, config.superresolution_factor)
        except BackendError as exc:
            raise type(exc)(f"super-resolution step: {exc}") from exc
    return current


def repair_report(
    plan: RepairPlan, config: PipelineConfig, bounds: tuple[int, int]
) -> dict[str, Any]:
    """JSON-ready account of what execute_plan will do (or did)."""
    return {
        "image_id": plan.image_id,
        "steps": [
            {
                "label": label_to_doc(step.label),
                "box": list(step.box.as_tuple()),
                "expanded_box": list(
                    expand_box(step.box, config.box_expansion_ratio, bounds).as_tuple()
                ),
                "prompt": step.prompt,
            }
            for step in plan.steps
        ],
        "superresolution": config.enable_superresolution,
    }
