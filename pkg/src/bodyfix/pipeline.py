"""End-to-end orchestration: detect passes, full runs, video repair."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .absent import AbsentLoopState, detect_absent_cyclic
from .backends.base import BackendError, BackendSuite
from .core import (
    DetectionResult,
    ImageRef,
    PipelineConfig,
    PromptTemplateSet,
    default_templates,
    expand_box,
    render_prompt,
)
from .redundant import RedundancyProbe, detect_redundant
from .repair import RepairPlan, build_plan, execute_plan


@dataclass(frozen=True)
class DetectReport:
    """Detection output plus the audit trail behind it."""

    result: DetectionResult
    probes: tuple[RedundancyProbe, ...]
    loop_state: AbsentLoopState
    timings: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class RunReport:
    detect: DetectReport
    plan: RepairPlan
    repaired: ImageRef
    timings: dict[str, float] = field(default_factory=dict)


def detect(
    image: ImageRef,
    config: PipelineConfig,
    backends: BackendSuite,
    templates: Optional[PromptTemplateSet] = None,
) -> DetectReport:
    """Run both detection passes and assemble the ordered findings.

    The absent pass works on a copy with every redundant region already
    erased, so a removed surplus part cannot mask (or fake) a deficit.
    """
    templates = templates or default_templates()
    t0 = time.perf_counter()
    redundant_findings, probes = detect_redundant(image, config, backends, templates)
    t1 = time.perf_counter()

    working = image
    for finding in redundant_findings:
        region = expand_box(finding.box, config.box_expansion_ratio, working.bounds)
        working = backends.inpainting.inpaint(
            working, region, render_prompt(templates, finding.label)
        )
    state = detect_absent_cyclic(working, redundant_findings, config, backends, templates)
    t2 = time.perf_counter()

    result = DetectionResult(
        image_id=image.id,
        findings=tuple(redundant_findings) + state.accepted,
        working_image=state.current_image,
    )
    return DetectReport(
        result=result,
        probes=tuple(probes),
        loop_state=state,
        timings={"redundant_pass": t1 - t0, "absent_pass": t2 - t1},
    )


def run(
    image: ImageRef,
    config: PipelineConfig,
    backends: BackendSuite,
    templates: Optional[PromptTemplateSet] = None,
) -> RunReport:
    """Detect, then rebuild the repaired image from the original."""
    templates = templates or default_templates()
    report = detect(image, config, backends, templates)
    t0 = time.perf_counter()
    plan = build_plan(report.result, templates)
    repaired = execute_plan(image, plan, config, backends)
    t1 = time.perf_counter()
    timings = dict(report.timings)
    timings["repair_pass"] = t1 - t0
    return RunReport(detect=report, plan=plan, repaired=repaired, timings=timings)


def repair_video(
    first: ImageRef,
    last: ImageRef,
    prompt: str,
    frame_count: int,
    config: PipelineConfig,
    backends: BackendSuite,
    templates: Optional[PromptTemplateSet] = None,
) -> list[ImageRef]:
    """Repair both endpoint frames, then interpolate the span between them."""
    if frame_count < 2:
        raise ValueError("frame_count must be >= 2")
    templates = templates or default_templates()
    try:
        first_fixed = run(first, config, backends, templates).repaired
    except BackendError as exc:
        raise type(exc)(f"first frame: {exc}") from exc
    try:
        last_fixed = run(last, config, backends, templates).repaired
    except BackendError as exc:
        raise type(exc)(f"last frame: {exc}") from exc
    return backends.image_ops.interpolate_video(first_fixed, last_fixed, prompt, frame_count)
