"""Redundancy detection: regenerate each grounded part and compare.

A body part is genuinely redundant when an inpainting model, asked to redraw
that exact region as the part it supposedly shows, produces something else.
Anatomically plausible parts re-emerge; supernumerary ones give way to
background. Each candidate is probed independently from the original image.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

from .backends.base import BackendError, BackendSuite
from .core import (
    AbnormalityFinding,
    AbnormalityKind,
    AbnormalityLabel,
    BBox,
    BodyPartClass,
    ImageRef,
    PartDetection,
    PipelineConfig,
    PromptTemplateSet,
    Stage,
    default_templates,
    iou,
    regeneration_prompt,
)


@dataclass(frozen=True)
class RedundancyProbe:
    """Audit record for one regenerate-and-compare test."""

    candidate: PartDetection
    regenerated: ImageRef
    reground_score: float
    verdict: bool

    def __post_init__(self) -> None:
        if not (0.0 <= self.reground_score <= 1.0):
            raise ValueError("reground score must lie in [0, 1]")


def detect_redundant(
    image: ImageRef,
    config: PipelineConfig,
    backends: BackendSuite,
    templates: Optional[PromptTemplateSet] = None,
) -> tuple[list[AbnormalityFinding], list[RedundancyProbe]]:
    """Probe every grounded part; findings keep the candidate order."""
    templates = templates or default_templates()
    candidates = backends.grounding.ground(
        image, tuple(BodyPartClass), config.grounding_threshold
    )
    findings: list[AbnormalityFinding] = []
    probes: list[RedundancyProbe] = []
    for det in candidates:
        try:
            regen = backends.inpainting.inpaint(
                image, det.box, regeneration_prompt(templates, det.part)
            )
            rehits = backends.grounding.ground(regen, (det.part,), 0.0)
        except BackendError as exc:
            raise type(exc)(f"probe for {det.part} at {det.box.as_tuple()}: {exc}") from exc
        score = max(
            (h.score for h in rehits if iou(h.box, det.box) >= config.match_iou),
            default=0.0,
        )
        verdict = score < config.grounding_threshold
        probes.append(
            RedundancyProbe(
                candidate=det, regenerated=regen, reground_score=score, verdict=verdict
            )
        )
        if verdict:
            findings.append(
                AbnormalityFinding(
                    label=AbnormalityLabel(AbnormalityKind.REDUNDANT, det.part),
                    box=det.box,
                    stage=Stage.REDUNDANT,
                )
            )
    return findings, probes


def probe_log_rows(probes: Iterable[RedundancyProbe]) -> list[dict]:
    return [
        {
            "part": p.candidate.part.value,
            "box": list(p.candidate.box.as_tuple()),
            "reground_score": p.reground_score,
            "verdict": p.verdict,
        }
        for p in probes
    ]


def write_probe_log(probes: Iterable[RedundancyProbe], path: str) -> None:
    """One JSON line per probe, for offline threshold audits."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in probe_log_rows(probes):
            fh.write(json.dumps(row) + "\n")


def replay_probe_verdicts(
    rows: Iterable[Mapping], grounding_threshold: float
) -> set[tuple[str, tuple[int, ...]]]:
    """Re-decide a recorded probe log at a different threshold.

    Returns the set of (part, box) keys judged redundant. The verdict rule is
    score < threshold, so raising the threshold can only grow the set.
    """
    flagged = set()
    for row in rows:
        if float(row["reground_score"]) < grounding_threshold:
            flagged.add((str(row["part"]), tuple(int(v) for v in row["box"])))
    return flagged
