"""Metrics and baseline harness: detection tallies, quality scores, prompts.

Detection quality is scored per (kind, part) category as a detection rate
(acc = TP/(TP+FN)) plus a false discovery rate (fdr = FP/(FP+TP)); FDR is
suppressed as "--" once acc is zero or no positives were predicted, where it
carries no information. Image quality scores are 100x cosine similarities in
an embedding space; FID compares sample means/covariances of embedding sets.
"""
from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np
import scipy.linalg

from .backends.base import BackendSuite, EmbeddingVector
from .core import (
    AbnormalityKind,
    AbnormalityLabel,
    BBox,
    BodyPartClass,
    DataError,
    ImageRef,
    all_labels,
    iou,
    parse_label,
)

log = logging.getLogger(__name__)

HUMAN_CONCEPT_PROMPT = "an image contains human"

# Prompt used against generic VLMs on the masked-COCO style eval set.
COCO_VQA_PROMPT = (
    "Are there any absent body parts in the person shown in the image? If yes,"
    " please answer from 'head', 'arm', 'leg', 'foot', 'hand', or 'ear';"
    " otherwise, please answer 'no'. Answer the question using a single word:"
)

NO_ABNORMALITY_TEXT = "The person in the image has no abnormalities."

# classification texts enumerate parts in this fixed order
_CLIP_PART_ORDER = (
    BodyPartClass.HEAD,
    BodyPartClass.EAR,
    BodyPartClass.ARM,
    BodyPartClass.HAND,
    BodyPartClass.FOOT,
    BodyPartClass.LEG,
)


@enum.unique
class ModelFamily(enum.Enum):
    CLIP_STYLE = "clip_style"
    LLAVA_STYLE = "llava_style"
    INTERNVL_STYLE = "internvl_style"
    GPT4O_STYLE = "gpt4o_style"


@enum.unique
class TallyMode(enum.Enum):
    FLAG_LEVEL = "flag_level"
    BOX_LEVEL = "box_level"


@dataclass(frozen=True)
class EvalRecord:
    """Ground truth vs predictions for one frame; boxes optional, parallel."""

    frame_id: str
    ground_truth: tuple[AbnormalityLabel, ...]
    predictions: tuple[AbnormalityLabel, ...]
    ground_truth_boxes: Optional[tuple[BBox, ...]] = None
    prediction_boxes: Optional[tuple[BBox, ...]] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "ground_truth", tuple(self.ground_truth))
        object.__setattr__(self, "predictions", tuple(self.predictions))
        for name in ("ground_truth_boxes", "prediction_boxes"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(v))
        if self.ground_truth_boxes is not None and len(self.ground_truth_boxes) != len(
            self.ground_truth
        ):
            raise ValueError("ground_truth_boxes must parallel ground_truth")
        if self.prediction_boxes is not None and len(self.prediction_boxes) != len(
            self.predictions
        ):
            raise ValueError("prediction_boxes must parallel predictions")


@dataclass
class ConfusionTally:
    counts: dict[AbnormalityLabel, dict[str, int]] = field(default_factory=dict)

    def bucket(self, label: AbnormalityLabel) -> dict[str, int]:
        return self.counts.setdefault(label, {"tp": 0, "fp": 0, "fn": 0})

    def add(self, label: AbnormalityLabel, tp: int = 0, fp: int = 0, fn: int = 0) -> None:
        b = self.bucket(label)
        b["tp"] += tp
        b["fp"] += fp
        b["fn"] += fn


def tally(
    records: Sequence[EvalRecord],
    mode: TallyMode = TallyMode.FLAG_LEVEL,
    iou_threshold: float = 0.5,
) -> ConfusionTally:
    out = ConfusionTally()
    for label in all_labels():
        out.bucket(label)
    for rec in records:
        if mode is TallyMode.FLAG_LEVEL:
            _tally_flags(out, rec)
        else:
            if rec.ground_truth_boxes is None or rec.prediction_boxes is None:
                raise DataError(
                    f"frame {rec.frame_id}: box_level tally requires boxes on both sides"
                )
            _tally_boxes(out, rec, iou_threshold)
    return out


def _tally_flags(out: ConfusionTally, rec: EvalRecord) -> None:
    for label in set(rec.ground_truth) | set(rec.predictions):
        truth = sum(1 for l in rec.ground_truth if l == label)
        pred = sum(1 for l in rec.predictions if l == label)
        matched = min(truth, pred)
        out.add(label, tp=matched, fp=pred - matched, fn=truth - matched)


def _tally_boxes(out: ConfusionTally, rec: EvalRecord, iou_threshold: float) -> None:
    for label in set(rec.ground_truth) | set(rec.predictions):
        gt = [
            rec.ground_truth_boxes[i]
            for i, l in enumerate(rec.ground_truth)
            if l == label
        ]
        unmatched = list(range(len(gt)))
        tp = fp = 0
        for i, l in enumerate(rec.predictions):
            if l != label:
                continue
            best, best_iou = None, iou_threshold
            for j in unmatched:
                v = iou(rec.prediction_boxes[i], gt[j])
                if v >= best_iou:
                    best, best_iou = j, v
            if best is not None:
                unmatched.remove(best)
                tp += 1
            else:
                fp += 1
        out.add(label, tp=tp, fp=fp, fn=len(unmatched))


def acc_fdr(t: ConfusionTally) -> dict[AbnormalityLabel, dict[str, Any]]:
    """Per-category detection rate and false discovery rate, as percentages.

    fdr is None (rendered "--") when no positives were predicted or when acc
    is zero; with nothing correctly found, a discovery rate says nothing.
    """
    out: dict[AbnormalityLabel, dict[str, Any]] = {}
    for label, b in t.counts.items():
        tp, fp, fn = b["tp"], b["fp"], b["fn"]
        no_ground_truth = (tp + fn) == 0
        acc = 0.0 if no_ground_truth else 100.0 * tp / (tp + fn)
        if (tp + fp) == 0 or acc == 0.0:
            fdr = None
        else:
            fdr = 100.0 * fp / (fp + tp)
        out[label] = {"acc": acc, "fdr": fdr, "no_ground_truth": no_ground_truth}
    return out


def evaluation_report(t: ConfusionTally) -> list[dict[str, Any]]:
    """Two per-kind blocks: per-part acc/fdr plus micro and macro averages."""
    per_label = acc_fdr(t)
    blocks = []
    for kind in AbnormalityKind:
        per_part: dict[str, Any] = {}
        micro = {"tp": 0, "fp": 0, "fn": 0}
        macro_accs: list[float] = []
        macro_fdrs: list[float] = []
        for part in BodyPartClass:
            label = AbnormalityLabel(kind, part)
            b = t.counts.get(label, {"tp": 0, "fp": 0, "fn": 0})
            for k in micro:
                micro[k] += b[k]
            stats = per_label.get(label, {"acc": 0.0, "fdr": None, "no_ground_truth": True})
            per_part[part.value] = {
                "acc": round(stats["acc"], 2),
                "fdr": "--" if stats["fdr"] is None else round(stats["fdr"], 2),
                "no_ground_truth": stats["no_ground_truth"],
            }
            macro_accs.append(stats["acc"])
            if stats["fdr"] is not None:
                macro_fdrs.append(stats["fdr"])
        micro_tally = ConfusionTally()
        micro_tally.add(AbnormalityLabel(kind, BodyPartClass.HEAD), **micro)
        micro_stats = next(iter(acc_fdr(micro_tally).values()))
        blocks.append(
            {
                "type": kind.value,
                "per_part": per_part,
                "avg": {
                    "acc": round(micro_stats["acc"], 2),
                    "fdr": "--" if micro_stats["fdr"] is None else round(micro_stats["fdr"], 2),
                    "macro_acc": round(sum(macro_accs) / len(macro_accs), 2),
                    "macro_fdr": (
                        "--" if not macro_fdrs else round(sum(macro_fdrs) / len(macro_fdrs), 2)
                    ),
                },
            }
        )
    return blocks


# --- embedding-space quality scores -------------------------------------------


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    va, vb = a.as_array(), b.as_array()
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0 or nb == 0:
        raise ValueError("cosine undefined for zero vectors")
    return float(np.dot(va, vb) / (na * nb))


def clip_score(image: ImageRef, prompt: str, backends: BackendSuite) -> float:
    if not prompt:
        raise ValueError("prompt must be non-empty")
    return 100.0 * cosine(
        backends.embedder.embed_image(image), backends.embedder.embed_text(prompt)
    )


def human_clip_score(image: ImageRef, prompt: str, backends: BackendSuite) -> float:
    """clip_score against only the human-relevant portion of the prompt."""
    rewritten = backends.rewriter.rewrite_human_prompt(prompt)
    return clip_score(image, rewritten, backends)


def human_concept_score(image: ImageRef, backends: BackendSuite) -> float:
    return clip_score(image, HUMAN_CONCEPT_PROMPT, backends)


def latent_consistency(
    img_a: ImageRef, img_b: ImageRef, backends: BackendSuite
) -> float:
    return cosine(backends.embedder.embed_image(img_a), backends.embedder.embed_image(img_b))


_FID_EPS = 1e-6


def fid(set_a: Sequence[EmbeddingVector], set_b: Sequence[EmbeddingVector]) -> float:
    """Frechet distance between the sample statistics of two embedding sets."""
    if len(set_a) < 2 or len(set_b) < 2:
        raise ValueError("fid needs at least 2 vectors per set")
    xa = np.stack([v.as_array() for v in set_a])
    xb = np.stack([v.as_array() for v in set_b])
    if xa.shape[1] != xb.shape[1]:
        raise ValueError("fid sets must share embedding dimension")
    mu_a, mu_b = xa.mean(axis=0), xb.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(xa, rowvar=False))
    cov_b = np.atleast_2d(np.cov(xb, rowvar=False))

    # sqrtm's error estimate divides by ||A||, warning spuriously at zero
    with np.errstate(invalid="ignore", divide="ignore"):
        covmean, _ = scipy.linalg.sqrtm(cov_a @ cov_b, disp=False)
        if not np.isfinite(covmean).all():
            # singular product: retry on regularized covariances
            offset = np.eye(cov_a.shape[0]) * _FID_EPS
            covmean, _ = scipy.linalg.sqrtm(
                (cov_a + offset) @ (cov_b + offset), disp=False
            )
    if np.iscomplexobj(covmean):
        covmean = covmean.real

    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(covmean))
    return value


def quality_block(
    originals: Sequence[ImageRef],
    repaireds: Sequence[ImageRef],
    prompts: Sequence[str],
    backends: BackendSuite,
) -> dict[str, float]:
    """Aggregate image-quality metrics over paired original/repaired images."""
    if not (len(originals) == len(repaireds) == len(prompts)) or not originals:
        raise ValueError("quality block needs equal-length, non-empty inputs")
    human_concept = np.mean([human_concept_score(r, backends) for r in repaireds])
    clip = np.mean([clip_score(r, p, backends) for r, p in zip(repaireds, prompts)])
    human_clip = np.mean(
        [human_clip_score(r, p, backends) for r, p in zip(repaireds, prompts)]
    )
    consistency = np.mean(
        [latent_consistency(o, r, backends) for o, r in zip(originals, repaireds)]
    )
    emb_a = [backends.embedder.embed_image(o) for o in originals]
    emb_b = [backends.embedder.embed_image(r) for r in repaireds]
    block = {
        "human_concept": float(human_concept),
        "clip": float(clip),
        "human_clip": float(human_clip),
        "latent_consistency": float(consistency),
    }
    if len(emb_a) >= 2:
        block["fid"] = fid(emb_a, emb_b)
    return block


# --- baseline prompts and response normalization --------------------------------


def clip_classification_texts(kind: AbnormalityKind) -> list[str]:
    """The seven classification texts: six per-part sentences plus the clean one."""
    texts = [
        f"The person in the picture has {kind.value} {part.value}."
        for part in _CLIP_PART_ORDER
    ]
    texts.append(NO_ABNORMALITY_TEXT)
    return texts


_VLM_PROMPTS = {
    ModelFamily.LLAVA_STYLE: {
        AbnormalityKind.ABSENT: (
            "Are there any missing body parts in the person shown in the image?"
            " If so, please answer the precise part:"
        ),
        AbnormalityKind.REDUNDANT: (
            "Are there any extra body parts in the person shown in the image?"
            " If so, please answer the precise part:"
        ),
    },
    ModelFamily.INTERNVL_STYLE: {
        AbnormalityKind.ABSENT: (
            "According to the human anatomical structure, are there any missing"
            " body parts in the person shown in the image? If so, please answer"
            " the precise part:"
        ),
        AbnormalityKind.REDUNDANT: (
            "According to the human anatomical structure, are there any extra"
            " body parts in the person shown in the image? If so, please answer"
            " the precise part:"
        ),
    },
    ModelFamily.GPT4O_STYLE: {
        AbnormalityKind.ABSENT: (
            "It is a common sense that all human being has one head, two ears,"
            " two hands, two arms, two legs and two foots, are there any missing"
            " body parts which I discussed in the person shown in the image? If"
            " so, please answer the precise part:"
        ),
        AbnormalityKind.REDUNDANT: (
            "It is a common sense that all human being has one head, two ears,"
            " two hands, two arms, two legs and two foots, are there any extra"
            " body parts which I discussed in the person shown in the image? If"
            " so, please answer the precise part:"
        ),
    },
}


def baseline_prompt(
    model_family: ModelFamily,
    kind: AbnormalityKind,
    part: Optional[BodyPartClass] = None,
) -> str:
    if model_family is ModelFamily.CLIP_STYLE:
        if part is None:
            return NO_ABNORMALITY_TEXT
        return f"The person in the picture has {kind.value} {part.value}."
    return _VLM_PROMPTS[model_family][kind]


_PART_NOUNS = {
    "head": BodyPartClass.HEAD,
    "heads": BodyPartClass.HEAD,
    "ear": BodyPartClass.EAR,
    "ears": BodyPartClass.EAR,
    "hand": BodyPartClass.HAND,
    "hands": BodyPartClass.HAND,
    "arm": BodyPartClass.ARM,
    "arms": BodyPartClass.ARM,
    "leg": BodyPartClass.LEG,
    "legs": BodyPartClass.LEG,
    "foot": BodyPartClass.FOOT,
    "feet": BodyPartClass.FOOT,
}
_ABSENT_CUES = {"absent", "missing", "miss", "lacks", "lacking", "without", "lost", "removed"}
_REDUNDANT_CUES = {
    "redundant", "extra", "additional", "supernumerary", "surplus", "duplicate",
    "duplicated", "third",
}
_NEGATIVE_CUES = {"no", "none", "nothing", "normal"}
_TOKEN_RE = re.compile(r"[a-z]+")


def normalize_response(free_text: str) -> list[AbnormalityLabel]:
    """Map a model's free-text answer onto abnormality labels, rule-based.

    A part noun takes the kind of the nearest preceding cue; parts mentioned
    before any cue inherit the text's only kind when it is unambiguous.
    Unrecognizable non-negative text yields an empty list and a logged
    warning, never an exception.
    """
    tokens = _TOKEN_RE.findall(free_text.lower())
    labels: list[AbnormalityLabel] = []
    pending: list[BodyPartClass] = []
    current: Optional[AbnormalityKind] = None
    kinds_seen: set[AbnormalityKind] = set()
    for tok in tokens:
        if tok in _ABSENT_CUES:
            current = AbnormalityKind.ABSENT
            kinds_seen.add(current)
        elif tok in _REDUNDANT_CUES:
            current = AbnormalityKind.REDUNDANT
            kinds_seen.add(current)
        elif tok in _PART_NOUNS:
            part = _PART_NOUNS[tok]
            if current is None:
                pending.append(part)
            else:
                labels.append(AbnormalityLabel(current, part))
    if pending and len(kinds_seen) == 1:
        only = next(iter(kinds_seen))
        labels = [AbnormalityLabel(only, p) for p in pending] + labels
    if not labels:
        if any(tok in _NEGATIVE_CUES for tok in tokens) or "abnormalit" in free_text.lower():
            return []
        log.warning("unrecognized abnormality response: %r", free_text)
        return []
    return labels


def canonical_label_sentence(label: Optional[AbnormalityLabel]) -> str:
    """The sentence normalize_response maps back onto the given label."""
    if label is None:
        return NO_ABNORMALITY_TEXT
    return f"The person in the picture has {label.kind.value} {label.part.value}."


def eval_record_from_doc(doc: Mapping[str, Any]) -> EvalRecord:
    try:
        frame_id = str(doc["frame_id"])
        gt = tuple(parse_label(d) for d in doc["ground_truth"])
        pred = tuple(parse_label(d) for d in doc["predictions"])
    except (KeyError, TypeError) as exc:
        raise DataError(f"bad eval record {doc!r}: {exc}") from exc
    boxes = {}
    for name in ("ground_truth_boxes", "prediction_boxes"):
        if doc.get(name) is not None:
            boxes[name] = tuple(BBox.from_seq(s) for s in doc[name])
    return EvalRecord(frame_id=frame_id, ground_truth=gt, predictions=pred, **boxes)
