"""bodyfix: detect and repair human-body abnormalities in generated imagery."""

__version__ = "0.1.0"

from .core import (
    CANONICAL_COUNTS,
    AbnormalityFinding,
    AbnormalityKind,
    AbnormalityLabel,
    BBox,
    BodyPartClass,
    ConfigError,
    DataError,
    DetectionResult,
    ImageRef,
    PartDetection,
    PipelineConfig,
    PromptTemplateSet,
    Stage,
    all_labels,
    default_templates,
    expand_box,
    iou,
    load_config,
    render_prompt,
)

__all__ = [
    "__version__",
    "CANONICAL_COUNTS",
    "AbnormalityFinding",
    "AbnormalityKind",
    "AbnormalityLabel",
    "BBox",
    "BodyPartClass",
    "ConfigError",
    "DataError",
    "DetectionResult",
    "ImageRef",
    "PartDetection",
    "PipelineConfig",
    "PromptTemplateSet",
    "Stage",
    "all_labels",
    "default_templates",
    "expand_box",
    "iou",
    "load_config",
    "render_prompt",
]
