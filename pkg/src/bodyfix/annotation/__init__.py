"""Human annotation workflow: task store, review state machine, HTTP service."""
from .service import create_annotation_app
from .store import (
    AnnotationStore,
    AnnotationTask,
    NotFoundError,
    RepairReview,
    StateConflictError,
    TaskState,
    seed_tasks_from_frames,
)

__all__ = [
    "AnnotationStore",
    "AnnotationTask",
    "NotFoundError",
    "RepairReview",
    "StateConflictError",
    "TaskState",
    "create_annotation_app",
    "seed_tasks_from_frames",
]
