"""Task store for human annotation: label, multi-round review, repair verdicts.

Tasks walk unlabeled -> labeled -> in_review(round k) -> approved | rejected,
or jump straight to filtered when the labeler discards the frame. Approval
needs `required_approvals` distinct reviewers; a rejection sends the task
back to labeled for the next round, and the same quorum of distinct
rejecters settles it as rejected. Relabeling wipes both tallies.

State lives as one JSON file per task (atomic replace on write); a single
lock serializes transitions, which keeps compare-and-set semantics trivial.
"""
from __future__ import annotations

import enum
import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field, replace
from typing import Any, Iterator, Mapping, Optional

from ..core import AbnormalityLabel, DataError, label_to_doc, parse_label
from ..dataset import FILTER_REASONS, AnnotationRecord


class NotFoundError(KeyError):
    """No task or repair with that id."""


class StateConflictError(RuntimeError):
    """The requested transition is not legal from the current state."""


@enum.unique
class TaskState(enum.Enum):
    UNLABELED = "unlabeled"
    LABELED = "labeled"
    IN_REVIEW = "in_review"
    APPROVED = "approved"
    REJECTED = "rejected"
    FILTERED = "filtered"


TERMINAL_STATES = frozenset(
    {TaskState.APPROVED, TaskState.REJECTED, TaskState.FILTERED}
)


@dataclass(frozen=True)
class AnnotationTask:
    task_id: str
    frame_id: str
    frame_path: Optional[str]
    state: TaskState = TaskState.UNLABELED
    round: int = 0
    assigned_reviewer: Optional[str] = None
    labels: tuple[AbnormalityLabel, ...] = ()
    filter_reason: Optional[str] = None
    approvals: tuple[str, ...] = ()
    rejecters: tuple[str, ...] = ()
    created_at: float = field(default_factory=time.time)
    updated_at: float = field(default_factory=time.time)

    def to_doc(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "frame_id": self.frame_id,
            "frame_path": self.frame_path,
            "state": self.state.value,
            "round": self.round,
            "assigned_reviewer": self.assigned_reviewer,
            "labels": [label_to_doc(l) for l in self.labels],
            "filter_reason": self.filter_reason,
            "approvals": list(self.approvals),
            "rejecters": list(self.rejecters),
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }

    @staticmethod
    def from_doc(doc: Mapping[str, Any]) -> "AnnotationTask":
        try:
            return AnnotationTask(
                task_id=str(doc["task_id"]),
                frame_id=str(doc["frame_id"]),
                frame_path=doc.get("frame_path"),
                state=TaskState(doc["state"]),
                round=int(doc["round"]),
                assigned_reviewer=doc.get("assigned_reviewer"),
                labels=tuple(parse_label(d) for d in doc["labels"]),
                filter_reason=doc.get("filter_reason"),
                approvals=tuple(doc["approvals"]),
                rejecters=tuple(doc["rejecters"]),
                created_at=float(doc["created_at"]),
                updated_at=float(doc["updated_at"]),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"bad task document: {exc}") from exc


@dataclass(frozen=True)
class RepairReview:
    repair_id: str
    original_path: str
    repaired_path: str
    task_id: Optional[str] = None
    verdict: Optional[str] = None
    reviewer: Optional[str] = None
    created_at: float = field(default_factory=time.time)

    def to_doc(self) -> dict[str, Any]:
        return {
            "repair_id": self.repair_id,
            "original_path": self.original_path,
            "repaired_path": self.repaired_path,
            "task_id": self.task_id,
            "verdict": self.verdict,
            "reviewer": self.reviewer,
            "created_at": self.created_at,
        }

    @staticmethod
    def from_doc(doc: Mapping[str, Any]) -> "RepairReview":
        try:
            return RepairReview(
                repair_id=str(doc["repair_id"]),
                original_path=str(doc["original_path"]),
                repaired_path=str(doc["repaired_path"]),
                task_id=doc.get("task_id"),
                verdict=doc.get("verdict"),
                reviewer=doc.get("reviewer"),
                created_at=float(doc.get("created_at", 0.0)),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"bad repair document: {exc}") from exc


def _validate_labels(raw_labels: Any) -> tuple[AbnormalityLabel, ...]:
    if not isinstance(raw_labels, (list, tuple)):
        raise DataError("labels must be a list of {kind, part} objects")
    return tuple(parse_label(d) for d in raw_labels)


class AnnotationStore:
    """Filesystem-backed task and repair store with serialized transitions."""

    def __init__(self, root: str, required_approvals: int = 2):
        if required_approvals < 1:
            raise ValueError("required_approvals must be >= 1")
        self.root = root
        self.required_approvals = required_approvals
        self._lock = threading.RLock()
        self._tasks_dir = os.path.join(root, "tasks")
        self._repairs_dir = os.path.join(root, "repairs")
        os.makedirs(self._tasks_dir, exist_ok=True)
        os.makedirs(self._repairs_dir, exist_ok=True)

    # -- persistence ------------------------------------------------------

    def _task_path(self, task_id: str) -> str:
        return os.path.join(self._tasks_dir, f"{task_id}.json")

    def _repair_path(self, repair_id: str) -> str:
        return os.path.join(self._repairs_dir, f"{repair_id}.json")

    @staticmethod
    def _write_doc(path: str, doc: dict[str, Any]) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
        os.replace(tmp, path)

    def _save(self, task: AnnotationTask) -> AnnotationTask:
        task = replace(task, updated_at=time.time())
        self._write_doc(self._task_path(task.task_id), task.to_doc())
        return task

    def _save_repair(self, repair: RepairReview) -> RepairReview:
        self._write_doc(self._repair_path(repair.repair_id), repair.to_doc())
        return repair

    # -- task CRUD --------------------------------------------------------

    def create_task(
        self,
        frame_id: str,
        frame_path: Optional[str] = None,
        task_id: Optional[str] = None,
    ) -> AnnotationTask:
        if not frame_id:
            raise DataError("frame_id must be non-empty")
        with self._lock:
            task = AnnotationTask(
                task_id=task_id or uuid.uuid4().hex[:12],
                frame_id=frame_id,
                frame_path=frame_path,
            )
            if os.path.exists(self._task_path(task.task_id)):
                raise StateConflictError(f"task {task.task_id} already exists")
            return self._save(task)

    def get_task(self, task_id: str) -> AnnotationTask:
        path = self._task_path(task_id)
        if not os.path.exists(path):
            raise NotFoundError(task_id)
        with open(path, "r", encoding="utf-8") as fh:
            return AnnotationTask.from_doc(json.load(fh))

    def list_tasks(self, state: Optional[TaskState] = None) -> list[AnnotationTask]:
        with self._lock:
            tasks = []
            for name in os.listdir(self._tasks_dir):
                if not name.endswith(".json"):
                    continue
                task = self.get_task(name[: -len(".json")])
                if state is None or task.state is state:
                    tasks.append(task)
        tasks.sort(key=lambda t: (t.created_at, t.task_id))
        return tasks

    # -- state machine ----------------------------------------------------

    def next_task(self, reviewer: str) -> Optional[AnnotationTask]:
        """Lease the oldest task the reviewer can act on, oldest first.

        Unlabeled tasks are offered for labeling, labeled ones for review
        (skipping reviewers whose approval or rejection is already counted);
        a reviewer's own open lease is re-offered so a dropped client can
        resume.
        """
        if not reviewer:
            raise DataError("reviewer id must be non-empty")
        with self._lock:
            for task in self.list_tasks():
                if task.state is TaskState.IN_REVIEW and task.assigned_reviewer == reviewer:
                    return task
                if task.state is TaskState.UNLABELED:
                    if task.assigned_reviewer in (None, reviewer):
                        return self._save(replace(task, assigned_reviewer=reviewer))
                elif task.state is TaskState.LABELED:
                    if reviewer in task.approvals or reviewer in task.rejecters:
                        continue
                    return self._save(
                        replace(
                            task,
                            state=TaskState.IN_REVIEW,
                            round=task.round + 1,
                            assigned_reviewer=reviewer,
                        )
                    )
            return None

    def apply_label(
        self,
        task_id: str,
        raw_labels: Any,
        filter_reason: Optional[str] = None,
        reviewer: Optional[str] = None,
    ) -> AnnotationTask:
        labels = _validate_labels(raw_labels)
        if filter_reason is not None:
            if filter_reason not in FILTER_REASONS:
                raise DataError(f"unknown filter reason {filter_reason!r}")
            if labels:
                raise DataError("a filtered frame cannot also carry labels")
        with self._lock:
            task = self.get_task(task_id)
            if task.state not in (TaskState.UNLABELED, TaskState.LABELED):
                raise StateConflictError(
                    f"task {task_id} is {task.state.value}, labeling needs"
                    " unlabeled or labeled"
                )
            if (
                task.assigned_reviewer is not None
                and reviewer is not None
                and task.assigned_reviewer != reviewer
            ):
                raise StateConflictError(
                    f"task {task_id} is leased to {task.assigned_reviewer!r}"
                )
            if filter_reason is not None:
                return self._save(
                    replace(
                        task,
                        state=TaskState.FILTERED,
                        labels=(),
                        filter_reason=filter_reason,
                        assigned_reviewer=None,
                    )
                )
            # a fresh label invalidates any earlier review tallies
            return self._save(
                replace(
                    task,
                    state=TaskState.LABELED,
                    labels=labels,
                    filter_reason=None,
                    assigned_reviewer=None,
                    approvals=(),
                    rejecters=(),
                )
            )

    def apply_review(self, task_id: str, reviewer: str, verdict: str) -> AnnotationTask:
        if not reviewer:
            raise DataError("reviewer id must be non-empty")
        if verdict not in ("approve", "reject"):
            raise DataError(f"verdict must be approve or reject, got {verdict!r}")
        with self._lock:
            task = self.get_task(task_id)
            if task.state is TaskState.LABELED:
                # direct review without a lease opens the next round
                task = replace(task, state=TaskState.IN_REVIEW, round=task.round + 1)
            elif task.state is TaskState.IN_REVIEW:
                if task.assigned_reviewer not in (None, reviewer):
                    raise StateConflictError(
                        f"task {task_id} round {task.round} is leased to"
                        f" {task.assigned_reviewer!r}"
                    )
            else:
                raise StateConflictError(
                    f"task {task_id} is {task.state.value}, review needs a labeled task"
                )
            if reviewer in task.approvals or reviewer in task.rejecters:
                raise StateConflictError(
                    f"reviewer {reviewer!r} already reviewed task {task_id}"
                )
            if verdict == "approve":
                approvals = task.approvals + (reviewer,)
                state = (
                    TaskState.APPROVED
                    if len(approvals) >= self.required_approvals
                    else TaskState.LABELED
                )
                return self._save(
                    replace(task, state=state, approvals=approvals, assigned_reviewer=None)
                )
            rejecters = task.rejecters + (reviewer,)
            state = (
                TaskState.REJECTED
                if len(rejecters) >= self.required_approvals
                else TaskState.LABELED
            )
            return self._save(
                replace(task, state=state, rejecters=rejecters, assigned_reviewer=None)
            )

    # -- export -----------------------------------------------------------

    def export_approved(self) -> Iterator[AnnotationRecord]:
        for task in self.list_tasks(TaskState.APPROVED):
            yield AnnotationRecord(
                frame_id=task.frame_id,
                labels=task.labels,
                filter_reason=None,
                review_round=max(task.round, 1),
                reviewer_ids=task.approvals,
                status="approved",
            )

    # -- repair reviews -----------------------------------------------------

    def create_repair(
        self,
        original_path: str,
        repaired_path: str,
        task_id: Optional[str] = None,
        repair_id: Optional[str] = None,
    ) -> RepairReview:
        for label, path in (("original", original_path), ("repaired", repaired_path)):
            if not path or not os.path.exists(path):
                raise DataError(f"{label} image path {path!r} does not exist")
        with self._lock:
            repair = RepairReview(
                repair_id=repair_id or uuid.uuid4().hex[:12],
                original_path=original_path,
                repaired_path=repaired_path,
                task_id=task_id,
            )
            if os.path.exists(self._repair_path(repair.repair_id)):
                raise StateConflictError(f"repair {repair.repair_id} already exists")
            return self._save_repair(repair)

    def get_repair(self, repair_id: str) -> RepairReview:
        path = self._repair_path(repair_id)
        if not os.path.exists(path):
            raise NotFoundError(repair_id)
        with open(path, "r", encoding="utf-8") as fh:
            return RepairReview.from_doc(json.load(fh))

    def list_repairs(self) -> list[RepairReview]:
        with self._lock:
            repairs = []
            for name in os.listdir(self._repairs_dir):
                if name.endswith(".json"):
                    repairs.append(self.get_repair(name[: -len(".json")]))
        repairs.sort(key=lambda r: (r.created_at, r.repair_id))
        return repairs

    def set_repair_verdict(self, repair_id: str, reviewer: str, verdict: str) -> RepairReview:
        if not reviewer:
            raise DataError("reviewer id must be non-empty")
        if verdict not in ("approve", "reject"):
            raise DataError(f"verdict must be approve or reject, got {verdict!r}")
        with self._lock:
            repair = self.get_repair(repair_id)
            if repair.verdict is not None:
                raise StateConflictError(
                    f"repair {repair_id} already has verdict {repair.verdict!r}"
                )
            return self._save_repair(replace(repair, verdict=verdict, reviewer=reviewer))


def seed_tasks_from_frames(store: AnnotationStore, frames: str) -> list[AnnotationTask]:
    """Create tasks from a manifest (JSONL of {frame_id, path}) or a directory
    of scene fixture files, skipping frame ids that already have a task."""
    entries: list[tuple[str, Optional[str]]] = []
    if os.path.isdir(frames):
        for name in sorted(os.listdir(frames)):
            if name.endswith(".json"):
                entries.append((os.path.splitext(name)[0], os.path.join(frames, name)))
    else:
        try:
            with open(frames, "r", encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        doc = json.loads(line)
                        entries.append((str(doc["frame_id"]), doc.get("path")))
                    except (json.JSONDecodeError, KeyError, TypeError) as exc:
                        raise DataError(f"{frames}:{lineno}: bad frame entry: {exc}") from exc
        except OSError as exc:
            raise DataError(f"cannot read frames manifest {frames}: {exc}") from exc
    existing = {t.frame_id for t in store.list_tasks()}
    created = []
    for frame_id, path in entries:
        if frame_id in existing:
            continue
        created.append(store.create_task(frame_id, path))
    return created
