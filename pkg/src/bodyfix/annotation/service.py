"""HTTP service for the annotation workflow.

Thin JSON layer over AnnotationStore: task leasing, labeling, multi-round
review, approved-record export, and side-by-side repair verdicts. Frame
content is inlined as scene documents so a browser client can render it.
"""
from __future__ import annotations

import json
import os
from typing import Any, Optional

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from ..core import DataError
from ..scene import load_scene, scene_to_doc
from .store import (
    AnnotationStore,
    AnnotationTask,
    NotFoundError,
    StateConflictError,
    TaskState,
)


class CreateTaskRequest(BaseModel):
    frame_id: str
    frame_path: Optional[str] = None
    task_id: Optional[str] = None


class LabelRequest(BaseModel):
    labels: list[Any] = []
    filter_reason: Optional[str] = None
    reviewer: Optional[str] = None


class ReviewRequest(BaseModel):
    reviewer: str
    verdict: str


class CreateRepairRequest(BaseModel):
    original_path: str
    repaired_path: str
    task_id: Optional[str] = None
    repair_id: Optional[str] = None


def _task_doc(task: AnnotationTask) -> dict[str, Any]:
    return task.to_doc()


def _load_scene_doc(path: Optional[str], what: str) -> dict[str, Any]:
    if path is None:
        raise NotFoundError(f"{what} has no frame file")
    try:
        return scene_to_doc(load_scene(path))
    except (OSError, DataError) as exc:
        raise DataError(f"{what}: cannot load frame {path!r}: {exc}") from exc


def create_annotation_app(
    store: AnnotationStore, ui_dir: Optional[str] = None
) -> FastAPI:
    app = FastAPI(title="bodyfix annotation service")
    app.state.store = store
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(NotFoundError)
    async def _not_found(request: Request, exc: NotFoundError) -> JSONResponse:
        return JSONResponse(status_code=404, content={"detail": str(exc.args[0])})

    @app.exception_handler(StateConflictError)
    async def _conflict(request: Request, exc: StateConflictError) -> JSONResponse:
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(DataError)
    async def _unprocessable(request: Request, exc: DataError) -> JSONResponse:
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.get("/health")
    def health() -> dict[str, Any]:
        return {"status": "ok", "required_approvals": store.required_approvals}

    @app.post("/tasks", status_code=201)
    def create_task(req: CreateTaskRequest) -> dict[str, Any]:
        return _task_doc(store.create_task(req.frame_id, req.frame_path, req.task_id))

    @app.get("/tasks")
    def list_tasks(state: Optional[str] = None) -> dict[str, Any]:
        parsed: Optional[TaskState] = None
        if state is not None:
            try:
                parsed = TaskState(state)
            except ValueError as exc:
                raise DataError(f"unknown task state {state!r}") from exc
        return {"tasks": [_task_doc(t) for t in store.list_tasks(parsed)]}

    @app.get("/tasks/next")
    def next_task(reviewer: str) -> Response:
        task = store.next_task(reviewer)
        if task is None:
            return Response(status_code=204)
        return JSONResponse(content=_task_doc(task))

    @app.get("/tasks/{task_id}")
    def get_task(task_id: str) -> dict[str, Any]:
        return _task_doc(store.get_task(task_id))

    @app.get("/tasks/{task_id}/frame")
    def get_frame(task_id: str) -> dict[str, Any]:
        task = store.get_task(task_id)
        return _load_scene_doc(task.frame_path, f"task {task_id}")

    @app.post("/tasks/{task_id}/label")
    def label_task(task_id: str, req: LabelRequest) -> dict[str, Any]:
        return _task_doc(
            store.apply_label(task_id, req.labels, req.filter_reason, req.reviewer)
        )

    @app.post("/tasks/{task_id}/review")
    def review_task(task_id: str, req: ReviewRequest) -> dict[str, Any]:
        return _task_doc(store.apply_review(task_id, req.reviewer, req.verdict))

    @app.get("/export")
    def export() -> StreamingResponse:
        def lines():
            for record in store.export_approved():
                yield json.dumps(record.to_doc(), sort_keys=True) + "\n"

        return StreamingResponse(lines(), media_type="application/x-ndjson")

    @app.get("/stats")
    def stats() -> dict[str, Any]:
        tally = {state.value: 0 for state in TaskState}
        for task in store.list_tasks():
            tally[task.state.value] += 1
        return {"states": tally, "total": sum(tally.values())}

    @app.post("/repairs", status_code=201)
    def create_repair(req: CreateRepairRequest) -> dict[str, Any]:
        return store.create_repair(
            req.original_path, req.repaired_path, req.task_id, req.repair_id
        ).to_doc()

    @app.get("/repairs")
    def list_repairs() -> dict[str, Any]:
        return {"repairs": [r.to_doc() for r in store.list_repairs()]}

    @app.get("/repairs/{repair_id}")
    def get_repair(repair_id: str) -> dict[str, Any]:
        repair = store.get_repair(repair_id)
        doc = repair.to_doc()
        doc["original"] = _load_scene_doc(repair.original_path, f"repair {repair_id}")
        doc["repaired"] = _load_scene_doc(repair.repaired_path, f"repair {repair_id}")
        return doc

    @app.post("/repairs/{repair_id}/verdict")
    def repair_verdict(repair_id: str, req: ReviewRequest) -> dict[str, Any]:
        return store.set_repair_verdict(repair_id, req.reviewer, req.verdict).to_doc()

    if ui_dir is not None:
        if not os.path.isdir(ui_dir):
            raise DataError(f"ui directory {ui_dir!r} does not exist")
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
