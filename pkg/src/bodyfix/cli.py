"""Command line front end: detection runs, dataset builds, eval, annotation.

Exit codes: 0 success, 2 configuration/usage error, 3 backend failure,
4 bad input data.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import re
import sys
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

from .absent import loop_trace_rows
from .backends import BackendError, BackendSuite, connect_backends, mock_suite
from .core import (
    ConfigError,
    DataError,
    DetectionResult,
    ImageRef,
    PipelineConfig,
    load_config,
)
from .dataset import (
    TrainingRecord,
    build_eval_split,
    bundled_annotation_fixture,
    dataset_stats,
    generate_training_records,
    ingest_annotations,
    write_training_records,
)
from .evaluation import TallyMode, eval_record_from_doc, evaluation_report, tally
from .pipeline import DetectReport, repair_video
from .pipeline import detect as run_detect
from .pipeline import run as run_full
from .redundant import probe_log_rows
from .repair import build_plan, execute_plan, repair_report
from .scene import load_scene, save_scene

log = logging.getLogger(__name__)

_BACKEND_ROLES = (
    "grounding",
    "inpainting",
    "absent",
    "embedder",
    "image_ops",
    "rewriter",
)


# --- run records ---------------------------------------------------------------


@dataclass
class RunRecord:
    """What one CLI invocation did: inputs, artifacts, stage timings."""

    run_id: str
    command: str
    config: dict[str, Any]
    backend_specs: list[str]
    input_ref: dict[str, Any]
    images: list[dict[str, Any]] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    created_at: float = field(default_factory=time.time)

    def to_doc(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "command": self.command,
            "created_at": self.created_at,
            "config": self.config,
            "backends": self.backend_specs,
            "input": self.input_ref,
            "images": self.images,
            "timings": self.timings,
        }

    def finalize(self, out_dir: str, stages: Sequence[str]) -> str:
        """Write run.json after checking the record is complete and honest."""
        for entry in self.images:
            for key, value in entry.items():
                if key.endswith("_path") and value is not None and not os.path.exists(value):
                    raise DataError(f"run record references missing artifact {value}")
        for stage in stages:
            if self.timings.get(stage, 0.0) <= 0.0:
                raise DataError(f"run record is missing a positive {stage} timing")
        path = os.path.join(out_dir, "run.json")
        _write_json(path, self.to_doc())
        return path


def _write_json(path: str, doc: Any) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_jsonl(path: str, rows: Sequence[dict]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _safe_name(image_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", image_id)


# --- wiring --------------------------------------------------------------------


def build_suite(specs: Optional[Sequence[str]]) -> BackendSuite:
    """Assemble backends from --backend flags: mock, all:URL, or role:URL."""
    suite = mock_suite()
    remote_cache: dict[str, BackendSuite] = {}

    def remote(endpoint: str) -> BackendSuite:
        if endpoint not in remote_cache:
            remote_cache[endpoint] = connect_backends(endpoint)
        return remote_cache[endpoint]

    for spec in specs or ["mock"]:
        if spec == "mock":
            suite = mock_suite()
            continue
        role, sep, endpoint = spec.partition(":")
        if not sep or not endpoint:
            raise ConfigError(
                f"backend spec {spec!r} must be 'mock', 'all:URL', or 'role:URL'"
            )
        if role == "all":
            suite = remote(endpoint)
        elif role in _BACKEND_ROLES:
            suite = dataclasses.replace(suite, **{role: getattr(remote(endpoint), role)})
        else:
            raise ConfigError(
                f"unknown backend role {role!r}; expected all or one of"
                f" {', '.join(_BACKEND_ROLES)}"
            )
    return suite


def load_pipeline_config(path: Optional[str]) -> PipelineConfig:
    return load_config(path) if path else PipelineConfig()


def discover_inputs(in_path: str) -> list[tuple[str, str]]:
    """Resolve --in to (image_id, path) pairs; scene fixtures are *.json."""
    if os.path.isdir(in_path):
        pairs = [
            (os.path.splitext(name)[0], os.path.join(in_path, name))
            for name in sorted(os.listdir(in_path))
            if name.endswith(".json")
        ]
        if not pairs:
            raise DataError(f"no scene fixtures (*.json) under {in_path}")
        return pairs
    if os.path.isfile(in_path):
        return [(os.path.splitext(os.path.basename(in_path))[0], in_path)]
    raise DataError(f"input path {in_path} does not exist")


def load_input_refs(in_path: str) -> list[ImageRef]:
    refs = []
    for image_id, path in discover_inputs(in_path):
        scene = load_scene(path)  # validate early, fail with the file named
        refs.append(ImageRef.from_file(image_id, path, scene.width, scene.height))
    return refs


def _map_images(
    refs: Sequence[ImageRef], jobs: int, fn: Callable[[ImageRef], Any]
) -> list[Any]:
    if jobs <= 1:
        return [fn(ref) for ref in refs]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, refs))


def _save_image_artifact(image: ImageRef, path: str) -> None:
    """Persist a produced image: scene fixtures inline, remote ones by ref."""
    if image.payload is not None and image.path() is None:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        save_scene(image.scene(), path)
    else:
        _write_json(path, {"image": image.to_wire()})


# --- subcommands -----------------------------------------------------------------


def _record_detect_artifacts(
    out: str, report: DetectReport, record: RunRecord
) -> dict[str, Any]:
    image_id = report.result.image_id
    name = _safe_name(image_id)
    result_path = os.path.join(out, "results", f"{name}.json")
    probes_path = os.path.join(out, "probes", f"{name}.jsonl")
    trace_path = os.path.join(out, "trace", f"{name}.jsonl")
    _write_json(result_path, report.result.to_doc())
    _write_jsonl(probes_path, probe_log_rows(report.probes))
    _write_jsonl(trace_path, loop_trace_rows(report.loop_state))
    counts = {
        "redundant": sum(1 for f in report.result.findings if f.label.kind.value == "redundant"),
        "absent": sum(1 for f in report.result.findings if f.label.kind.value == "absent"),
    }
    entry = {
        "image_id": image_id,
        "result_path": result_path,
        "probes_path": probes_path,
        "trace_path": trace_path,
        "findings": counts,
    }
    for stage, seconds in report.timings.items():
        record.timings[stage] = record.timings.get(stage, 0.0) + seconds
    return entry


def cmd_detect(args: argparse.Namespace) -> int:
    config = load_pipeline_config(args.config)
    suite = build_suite(args.backend)
    refs = load_input_refs(args.in_path)
    record = _new_record("detect", args, config, {"path": args.in_path, "count": len(refs)})
    reports = _map_images(refs, args.jobs, lambda ref: run_detect(ref, config, suite))
    t0 = time.perf_counter()
    for report in reports:
        entry = _record_detect_artifacts(args.out, report, record)
        record.images.append(entry)
        print(
            f"{entry['image_id']}: redundant={entry['findings']['redundant']}"
            f" absent={entry['findings']['absent']}"
        )
    record.timings["total"] = _total_time(record) + (time.perf_counter() - t0)
    path = record.finalize(args.out, ["redundant_pass", "absent_pass", "total"])
    print(f"run record: {path}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = load_pipeline_config(args.config)
    suite = build_suite(args.backend)
    refs = load_input_refs(args.in_path)
    record = _new_record("run", args, config, {"path": args.in_path, "count": len(refs)})
    reports = _map_images(refs, args.jobs, lambda ref: run_full(ref, config, suite))
    t0 = time.perf_counter()
    for ref, report in zip(refs, reports):
        entry = _record_detect_artifacts(args.out, report.detect, record)
        name = _safe_name(entry["image_id"])
        report_path = os.path.join(args.out, "reports", f"{name}.json")
        repaired_path = os.path.join(args.out, "repaired", f"{name}.json")
        _write_json(report_path, repair_report(report.plan, config, ref.bounds))
        _save_image_artifact(report.repaired, repaired_path)
        entry["report_path"] = report_path
        entry["repaired_path"] = repaired_path
        record.images.append(entry)
        record.timings["repair_pass"] = record.timings.get("repair_pass", 0.0) + (
            report.timings.get("repair_pass", 0.0)
        )
        print(
            f"{entry['image_id']}: redundant={entry['findings']['redundant']}"
            f" absent={entry['findings']['absent']} repaired={report.repaired.id}"
        )
    record.timings["total"] = _total_time(record) + (time.perf_counter() - t0)
    path = record.finalize(
        args.out, ["redundant_pass", "absent_pass", "repair_pass", "total"]
    )
    print(f"run record: {path}")
    return 0


def cmd_repair(args: argparse.Namespace) -> int:
    config = load_pipeline_config(args.config)
    suite = build_suite(args.backend)
    refs = load_input_refs(args.in_path)
    results_dir = args.results or os.path.join(args.out, "results")
    record = _new_record("repair", args, config, {"path": args.in_path, "count": len(refs)})

    def one(ref: ImageRef) -> tuple[ImageRef, Any, ImageRef, float]:
        result_path = os.path.join(results_dir, f"{_safe_name(ref.id)}.json")
        try:
            with open(result_path, "r", encoding="utf-8") as fh:
                result = DetectionResult.from_doc(json.load(fh))
        except OSError as exc:
            raise DataError(
                f"no detection result for {ref.id} under {results_dir}: {exc}"
            ) from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"corrupt detection result {result_path}: {exc}") from exc
        t0 = time.perf_counter()
        plan = build_plan(result)
        repaired = execute_plan(ref, plan, config, suite)
        return ref, plan, repaired, time.perf_counter() - t0

    outputs = _map_images(refs, args.jobs, one)
    t0 = time.perf_counter()
    for ref, plan, repaired, seconds in outputs:
        name = _safe_name(ref.id)
        report_path = os.path.join(args.out, "reports", f"{name}.json")
        repaired_path = os.path.join(args.out, "repaired", f"{name}.json")
        _write_json(report_path, repair_report(plan, config, ref.bounds))
        _save_image_artifact(repaired, repaired_path)
        record.images.append(
            {
                "image_id": ref.id,
                "report_path": report_path,
                "repaired_path": repaired_path,
                "steps": len(plan.steps),
            }
        )
        record.timings["repair_pass"] = record.timings.get("repair_pass", 0.0) + seconds
        print(f"{ref.id}: steps={len(plan.steps)} repaired={repaired.id}")
    record.timings["total"] = _total_time(record) + (time.perf_counter() - t0)
    path = record.finalize(args.out, ["repair_pass", "total"])
    print(f"run record: {path}")
    return 0


def cmd_video_repair(args: argparse.Namespace) -> int:
    config = load_pipeline_config(args.config)
    suite = build_suite(args.backend)
    first = load_input_refs(args.first)[0]
    last = load_input_refs(args.last)[0]
    record = _new_record(
        "video-repair",
        args,
        config,
        {"first": args.first, "last": args.last, "frame_count": args.frames},
    )
    t0 = time.perf_counter()
    frames = repair_video(first, last, args.prompt, args.frames, config, suite)
    record.timings["video_pass"] = time.perf_counter() - t0
    frame_entries = []
    for index, frame in enumerate(frames):
        frame_path = os.path.join(args.out, "video", f"frame_{index:03d}.json")
        _save_image_artifact(frame, frame_path)
        frame_entries.append({"image_id": frame.id, "frame_path": frame_path})
    manifest_path = os.path.join(args.out, "video", "manifest.json")
    _write_json(
        manifest_path,
        {"prompt": args.prompt, "frames": [e["frame_path"] for e in frame_entries]},
    )
    record.images = frame_entries
    record.timings["total"] = record.timings["video_pass"]
    path = record.finalize(args.out, ["video_pass", "total"])
    print(f"frames: {len(frames)} -> {os.path.join(args.out, 'video')}")
    print(f"run record: {path}")
    return 0


def cmd_build_eval(args: argparse.Namespace) -> int:
    config = load_pipeline_config(args.config)
    suite = build_suite(args.backend)
    refs = load_input_refs(args.in_path)
    manifest = build_eval_split(refs, config, suite, name=args.name, split=args.split)
    frames_dir = os.path.join(args.out, "eval_frames")
    index = {}
    for sample in manifest.records:
        frame_path = os.path.join(frames_dir, f"{_safe_name(sample.masked_image.id)}.json")
        _save_image_artifact(sample.masked_image, frame_path)
        index[sample.masked_image.id] = frame_path
    _write_json(os.path.join(frames_dir, "index.json"), index)
    manifest_path = os.path.join(args.out, "eval_manifest.json")
    _write_json(manifest_path, manifest.to_doc())
    print(json.dumps({"counts": manifest.counts, "skipped": manifest.skipped}))
    print(f"manifest: {manifest_path}")
    return 0


def cmd_gen_train(args: argparse.Namespace) -> int:
    config = load_pipeline_config(args.config)
    suite = build_suite(args.backend)
    refs = load_input_refs(args.in_path)
    records = generate_training_records(refs, config, suite)
    frames_dir = os.path.join(args.out, "train_frames")
    saved = []
    for index, rec in enumerate(records):
        frame_path = os.path.join(frames_dir, f"sample_{index:05d}.json")
        _save_image_artifact(rec.image, frame_path)
        saved.append(
            TrainingRecord(
                image=ImageRef.from_file(
                    rec.image.id, frame_path, rec.image.width, rec.image.height
                ),
                instruction=rec.instruction,
                target=rec.target,
            )
        )
    train_path = os.path.join(args.out, "train.jsonl")
    os.makedirs(args.out, exist_ok=True)
    write_training_records(saved, train_path)
    print(json.dumps({"records": len(saved)}))
    print(f"training data: {train_path}")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    path = args.in_path or bundled_annotation_fixture()
    manifest = ingest_annotations(path)
    print(json.dumps(dataset_stats(manifest)))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    mode = TallyMode(args.mode)
    records = []
    try:
        with open(args.in_path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    records.append(eval_record_from_doc(json.loads(line)))
                except json.JSONDecodeError as exc:
                    raise DataError(f"{args.in_path}:{lineno}: not valid JSON: {exc}") from exc
    except OSError as exc:
        raise DataError(f"cannot read eval records {args.in_path}: {exc}") from exc
    report = evaluation_report(tally(records, mode, args.iou))
    report_path = os.path.join(args.out, "eval_report.json")
    _write_json(report_path, report)
    print(json.dumps(report, indent=2))
    return 0


def cmd_annotate_serve(args: argparse.Namespace) -> int:
    from .annotation import AnnotationStore, create_annotation_app, seed_tasks_from_frames

    store = AnnotationStore(args.store, required_approvals=args.required_approvals)
    if args.frames:
        created = seed_tasks_from_frames(store, args.frames)
        print(f"seeded {len(created)} tasks from {args.frames}")
    app = create_annotation_app(store, ui_dir=args.ui)
    if args.check:
        print(json.dumps({"tasks": len(store.list_tasks()), "store": args.store}))
        return 0
    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


# --- plumbing --------------------------------------------------------------------


def _new_record(
    command: str, args: argparse.Namespace, config: PipelineConfig, input_ref: dict
) -> RunRecord:
    return RunRecord(
        run_id=uuid.uuid4().hex[:12],
        command=command,
        config=dataclasses.asdict(config),
        backend_specs=list(args.backend or ["mock"]),
        input_ref=input_ref,
    )


def _total_time(record: RunRecord) -> float:
    return sum(v for k, v in record.timings.items() if k != "total")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file of pipeline thresholds")
    parser.add_argument(
        "--backend",
        action="append",
        metavar="SPEC",
        help="mock, all:URL, or role:URL (repeatable; later flags override)",
    )
    parser.add_argument("--out", default="out", help="artifact directory")
    parser.add_argument("--jobs", type=int, default=1, help="worker threads over images")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bodyfix",
        description="Detect and repair body-part abnormalities in generated imagery.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="find redundant and absent parts")
    _add_common(p)
    p.add_argument("--in", dest="in_path", required=True, help="scene fixture or directory")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("repair", help="replay stored findings into repaired images")
    _add_common(p)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--results", help="detection results dir (default OUT/results)")
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("run", help="detect then repair in one pass")
    _add_common(p)
    p.add_argument("--in", dest="in_path", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("video-repair", help="repair endpoint frames and interpolate")
    _add_common(p)
    p.add_argument("--first", required=True, help="first frame scene fixture")
    p.add_argument("--last", required=True, help="last frame scene fixture")
    p.add_argument("--prompt", required=True)
    p.add_argument("--frames", type=int, default=8, help="total frames to produce")
    p.set_defaults(func=cmd_video_repair)

    p = sub.add_parser("build-eval", help="mask one part per image into an eval split")
    _add_common(p)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--name", default="absent-eval")
    p.add_argument("--split", default="val")
    p.set_defaults(func=cmd_build_eval)

    p = sub.add_parser("gen-train", help="mask every part of every image for training")
    _add_common(p)
    p.add_argument("--in", dest="in_path", required=True)
    p.set_defaults(func=cmd_gen_train)

    p = sub.add_parser("stats", help="tally an annotation JSONL by abnormality kind")
    _add_common(p)
    p.add_argument("--in", dest="in_path", help="annotations JSONL (default: bundled)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    _add_common(p)
    p.add_argument("--in", dest="in_path", required=True, help="eval records JSONL")
    p.add_argument(
        "--mode",
        choices=[m.value for m in TallyMode],
        default=TallyMode.FLAG_LEVEL.value,
    )
    p.add_argument("--iou", type=float, default=0.5, help="box match threshold")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("annotate", help="annotation workflow commands")
    annotate_sub = p.add_subparsers(dest="annotate_command", required=True)
    ps = annotate_sub.add_parser("serve", help="run the labeling/review service")
    _add_common(ps)
    ps.add_argument("--store", required=True, help="task store directory")
    ps.add_argument("--frames", help="frames manifest JSONL or scene directory")
    ps.add_argument("--required-approvals", type=int, default=2)
    ps.add_argument("--host", default="127.0.0.1")
    ps.add_argument("--port", type=int, default=8008)
    ps.add_argument("--ui", help="static directory to mount at /ui")
    ps.add_argument("--check", action="store_true", help="validate the store and exit")
    ps.set_defaults(func=cmd_annotate_serve)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.jobs < 1:
            raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
