import json
import threading

import pytest
from fastapi.testclient import TestClient

from bodyfix.annotation import (
    AnnotationStore,
    TaskState,
    create_annotation_app,
    seed_tasks_from_frames,
)
from bodyfix.dataset import dataset_stats, ingest_annotations
from bodyfix.scene import save_scene
from worldgen import generate_scene

HAND = {"kind": "absent", "part": "hand"}
EAR = {"kind": "redundant", "part": "ear"}


@pytest.fixture
def store(tmp_path):
    return AnnotationStore(str(tmp_path / "store"))


@pytest.fixture
def client(store):
    return TestClient(create_annotation_app(store))


def make_task(client, frame_id="frame1", **kw):
    resp = client.post("/tasks", json={"frame_id": frame_id, **kw})
    assert resp.status_code == 201
    return resp.json()


def label(client, task_id, labels=(), reviewer=None, filter_reason=None):
    return client.post(
        f"/tasks/{task_id}/label",
        json={"labels": list(labels), "reviewer": reviewer, "filter_reason": filter_reason},
    )


def review(client, task_id, reviewer, verdict):
    return client.post(
        f"/tasks/{task_id}/review", json={"reviewer": reviewer, "verdict": verdict}
    )


class TestLifecycle:
    def test_label_then_two_approvals(self, client):
        task = make_task(client)
        tid = task["task_id"]
        assert task["state"] == "unlabeled"

        resp = label(client, tid, [HAND, EAR])
        assert resp.status_code == 200
        assert resp.json()["state"] == "labeled"
        assert resp.json()["labels"] == [HAND, EAR]

        assert review(client, tid, "alice", "approve").json()["state"] == "labeled"
        done = review(client, tid, "bob", "approve").json()
        assert done["state"] == "approved"
        assert sorted(done["approvals"]) == ["alice", "bob"]

    def test_filter_is_terminal(self, client):
        tid = make_task(client)["task_id"]
        resp = label(client, tid, [], filter_reason="nsfw")
        assert resp.json()["state"] == "filtered"
        assert label(client, tid, [HAND]).status_code == 409
        assert review(client, tid, "alice", "approve").status_code == 409

    def test_rejection_quorum(self, client):
        tid = make_task(client)["task_id"]
        label(client, tid, [HAND])
        assert review(client, tid, "alice", "reject").json()["state"] == "labeled"
        assert review(client, tid, "bob", "reject").json()["state"] == "rejected"

    def test_relabel_resets_review_tallies(self, client):
        tid = make_task(client)["task_id"]
        label(client, tid, [HAND])
        review(client, tid, "alice", "approve")
        relabeled = label(client, tid, [EAR]).json()
        assert relabeled["approvals"] == [] and relabeled["rejecters"] == []
        # the earlier approver may vote again on the new labels
        assert review(client, tid, "alice", "approve").status_code == 200

    def test_mixed_verdicts_need_quorum_on_one_side(self, client):
        tid = make_task(client)["task_id"]
        label(client, tid, [HAND])
        review(client, tid, "alice", "approve")
        review(client, tid, "bob", "reject")
        final = review(client, tid, "carol", "approve").json()
        assert final["state"] == "approved"


class TestValidationAndConflicts:
    def test_unknown_task_is_404(self, client):
        assert client.get("/tasks/nope").status_code == 404
        assert label(client, "nope", [HAND]).status_code == 404

    def test_bad_labels_are_422(self, client):
        tid = make_task(client)["task_id"]
        assert label(client, tid, [{"kind": "absent", "part": "tail"}]).status_code == 422
        assert label(client, tid, ["hand"]).status_code == 422
        assert label(client, tid, [HAND], filter_reason="nsfw").status_code == 422
        assert label(client, tid, [], filter_reason="blurry").status_code == 422

    def test_review_before_label_is_409(self, client):
        tid = make_task(client)["task_id"]
        assert review(client, tid, "alice", "approve").status_code == 409

    def test_duplicate_reviewer_is_409(self, client):
        tid = make_task(client)["task_id"]
        label(client, tid, [HAND])
        review(client, tid, "alice", "approve")
        assert review(client, tid, "alice", "approve").status_code == 409
        assert review(client, tid, "alice", "reject").status_code == 409

    def test_bad_verdict_is_422(self, client):
        tid = make_task(client)["task_id"]
        label(client, tid, [HAND])
        assert review(client, tid, "alice", "maybe").status_code == 422

    def test_duplicate_task_id_is_409(self, client):
        make_task(client, task_id="t1")
        resp = client.post("/tasks", json={"frame_id": "other", "task_id": "t1"})
        assert resp.status_code == 409


class TestLeasing:
    def test_queue_hands_out_oldest_then_204(self, client):
        a = make_task(client, "frame_a", task_id="a")["task_id"]
        b = make_task(client, "frame_b", task_id="b")["task_id"]
        first = client.get("/tasks/next", params={"reviewer": "alice"}).json()
        assert first["task_id"] == a
        # alice's open lease is re-offered, not advanced
        again = client.get("/tasks/next", params={"reviewer": "alice"}).json()
        assert again["task_id"] == a
        second = client.get("/tasks/next", params={"reviewer": "bob"}).json()
        assert second["task_id"] == b
        assert client.get("/tasks/next", params={"reviewer": "carol"}).status_code == 204

    def test_lease_blocks_other_labelers(self, client):
        tid = make_task(client)["task_id"]
        client.get("/tasks/next", params={"reviewer": "alice"})
        assert label(client, tid, [HAND], reviewer="bob").status_code == 409
        assert label(client, tid, [HAND], reviewer="alice").status_code == 200

    def test_labeled_tasks_offered_for_review_skipping_prior_voters(self, client):
        tid = make_task(client)["task_id"]
        label(client, tid, [HAND])
        leased = client.get("/tasks/next", params={"reviewer": "alice"}).json()
        assert leased["task_id"] == tid and leased["state"] == "in_review"
        assert leased["round"] == 1
        review(client, tid, "alice", "approve")
        # alice already voted: the queue must not re-offer it to her
        assert client.get("/tasks/next", params={"reviewer": "alice"}).status_code == 204
        offered = client.get("/tasks/next", params={"reviewer": "bob"}).json()
        assert offered["task_id"] == tid and offered["round"] == 2

    def test_in_review_lease_blocks_other_reviewers(self, client):
        tid = make_task(client)["task_id"]
        label(client, tid, [HAND])
        client.get("/tasks/next", params={"reviewer": "alice"})
        assert review(client, tid, "bob", "approve").status_code == 409
        assert review(client, tid, "alice", "approve").status_code == 200


class TestQueriesAndExport:
    def test_list_filter_and_stats(self, client):
        a = make_task(client, "fa")["task_id"]
        make_task(client, "fb")
        label(client, a, [HAND])
        labeled = client.get("/tasks", params={"state": "labeled"}).json()["tasks"]
        assert [t["task_id"] for t in labeled] == [a]
        assert client.get("/tasks", params={"state": "weird"}).status_code == 422
        stats = client.get("/stats").json()
        assert stats["states"]["labeled"] == 1
        assert stats["states"]["unlabeled"] == 1
        assert stats["total"] == 2

    def test_frame_endpoint_serves_the_scene(self, client, tmp_path):
        scene, _ = generate_scene(1)
        path = str(tmp_path / "frame.json")
        save_scene(scene, path)
        tid = make_task(client, "f1", frame_path=path)["task_id"]
        doc = client.get(f"/tasks/{tid}/frame").json()
        assert doc["width"] == scene.width
        bare = make_task(client, "f2")["task_id"]
        assert client.get(f"/tasks/{bare}/frame").status_code == 404

    def test_export_round_trips_through_ingest(self, client, tmp_path):
        for i, labels in enumerate(([HAND], [EAR], [], [HAND, EAR])):
            tid = make_task(client, f"frame{i}")["task_id"]
            label(client, tid, labels)
            review(client, tid, "alice", "approve")
            review(client, tid, "bob", "approve")
        # one rejected frame that must not appear in the export
        tid = make_task(client, "rejected")["task_id"]
        label(client, tid, [HAND])
        review(client, tid, "alice", "reject")
        review(client, tid, "bob", "reject")

        body = client.get("/export").text
        path = tmp_path / "export.jsonl"
        path.write_text(body)
        manifest = ingest_annotations(str(path))
        assert dataset_stats(manifest) == {
            "absent": 2,
            "redundant": 2,
            "no_abnormality": 1,
            "frame_total": 4,
            "filtered": 0,
        }
        for line in body.splitlines():
            doc = json.loads(line)
            assert doc["review"]["status"] == "approved"
            assert sorted(doc["review"]["reviewer_ids"]) == ["alice", "bob"]


class TestRepairReviews:
    @pytest.fixture
    def frames(self, tmp_path):
        scene, _ = generate_scene(2)
        orig = str(tmp_path / "orig.json")
        fixed = str(tmp_path / "fixed.json")
        save_scene(scene, orig)
        save_scene(scene, fixed)
        return orig, fixed

    def test_create_view_and_verdict(self, client, frames):
        orig, fixed = frames
        created = client.post(
            "/repairs", json={"original_path": orig, "repaired_path": fixed}
        )
        assert created.status_code == 201
        rid = created.json()["repair_id"]

        doc = client.get(f"/repairs/{rid}").json()
        assert "original" in doc and "repaired" in doc
        assert doc["original"]["width"] == doc["repaired"]["width"]

        verdict = client.post(
            f"/repairs/{rid}/verdict", json={"reviewer": "alice", "verdict": "approve"}
        ).json()
        assert verdict["verdict"] == "approve" and verdict["reviewer"] == "alice"
        second = client.post(
            f"/repairs/{rid}/verdict", json={"reviewer": "bob", "verdict": "reject"}
        )
        assert second.status_code == 409

    def test_missing_image_path_rejected(self, client, tmp_path):
        resp = client.post(
            "/repairs",
            json={"original_path": str(tmp_path / "no.json"), "repaired_path": str(tmp_path / "no.json")},
        )
        assert resp.status_code == 422

    def test_listing(self, client, frames):
        orig, fixed = frames
        client.post("/repairs", json={"original_path": orig, "repaired_path": fixed})
        assert len(client.get("/repairs").json()["repairs"]) == 1


class TestStoreInternals:
    def test_seed_tasks_from_directory_skips_existing(self, store, tmp_path):
        frames_dir = tmp_path / "frames"
        frames_dir.mkdir()
        for i in range(3):
            scene, _ = generate_scene(i)
            save_scene(scene, str(frames_dir / f"frame{i}.json"))
        created = seed_tasks_from_frames(store, str(frames_dir))
        assert len(created) == 3
        assert seed_tasks_from_frames(store, str(frames_dir)) == []
        assert {t.frame_id for t in store.list_tasks()} == {"frame0", "frame1", "frame2"}

    def test_seed_tasks_from_manifest(self, store, tmp_path):
        manifest = tmp_path / "frames.jsonl"
        manifest.write_text('{"frame_id": "a"}\n{"frame_id": "b", "path": "x.json"}\n')
        created = seed_tasks_from_frames(store, str(manifest))
        assert [t.frame_id for t in created] == ["a", "b"]
        assert created[1].frame_path == "x.json"

    def test_state_survives_reopen(self, store, tmp_path):
        task = store.create_task("frame1")
        store.apply_label(task.task_id, [HAND])
        reopened = AnnotationStore(store.root)
        loaded = reopened.get_task(task.task_id)
        assert loaded.state is TaskState.LABELED
        assert loaded.labels[0].part.value == "hand"

    def test_concurrent_reviews_reach_quorum_exactly_once(self, store):
        task = store.create_task("frame1")
        store.apply_label(task.task_id, [HAND])
        outcomes = []

        def vote(name):
            try:
                outcomes.append(store.apply_review(task.task_id, name, "approve").state)
            except Exception as exc:
                outcomes.append(exc)

        threads = [threading.Thread(target=vote, args=(f"r{i}",)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        final = store.get_task(task.task_id)
        assert final.state is TaskState.APPROVED
        assert len(final.approvals) == 2
        approved_states = [o for o in outcomes if o is TaskState.APPROVED]
        assert len(approved_states) == 1
