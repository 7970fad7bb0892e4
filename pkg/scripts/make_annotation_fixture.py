"""Regenerate the bundled annotation tallies fixture.

Writes src/bodyfix/data/aigc_human_aware_1k.jsonl: 1000 reviewed frames
whose kind buckets tally to absent=649, redundant=158, no_abnormality=343
(150 frames carry both kinds, so buckets overlap). Deterministic; rerunning
reproduces the file byte for byte.
"""
from __future__ import annotations

import json
import os
import random

PARTS = ("head", "ear", "hand", "arm", "leg", "foot")
REVIEWERS = ["annotator_a", "annotator_b"]

ABSENT_ONLY = 499
REDUNDANT_ONLY = 8
BOTH = 150
CLEAN = 343


def labels_for(rng: random.Random, kinds: tuple[str, ...]) -> list[dict]:
    labels = []
    for kind in kinds:
        count = rng.choice((1, 1, 1, 2)) if kind == "absent" else 1
        for part in rng.sample(PARTS, count):
            labels.append({"kind": kind, "part": part})
    return labels


def main() -> None:
    rng = random.Random(20240917)
    kinds_per_frame = (
        [("absent",)] * ABSENT_ONLY
        + [("redundant",)] * REDUNDANT_ONLY
        + [("absent", "redundant")] * BOTH
        + [()] * CLEAN
    )
    rng.shuffle(kinds_per_frame)

    out_path = os.path.join(
        os.path.dirname(__file__), "..", "src", "bodyfix", "data",
        "aigc_human_aware_1k.jsonl",
    )
    out_path = os.path.normpath(out_path)
    os.makedirs(os.path.dirname(out_path), exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        for index, kinds in enumerate(kinds_per_frame, start=1):
            record = {
                "frame_id": f"aigc_human_aware_{index:06d}",
                "labels": labels_for(rng, kinds),
                "filter_reason": None,
                "review": {
                    "round": 2,
                    "reviewer_ids": REVIEWERS,
                    "status": "approved",
                },
            }
            fh.write(json.dumps(record) + "\n")
    print(f"wrote {len(kinds_per_frame)} records to {out_path}")


if __name__ == "__main__":
    main()
