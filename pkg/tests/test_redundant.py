import json
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bodyfix.core import (
    AbnormalityKind,
    BBox,
    BodyPartClass,
    ImageRef,
    PipelineConfig,
    Stage,
)
from bodyfix.redundant import (
    detect_redundant,
    probe_log_rows,
    replay_probe_verdicts,
    write_probe_log,
)
from bodyfix.scene import PartNode
from worldgen import canonical_person, single_person_scene


def ref(scene):
    return ImageRef.from_scene("img", scene)


class TestDetection:
    def test_clean_person_yields_no_findings(self, suite, config):
        findings, probes = detect_redundant(ref(single_person_scene()), config, suite)
        assert findings == []
        # every grounded part was probed and survived regeneration
        assert len(probes) == 11
        assert all(p.reground_score == 1.0 and not p.verdict for p in probes)

    def test_floating_hand_is_flagged_once(self, suite, config):
        extra = PartNode(BodyPartClass.HAND, BBox(300, 30, 330, 60))
        scene = single_person_scene(floating_parts=(extra,))
        findings, probes = detect_redundant(ref(scene), config, suite)
        assert len(findings) == 1
        f = findings[0]
        assert f.label.kind is AbnormalityKind.REDUNDANT
        assert f.label.part is BodyPartClass.HAND
        assert f.box == extra.box
        assert f.stage is Stage.REDUNDANT and f.iteration == 0
        assert len(probes) == 12

    def test_owned_surplus_flags_every_instance(self, suite, config):
        # a third hand overlapping the torso: regeneration of any one hand
        # region cannot justify three, so all three probes fail
        person = canonical_person()
        third = PartNode(BodyPartClass.HAND, BBox(100, 220, 140, 260))
        person = type(person)(
            person_id=person.person_id,
            body_box=person.body_box,
            parts=person.parts + (third,),
            absent_slots=person.absent_slots,
        )
        scene = single_person_scene(person)
        findings, _ = detect_redundant(ref(scene), config, suite)
        flagged = Counter(f.label.part for f in findings)
        assert flagged == Counter({BodyPartClass.HAND: 3})

    def test_probes_are_independent_of_each_other(self, suite, config):
        # two separate floating ears: both flagged; neither probe sees the
        # other's regeneration, because each starts from the original image
        ears = (
            PartNode(BodyPartClass.EAR, BBox(300, 30, 314, 58)),
            PartNode(BodyPartClass.EAR, BBox(300, 100, 314, 128)),
        )
        scene = single_person_scene(floating_parts=ears)
        findings, probes = detect_redundant(ref(scene), config, suite)
        assert Counter(f.label.part for f in findings) == Counter({BodyPartClass.EAR: 2})
        for probe in probes:
            assert probe.regenerated.id.startswith("img|inpaint")

    def test_regrounding_ignores_global_threshold(self, suite):
        # tau = 0.99 keeps honest parts: re-grounding runs at threshold 0 and
        # the mock scores 1.0, which is not below 0.99
        config = PipelineConfig(grounding_threshold=0.99)
        findings, probes = detect_redundant(ref(single_person_scene()), config, suite)
        assert findings == []
        assert all(p.reground_score == 1.0 for p in probes)


class TestProbeLog:
    def test_rows_round_trip_through_file(self, suite, config, tmp_path):
        extra = PartNode(BodyPartClass.FOOT, BBox(290, 30, 335, 70))
        scene = single_person_scene(floating_parts=(extra,))
        _, probes = detect_redundant(ref(scene), config, suite)
        path = str(tmp_path / "probes.jsonl")
        write_probe_log(probes, path)
        rows = [json.loads(line) for line in open(path)]
        assert rows == probe_log_rows(probes)
        assert {tuple(r) for r in rows} == {("part", "box", "reground_score", "verdict")}

    def test_replay_agrees_with_live_verdicts(self, suite, config):
        extra = PartNode(BodyPartClass.LEG, BBox(300, 30, 335, 170))
        scene = single_person_scene(floating_parts=(extra,))
        findings, probes = detect_redundant(ref(scene), config, suite)
        replayed = replay_probe_verdicts(probe_log_rows(probes), config.grounding_threshold)
        assert replayed == {
            (f.label.part.value, f.box.as_tuple()) for f in findings
        }

    @given(
        scores=st.lists(st.floats(min_value=0, max_value=1), min_size=1, max_size=30),
        t1=st.floats(min_value=0, max_value=1),
        t2=st.floats(min_value=0, max_value=1),
    )
    @settings(max_examples=150)
    def test_replay_is_monotone_in_threshold(self, scores, t1, t2):
        rows = [
            {"part": "hand", "box": [i, 0, i + 1, 1], "reground_score": s, "verdict": None}
            for i, s in enumerate(scores)
        ]
        lo, hi = sorted((t1, t2))
        assert replay_probe_verdicts(rows, lo) <= replay_probe_verdicts(rows, hi)
