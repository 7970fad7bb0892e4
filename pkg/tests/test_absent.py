from collections import Counter
from dataclasses import replace

import pytest

from bodyfix.absent import (
    AbsentLoopState,
    DiscardReason,
    detect_absent_cyclic,
    loop_trace_rows,
)
from bodyfix.core import (
    AbnormalityFinding,
    AbnormalityKind,
    AbnormalityLabel,
    BBox,
    BodyPartClass,
    ImageRef,
    PipelineConfig,
    Stage,
)
from worldgen import make_person, single_person_scene


def ref(scene):
    return ImageRef.from_scene("img", scene)


class CountingAbsent:
    """Wraps a detector to count calls; optionally always proposes."""

    def __init__(self, inner=None, always=None):
        self.calls = 0
        self._inner = inner
        self._always = always

    def detect_absent(self, image):
        self.calls += 1
        if self._always is not None:
            return self._always
        return self._inner.detect_absent(image)


class TestLoop:
    def test_complete_person_terminates_immediately(self, suite, config):
        state = detect_absent_cyclic(ref(single_person_scene()), [], config, suite)
        assert state.iteration == 0
        assert state.accepted == () and state.discarded == ()
        assert state.current_image.id == "img"

    def test_each_deficit_repaired_then_loop_quiets(self, suite, config):
        person = make_person(
            "p0", 45, 120, Counter({BodyPartClass.HAND: 1, BodyPartClass.EAR: 1})
        )
        scene = single_person_scene(person)
        state = detect_absent_cyclic(ref(scene), [], config, suite)
        assert state.iteration == 2
        assert [f.label.part for f in state.accepted] == [
            BodyPartClass.EAR,
            BodyPartClass.HAND,
        ]
        assert [f.iteration for f in state.accepted] == [0, 1]
        assert state.discarded == ()
        # repairs landed on the working copy, not the input
        final = state.current_image.scene()
        assert final.persons[0].count(BodyPartClass.HAND) == 2
        assert final.persons[0].count(BodyPartClass.EAR) == 2
        assert scene.persons[0].count(BodyPartClass.HAND) == 1

    def test_accepted_boxes_come_from_the_proposal(self, suite, config):
        person = make_person("p0", 45, 120, Counter({BodyPartClass.FOOT: 1}))
        scene = single_person_scene(person)
        state = detect_absent_cyclic(ref(scene), [], config, suite)
        assert len(state.accepted) == 1
        assert state.accepted[0].box == person.absent_slots[0].box


class TestGates:
    def test_matching_redundant_finding_discards(self, suite, config):
        person = make_person("p0", 45, 120, Counter({BodyPartClass.HAND: 1}))
        scene = single_person_scene(person)
        slot = person.absent_slots[0].box
        redundant = AbnormalityFinding(
            AbnormalityLabel(AbnormalityKind.REDUNDANT, BodyPartClass.HAND),
            slot,
            Stage.REDUNDANT,
        )
        state = detect_absent_cyclic(ref(scene), [redundant], config, suite)
        assert state.accepted == ()
        assert len(state.discarded) == 1
        assert state.discarded[0][1] is DiscardReason.MATCHES_REDUNDANT

    def test_gate_requires_same_class(self, suite, config):
        person = make_person("p0", 45, 120, Counter({BodyPartClass.HAND: 1}))
        scene = single_person_scene(person)
        slot = person.absent_slots[0].box
        other_class = AbnormalityFinding(
            AbnormalityLabel(AbnormalityKind.REDUNDANT, BodyPartClass.FOOT),
            slot,
            Stage.REDUNDANT,
        )
        state = detect_absent_cyclic(ref(scene), [other_class], config, suite)
        assert len(state.accepted) == 1

    def test_gate_requires_overlap(self, suite, config):
        person = make_person("p0", 45, 120, Counter({BodyPartClass.HAND: 1}))
        scene = single_person_scene(person)
        far = AbnormalityFinding(
            AbnormalityLabel(AbnormalityKind.REDUNDANT, BodyPartClass.HAND),
            BBox(300, 10, 330, 40),
            Stage.REDUNDANT,
        )
        state = detect_absent_cyclic(ref(scene), [far], config, suite)
        assert len(state.accepted) == 1

    def test_already_present_part_discards(self, suite, config):
        # adversarial detector insists a visible hand is absent
        scene = single_person_scene()
        hand = next(
            n for p in scene.persons for n in p.parts if n.part is BodyPartClass.HAND
        )
        stub = CountingAbsent(always=(BodyPartClass.HAND, hand.box))
        wired = replace(suite, absent=stub)
        state = detect_absent_cyclic(ref(scene), [], config, wired)
        assert state.accepted == ()
        assert state.discarded[0][1] is DiscardReason.ALREADY_PRESENT
        assert stub.calls == 1

    def test_presence_gate_respects_threshold_and_iou(self, suite):
        # proposal box shifted off the real hand: low IoU, gate stays open,
        # repair proceeds on the working copy
        config = PipelineConfig()
        scene = single_person_scene()
        hand = next(
            n for p in scene.persons for n in p.parts if n.part is BodyPartClass.HAND
        )
        shifted = BBox(
            hand.box.x_min + 60, hand.box.y_min, hand.box.x_max + 60, hand.box.y_max
        )
        stub = StopAfterFirst((BodyPartClass.HAND, shifted))
        wired = replace(suite, absent=stub)
        state = detect_absent_cyclic(ref(scene), [], config, wired)
        assert len(state.accepted) == 1


class StopAfterFirst:
    """Proposes once, then reports a quiet image."""

    def __init__(self, proposal):
        self._proposal = proposal
        self.calls = 0

    def detect_absent(self, image):
        self.calls += 1
        return self._proposal if self.calls == 1 else None


class TestTermination:
    @pytest.mark.parametrize("cap", [1, 3, 6])
    def test_adversarial_detector_stops_at_cap(self, suite, config, cap):
        # a detector that always proposes a fresh absence: the loop must make
        # exactly cap + 1 calls, accept cap findings, then discard the last
        person = make_person(
            "p0", 45, 120,
            Counter({BodyPartClass.EAR: 2, BodyPartClass.HAND: 2, BodyPartClass.ARM: 2,
                     BodyPartClass.LEG: 2, BodyPartClass.FOOT: 2}),
        )
        scene = single_person_scene(person)

        class EndlessAbsent:
            def __init__(self):
                self.calls = 0
                self._slots = list(person.absent_slots)

            def detect_absent(self, image):
                self.calls += 1
                slot = self._slots[(self.calls - 1) % len(self._slots)]
                return (slot.part, slot.box)

        endless = EndlessAbsent()
        wired = replace(suite, absent=endless)
        cfg = PipelineConfig(
            max_absent_iterations=cap,
            # gates disabled by construction: unique slots, empty redundant list
            presence_threshold=config.presence_threshold,
        )
        state = detect_absent_cyclic(ref(scene), [], cfg, wired)
        assert endless.calls == cap + 1
        assert len(state.accepted) == cap
        assert [f.iteration for f in state.accepted] == list(range(cap))
        assert state.discarded[-1][1] is DiscardReason.MAX_ITERATIONS

    def test_wrapped_mock_counts_calls(self, suite, config):
        person = make_person("p0", 45, 120, Counter({BodyPartClass.LEG: 1}))
        scene = single_person_scene(person)
        counting = CountingAbsent(inner=suite.absent)
        wired = replace(suite, absent=counting)
        state = detect_absent_cyclic(ref(scene), [], config, wired)
        # one accepting call plus the quiet call that ends the loop
        assert counting.calls == 2
        assert len(state.accepted) == 1


class TestStateAndTrace:
    def test_state_rejects_non_absent_findings(self):
        wrong = AbnormalityFinding(
            AbnormalityLabel(AbnormalityKind.REDUNDANT, BodyPartClass.HAND),
            BBox(0, 0, 5, 5),
            Stage.REDUNDANT,
        )
        with pytest.raises(ValueError):
            AbsentLoopState(
                iteration=0,
                current_image=ImageRef(id="x", width=5, height=5),
                accepted=(wrong,),
                discarded=(),
            )

    def test_trace_rows_cover_every_event(self, suite, config):
        person = make_person("p0", 45, 120, Counter({BodyPartClass.EAR: 1}))
        scene = single_person_scene(person)
        state = detect_absent_cyclic(ref(scene), [], config, suite)
        rows = loop_trace_rows(state)
        assert rows[0]["action"] == "accepted" and rows[0]["part"] == "ear"
        assert rows[-1] == {"iteration": 1, "action": "terminated"}
