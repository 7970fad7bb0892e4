import pytest

from bodyfix.core import BBox, BodyPartClass, DataError
from bodyfix.scene import (
    AbsentSlot,
    PartNode,
    PersonNode,
    SceneGraph,
    load_scene,
    save_scene,
    scene_fingerprint,
    scene_from_doc,
    scene_to_doc,
)

from worldgen import canonical_person, generate_scene, single_person_scene


class TestValidation:
    def test_boxes_must_fit_scene(self):
        person = PersonNode(
            person_id="p", body_box=BBox(0, 0, 50, 50),
            parts=(PartNode(BodyPartClass.HAND, BBox(40, 40, 70, 70)),),
        )
        with pytest.raises(DataError):
            SceneGraph(width=60, height=60, persons=(person,))

    def test_part_must_touch_body(self):
        person = PersonNode(
            person_id="p", body_box=BBox(0, 0, 50, 50),
            parts=(PartNode(BodyPartClass.HAND, BBox(80, 80, 90, 90)),),
        )
        with pytest.raises(DataError):
            SceneGraph(width=100, height=100, persons=(person,))

    def test_occluded_flag_needs_an_occluder(self):
        node = PartNode(BodyPartClass.HAND, BBox(10, 10, 20, 20), occluded=True)
        with pytest.raises(DataError):
            SceneGraph(width=50, height=50, floating_parts=(node,))
        # half-covering occluder makes the same flag legal
        SceneGraph(
            width=50, height=50, floating_parts=(node,),
            occluders=(BBox(10, 10, 20, 15),),
        )

    def test_coverage_threshold_is_half(self):
        scene = SceneGraph(width=50, height=50, occluders=(BBox(0, 0, 10, 5),))
        assert scene.is_covered(BBox(0, 0, 10, 10))
        assert not scene.is_covered(BBox(0, 0, 10, 11))

    def test_dims_positive(self):
        with pytest.raises(DataError):
            SceneGraph(width=0, height=10)


class TestPersonHelpers:
    def test_count(self):
        person = canonical_person()
        assert person.count(BodyPartClass.HAND) == 2
        assert person.count(BodyPartClass.HEAD) == 1

    def test_iter_parts_orders_persons_then_floating(self):
        hand = PartNode(BodyPartClass.HAND, BBox(300, 10, 315, 25))
        scene = single_person_scene(floating_parts=(hand,))
        seq = list(scene.iter_parts())
        assert seq[-1] == (None, hand)
        assert all(owner is not None for owner, _ in seq[:-1])
        assert len(seq) == 11 + 1


class TestSerialization:
    def test_round_trip_identity(self):
        for seed in range(10):
            scene, _ = generate_scene(seed)
            assert scene_from_doc(scene_to_doc(scene)) == scene

    def test_fingerprint_tracks_content(self):
        scene, _ = generate_scene(0)
        same, _ = generate_scene(0)
        other, _ = generate_scene(1)
        assert scene_fingerprint(scene) == scene_fingerprint(same)
        assert scene_fingerprint(scene) != scene_fingerprint(other)

    def test_file_round_trip(self, tmp_path):
        scene, _ = generate_scene(3)
        path = str(tmp_path / "scene.json")
        save_scene(scene, path)
        assert load_scene(path) == scene

    def test_load_errors(self, tmp_path):
        with pytest.raises(DataError):
            load_scene(str(tmp_path / "missing.json"))
        bad = tmp_path / "bad.json"
        bad.write_text("nope")
        with pytest.raises(DataError):
            load_scene(str(bad))
        arr = tmp_path / "arr.json"
        arr.write_text("[]")
        with pytest.raises(DataError):
            load_scene(str(arr))

    def test_doc_errors_name_the_culprit(self):
        with pytest.raises(DataError):
            scene_from_doc({"height": 10})
        doc = scene_to_doc(single_person_scene())
        doc["persons"][0]["parts"][0]["part"] = "tentacle"
        with pytest.raises(DataError) as err:
            scene_from_doc(doc)
        assert "p0" in str(err.value)


class TestWorldgenOracleAgreement:
    def test_canonical_person_has_no_abnormalities(self):
        from worldgen import oracle_abnormalities

        assert not oracle_abnormalities(single_person_scene())

    def test_generator_expectation_matches_oracle(self):
        from worldgen import oracle_abnormalities

        for seed in range(120):
            scene, expected = generate_scene(seed)
            assert oracle_abnormalities(scene) == expected, f"seed {seed}"
