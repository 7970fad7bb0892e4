import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bodyfix.core import (
    CANONICAL_COUNTS,
    AbnormalityFinding,
    AbnormalityKind,
    AbnormalityLabel,
    BBox,
    BodyPartClass,
    ConfigError,
    DetectionResult,
    ImageRef,
    PartDetection,
    PipelineConfig,
    PromptTemplateSet,
    Stage,
    all_labels,
    config_from_dict,
    coverage,
    default_templates,
    expand_box,
    intersection_area,
    iou,
    label_to_doc,
    load_config,
    parse_label,
    regeneration_prompt,
    render_prompt,
)


def boxes(max_side: int = 200):
    coords = st.integers(min_value=0, max_value=max_side)
    return st.tuples(coords, coords, coords, coords).filter(
        lambda t: t[0] < t[2] and t[1] < t[3]
    ).map(lambda t: BBox(*t))


class TestBodyPartClass:
    def test_canonical_counts(self):
        assert CANONICAL_COUNTS[BodyPartClass.HEAD] == 1
        for part in (
            BodyPartClass.EAR,
            BodyPartClass.HAND,
            BodyPartClass.ARM,
            BodyPartClass.LEG,
            BodyPartClass.FOOT,
        ):
            assert CANONICAL_COUNTS[part] == 2

    def test_canonical_counts_immutable(self):
        with pytest.raises(TypeError):
            CANONICAL_COUNTS[BodyPartClass.HEAD] = 5

    def test_class_ordering(self):
        ordered = sorted(BodyPartClass, key=lambda p: p.order)
        assert [p.value for p in ordered] == ["head", "ear", "hand", "arm", "leg", "foot"]
        assert BodyPartClass.HEAD < BodyPartClass.FOOT


class TestLabels:
    def test_all_labels_is_twelve_kind_major(self):
        labels = all_labels()
        assert len(labels) == 12
        assert labels[0] == AbnormalityLabel(AbnormalityKind.ABSENT, BodyPartClass.HEAD)
        assert labels[6] == AbnormalityLabel(AbnormalityKind.REDUNDANT, BodyPartClass.HEAD)
        assert len(set(labels)) == 12

    def test_round_trip(self):
        for label in all_labels():
            assert parse_label(label_to_doc(label)) == label

    def test_parse_rejects_unknown(self):
        from bodyfix.core import DataError

        with pytest.raises(DataError):
            parse_label({"kind": "absent", "part": "tail"})
        with pytest.raises(DataError):
            parse_label({"kind": "present", "part": "hand"})
        with pytest.raises(DataError):
            parse_label({"part": "hand"})

    def test_sortable(self):
        labels = sorted(all_labels(), reverse=True)
        assert labels[-1].kind is AbnormalityKind.ABSENT
        assert labels[-1].part is BodyPartClass.HEAD


class TestBBox:
    def test_validation(self):
        with pytest.raises(ValueError):
            BBox(5, 0, 5, 10)
        with pytest.raises(ValueError):
            BBox(0, 10, 10, 5)
        with pytest.raises(ValueError):
            BBox(-1, 0, 10, 10)
        with pytest.raises(ValueError):
            BBox(0.5, 0, 10, 10)

    def test_geometry(self):
        b = BBox(2, 3, 10, 7)
        assert b.width == 8 and b.height == 4 and b.area == 32
        assert b.within(10, 7) and not b.within(9, 7)

    def test_iou_examples(self):
        a = BBox(0, 0, 10, 10)
        assert iou(a, a) == 1.0
        assert iou(a, BBox(10, 10, 20, 20)) == 0.0
        assert iou(a, BBox(5, 0, 15, 10)) == pytest.approx(50 / 150)

    def test_coverage_is_asymmetric(self):
        part = BBox(0, 0, 10, 10)
        region = BBox(0, 0, 100, 100)
        assert coverage(part, region) == 1.0
        assert coverage(region, part) == pytest.approx(0.01)

    @given(boxes(), boxes())
    def test_iou_symmetric_and_bounded(self, a, b):
        assert iou(a, b) == iou(b, a)
        assert 0.0 <= iou(a, b) <= 1.0
        assert intersection_area(a, b) <= min(a.area, b.area)


class TestExpandBox:
    def test_worked_example(self):
        assert expand_box(BBox(10, 10, 20, 20), 0.2, (100, 100)) == BBox(8, 8, 22, 22)

    def test_half_up_rounding(self):
        # 0.15 * 10 = 1.5 rounds up to 2
        assert expand_box(BBox(10, 10, 20, 20), 0.15, (100, 100)) == BBox(8, 8, 22, 22)

    def test_clamps_to_bounds(self):
        assert expand_box(BBox(0, 0, 10, 10), 0.5, (12, 12)) == BBox(0, 0, 12, 12)

    def test_zero_ratio_is_identity(self):
        b = BBox(3, 4, 8, 9)
        assert expand_box(b, 0.0, (20, 20)) == b

    def test_rejects_negative_ratio_and_escaped_box(self):
        with pytest.raises(ValueError):
            expand_box(BBox(0, 0, 5, 5), -0.1, (10, 10))
        with pytest.raises(ValueError):
            expand_box(BBox(0, 0, 50, 50), 0.1, (10, 10))

    @given(boxes(max_side=100), st.floats(min_value=0, max_value=2))
    @settings(max_examples=200)
    def test_contains_input_and_stays_in_bounds(self, box, ratio):
        out = expand_box(box, ratio, (120, 120))
        assert out.x_min <= box.x_min and out.y_min <= box.y_min
        assert out.x_max >= box.x_max and out.y_max >= box.y_max
        assert out.within(120, 120)

    @given(boxes(max_side=100), st.floats(min_value=0, max_value=1), st.floats(min_value=0, max_value=1))
    @settings(max_examples=200)
    def test_monotone_in_ratio(self, box, r1, r2):
        lo, hi = sorted((r1, r2))
        small = expand_box(box, lo, (200, 200))
        big = expand_box(box, hi, (200, 200))
        assert coverage(small, big) == 1.0


class TestFindings:
    def test_stage_kind_coherence(self):
        red = AbnormalityLabel(AbnormalityKind.REDUNDANT, BodyPartClass.HAND)
        ab = AbnormalityLabel(AbnormalityKind.ABSENT, BodyPartClass.HAND)
        box = BBox(0, 0, 5, 5)
        AbnormalityFinding(red, box, Stage.REDUNDANT)
        AbnormalityFinding(ab, box, Stage.ABSENT, iteration=3)
        with pytest.raises(ValueError):
            AbnormalityFinding(ab, box, Stage.REDUNDANT)
        with pytest.raises(ValueError):
            AbnormalityFinding(red, box, Stage.ABSENT)
        with pytest.raises(ValueError):
            AbnormalityFinding(red, box, Stage.REDUNDANT, iteration=1)

    def test_doc_round_trip(self):
        f = AbnormalityFinding(
            AbnormalityLabel(AbnormalityKind.ABSENT, BodyPartClass.LEG),
            BBox(1, 2, 3, 4),
            Stage.ABSENT,
            iteration=2,
        )
        assert AbnormalityFinding.from_doc(f.to_doc()) == f

    def test_result_orders_redundant_first(self):
        box = BBox(0, 0, 5, 5)
        red = AbnormalityFinding(
            AbnormalityLabel(AbnormalityKind.REDUNDANT, BodyPartClass.HAND), box, Stage.REDUNDANT
        )
        ab = AbnormalityFinding(
            AbnormalityLabel(AbnormalityKind.ABSENT, BodyPartClass.LEG), box, Stage.ABSENT
        )
        DetectionResult(image_id="x", findings=(red, ab), working_image=None)
        with pytest.raises(ValueError):
            DetectionResult(image_id="x", findings=(ab, red), working_image=None)

    def test_result_doc_round_trip(self):
        box = BBox(0, 0, 5, 5)
        red = AbnormalityFinding(
            AbnormalityLabel(AbnormalityKind.REDUNDANT, BodyPartClass.HAND), box, Stage.REDUNDANT
        )
        result = DetectionResult(image_id="img", findings=(red,), working_image=None)
        again = DetectionResult.from_doc(result.to_doc())
        assert again.image_id == "img" and again.findings == result.findings


class TestPrompts:
    def test_default_templates_cover_all_parts(self):
        t = default_templates()
        for part in BodyPartClass:
            assert part.value in regeneration_prompt(t, part)

    def test_render_prompt_picks_intent_table(self):
        t = default_templates()
        absent = render_prompt(t, AbnormalityLabel(AbnormalityKind.ABSENT, BodyPartClass.ARM))
        removal = render_prompt(
            t, AbnormalityLabel(AbnormalityKind.REDUNDANT, BodyPartClass.ARM)
        )
        assert "arm" in absent and absent != removal
        assert "no arm" in removal

    def test_template_set_validation(self):
        good = {part: "x {part}" for part in BodyPartClass}
        incomplete = dict(good)
        del incomplete[BodyPartClass.FOOT]
        with pytest.raises(ValueError):
            PromptTemplateSet(regeneration=incomplete, absent_repair=good, redundant_removal=good)
        doubled = dict(good)
        doubled[BodyPartClass.HEAD] = "{part} {part}"
        with pytest.raises(ValueError):
            PromptTemplateSet(regeneration=doubled, absent_repair=good, redundant_removal=good)


class TestConfig:
    def test_defaults(self, config):
        assert config.grounding_threshold == 0.35
        assert config.match_iou == 0.5
        assert config.max_absent_iterations == 6
        assert config.enable_superresolution is False

    def test_threshold_bounds(self):
        with pytest.raises(ConfigError):
            PipelineConfig(grounding_threshold=0.0)
        with pytest.raises(ConfigError):
            PipelineConfig(match_iou=1.0)
        with pytest.raises(ConfigError):
            PipelineConfig(box_expansion_ratio=-0.1)
        with pytest.raises(ConfigError):
            PipelineConfig(max_absent_iterations=0)

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ConfigError) as err:
            config_from_dict({"grounding_threshold": 0.4, "tau": 0.2})
        assert "tau" in str(err.value)

    def test_load_config(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"grounding_threshold": 0.4}))
        assert load_config(str(path)).grounding_threshold == 0.4
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "missing.json"))
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(str(bad))
        arr = tmp_path / "arr.json"
        arr.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            load_config(str(arr))


class TestImageRef:
    def test_dims_must_be_positive(self):
        with pytest.raises(ValueError):
            ImageRef(id="x", width=0, height=5)

    def test_payload_forms(self, tmp_path):
        opaque = ImageRef(id="x", width=5, height=5)
        assert opaque.path() is None
        with pytest.raises(ValueError):
            opaque.scene()
        by_path = ImageRef.from_file("y", str(tmp_path / "s.json"), 5, 5)
        assert by_path.path() == str(tmp_path / "s.json")
        assert by_path.to_wire()["path"] == by_path.path()
        assert "path" not in opaque.to_wire()

    def test_detection_score_bounds(self):
        box = BBox(0, 0, 5, 5)
        PartDetection(BodyPartClass.HAND, box, 0.0)
        PartDetection(BodyPartClass.HAND, box, 1.0)
        with pytest.raises(ValueError):
            PartDetection(BodyPartClass.HAND, box, 1.2)
        with pytest.raises(ValueError):
            PartDetection(BodyPartClass.HAND, box, float("nan"))
