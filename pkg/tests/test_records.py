import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairperturb.groups import ALL_GROUPS, DEFAULT_OCCUPATIONS, DemographicGroup
from fairperturb.records import (
    BaseImageRecord,
    Box,
    DropRecord,
    Manifest,
    MaskRecord,
    PerturbationSet,
    StageYield,
    ValidationError,
    Variant,
    VQAResult,
    derive_set_id,
    read_manifest,
    validate_set,
    write_manifest,
)

B, C, E, I = (DemographicGroup.BLACK, DemographicGroup.CAUCASIAN, DemographicGroup.EAST_ASIAN,
              DemographicGroup.INDIAN)


def full_set(sampled=False, labels=None, **kw):
    labels = labels or {}
    variants = {}
    for g in ALL_GROUPS:
        label = labels.get(g, g)
        variants[g] = Variant(f"v/{g.canonical_name}.png", f"prompt {g}", 11, label, label is g)
    return PerturbationSet(set_id=derive_set_id("chef-000001"), occupation="chef", base_id="chef-000001",
                           variants=variants, sampled=sampled, **kw)


def base_record(**kw):
    params = dict(base_id="chef-000001", occupation="chef", prompt="A photo of the face of a chef", seed=1,
                  image_ref="images/base/chef/chef-000001.png", vqa_q1=VQAResult("yes", 0.9),
                  vqa_q2=VQAResult("no", 0.8), vqa_q3_score=0.7, grayscale=False, selected=True)
    params.update(kw)
    return BaseImageRecord(**params)


class TestGroups:
    def test_four_groups_and_asian_identifier(self):
        assert len(ALL_GROUPS) == 4
        assert DemographicGroup.EAST_ASIAN.prompt_identifier == "Asian"

    def test_mapping_is_bijective(self):
        for attr in ("canonical_name", "prompt_identifier", "review_label"):
            values = [getattr(g, attr) for g in ALL_GROUPS]
            assert len(set(values)) == 4
            for g in ALL_GROUPS:
                assert DemographicGroup.parse(getattr(g, attr)) is g

    def test_unknown_group(self):
        with pytest.raises(ValueError):
            DemographicGroup.parse("Martian")

    @pytest.mark.parametrize("occupation", DEFAULT_OCCUPATIONS, ids=lambda o: o.name)
    def test_default_occupations_valid(self, occupation):
        assert occupation.violations() == []
        assert len(occupation.difficult_labels) == 8
        assert occupation.base_labels == DEFAULT_OCCUPATIONS[0].base_labels


class TestValidateSet:
    def test_complete_set(self):
        assert validate_set(full_set()) == []

    def test_missing_group(self):
        pset = full_set()
        variants = {g: v for g, v in pset.variants.items() if g is not I}
        broken = PerturbationSet(pset.set_id, "chef", pset.base_id, variants, k=3)
        assert validate_set(broken) == ["variants: missing group Indian"]

    def test_sampled_requires_passed(self):
        pset = full_set(sampled=True, labels={B: C})
        problems = validate_set(pset)
        assert len(problems) == 1
        assert problems[0].startswith("sampled:")
        assert "Black" in problems[0]

    def test_sampled_complete_set_is_valid(self):
        assert validate_set(full_set(sampled=True)) == []

    def test_total_on_garbage(self):
        assert validate_set(object()) == ["variants: not a mapping"]
        weird = PerturbationSet("s", "chef", "b", {"Martian": None, 3: "x"}, k=2)
        problems = validate_set(weird)
        assert any("unknown group" in p for p in problems)
        assert any("missing group Black" in p for p in problems)


class TestManifestIO:
    def test_empty(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest([], path)
        assert path.read_text() == ""
        assert read_manifest(path) == []

    def test_single_base_record(self, tmp_path):
        path = tmp_path / "m.jsonl"
        record = base_record()
        write_manifest([record], path)
        lines = path.read_text().splitlines()
        assert len(lines) == 1
        assert json.loads(lines[0])["kind"] == "base_image"
        assert read_manifest(path) == [record]

    def test_all_kinds_round_trip(self, tmp_path):
        records = [
            base_record(),
            MaskRecord("chef-000001", (Box(1, 2, 10.5, 20, 0.9),), "masks/a.png", 32, 32, mask_pixels=100),
            full_set(sampled=True),
            DropRecord("chef-000002", "chef", "q1_not_yes", "no", stage="vqa_filter"),
            StageYield("chef", "vqa_filter", 2, 1, {"q1_not_yes": 1}),
        ]
        path = tmp_path / "m.jsonl"
        write_manifest(records, path)
        assert read_manifest(path) == records

    def test_deterministic_field_order(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_manifest([full_set()], a)
        write_manifest([full_set()], b)
        assert a.read_bytes() == b.read_bytes()
        keys = list(json.loads(a.read_text())["variants"])
        assert keys == ["Black", "Caucasian", "EastAsian", "Indian"]

    def test_invariant_violation_names_record_and_field(self, tmp_path):
        bad = base_record(vqa_q1=VQAResult("no", 0.9))
        with pytest.raises(ValidationError) as err:
            write_manifest([bad], tmp_path / "m.jsonl")
        assert err.value.record_id == "chef-000001"
        assert err.value.field_name == "selected"

    def test_duplicate_ids_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            write_manifest([base_record(), base_record()], tmp_path / "m.jsonl")

    def test_box_outside_image_rejected(self, tmp_path):
        mask = MaskRecord("x", (Box(0, 0, 40, 10),), "m.png", 32, 32, mask_pixels=5)
        with pytest.raises(ValidationError) as err:
            write_manifest([mask], tmp_path / "m.jsonl")
        assert err.value.field_name == "boxes[0]"

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError):
            write_manifest([base_record()], tmp_path / "missing-dir" / "m.jsonl")

    def test_manifest_header_keeps_config_hash(self, tmp_path):
        m = Manifest([base_record(), full_set()], pipeline_config_hash="abc123")
        m.write(tmp_path / "m.jsonl")
        back = Manifest.read(tmp_path / "m.jsonl")
        assert back.pipeline_config_hash == "abc123"
        assert back.records == m.canonicalized().records

    def test_set_id_is_hash_of_base_id(self):
        assert derive_set_id("chef-000001") == derive_set_id("chef-000001")
        assert derive_set_id("chef-000001") != derive_set_id("chef-000002")


finite = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)
text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=20)


@settings(max_examples=60, deadline=None)
@given(base_id=text, prompt=text, seed=st.integers(-2**40, 2**40), q3=finite, s1=finite, s2=finite)
def test_base_record_round_trip_is_lossless(tmp_path_factory, base_id, prompt, seed, q3, s1, s2):
    record = BaseImageRecord(base_id=base_id, occupation="chef", prompt=prompt, seed=seed, image_ref="x.png",
                             vqa_q1=VQAResult("yes", s1), vqa_q2=VQAResult("no", s2), vqa_q3_score=q3,
                             grayscale=False, selected=True, timestamp="t")
    path = tmp_path_factory.mktemp("rt") / "m.jsonl"
    write_manifest([record], path)
    assert read_manifest(path) == [record]


@settings(max_examples=40, deadline=None)
@given(boxes=st.lists(st.tuples(finite, finite, finite, finite, finite), max_size=4))
def test_mask_record_round_trip(tmp_path_factory, boxes):
    boxes = tuple(Box(min(a, b) * 10, min(c, d) * 10, max(a, b) * 10, max(c, d) * 10, e) for a, b, c, d, e in boxes)
    record = MaskRecord("b", boxes, "m.png", 10, 10, mask_pixels=7)
    path = tmp_path_factory.mktemp("rt") / "m.jsonl"
    write_manifest([record], path)
    assert read_manifest(path) == [record]
