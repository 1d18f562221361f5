import pytest
from hypothesis import given
from hypothesis import strategies as st

from fairperturb.groups import ALL_GROUPS, DEFAULT_OCCUPATIONS, DemographicGroup, OccupationSpec, get_occupation
from fairperturb.prompting import PROMPT_PREFIX, build_base_prompt, build_perturbed_prompt, vqa_questions

PILOT = OccupationSpec("pilot", "a pilot", get_occupation("pilot").difficult_labels)


def test_prefix():
    assert PROMPT_PREFIX == "A photo of the face of"


@pytest.mark.parametrize(
    "name, gender, expected",
    [
        ("chef", None, "A photo of the face of a chef in a chef's jacket"),
        ("firefighter", "female", "A photo of the face of a female firefighter"),
        ("doctor", None, "A photo of the face of a doctor in a white coat with a stethoscope"),
        ("mechanic", None, "A photo of the face of a car mechanic"),
        ("pilot", None, "A photo of the face of a commercial pilot"),
    ],
)
def test_base_prompts(name, gender, expected):
    assert build_base_prompt(get_occupation(name), gender) == expected


@pytest.mark.parametrize(
    "occupation, group, gender, expected",
    [
        (get_occupation("firefighter"), DemographicGroup.BLACK, None, "A photo of the face of a Black firefighter"),
        (get_occupation("firefighter"), DemographicGroup.EAST_ASIAN, None, "A photo of the face of a Asian firefighter"),
        (PILOT, DemographicGroup.INDIAN, "female", "A photo of the face of a Indian female pilot"),
        (get_occupation("chef"), DemographicGroup.CAUCASIAN, None,
         "A photo of the face of a Caucasian chef in a chef's jacket"),
    ],
)
def test_perturbed_prompts(occupation, group, gender, expected):
    assert build_perturbed_prompt(occupation, group, gender) == expected


def test_invalid_gender():
    with pytest.raises(ValueError):
        build_base_prompt(get_occupation("chef"), "other")


def test_empty_phrase_rejected():
    with pytest.raises(ValueError):
        build_base_prompt(OccupationSpec("x", "  ", ("x",) * 8))


def test_vqa_questions():
    q1, q2, q3 = vqa_questions(get_occupation("chef"))
    assert q1 == "Is there a chef in this image?"
    assert q2 == "Are this person's limbs distorted?"
    assert q3 == "Is this image real or fake?"


@given(occupation=st.sampled_from(DEFAULT_OCCUPATIONS), group=st.sampled_from(ALL_GROUPS),
       gender=st.sampled_from([None, "male", "female"]))
def test_removing_identifiers_recovers_base_prompt(occupation, group, gender):
    base = build_base_prompt(occupation)
    perturbed = build_perturbed_prompt(occupation, group, gender)
    tokens = perturbed.split(" ")
    idx = len(("A photo of the face of a").split(" "))
    assert tokens[idx] == group.prompt_identifier
    removed = tokens[:idx] + tokens[idx + 1 + (gender is not None):]
    assert " ".join(removed) == base
    assert perturbed == build_perturbed_prompt(occupation, group, gender)
