"""Base and perturbed text prompts for image generation and inpainting."""

from __future__ import annotations

from dataclasses import dataclass

from .groups import DemographicGroup, OccupationSpec

PROMPT_PREFIX = "A photo of the face of"
GENDERS = ("male", "female")


def _split_article(phrase: str) -> tuple[str, str]:
    """Split ``"a chef in a chef's jacket"`` into ``("a", "chef in a chef's jacket")``."""
    head, _, rest = phrase.strip().partition(" ")
    if head.lower() in ("a", "an") and rest:
        return head, rest
    return "", phrase.strip()


def _check_gender(gender):
    if gender is not None and gender not in GENDERS:
        raise ValueError(f"gender must be one of {GENDERS} or None, got {gender!r}")


@dataclass(frozen=True)
class PromptTemplate:
    prefix: str = PROMPT_PREFIX
    gender_identifier: str | None = None
    group_identifier: DemographicGroup | None = None

    def render(self, occupation: OccupationSpec) -> str:
        _check_gender(self.gender_identifier)
        if not occupation.prompt_phrase.strip():
            raise ValueError(f"occupation {occupation.name!r} has an empty prompt phrase")
        article, noun_phrase = _split_article(occupation.prompt_phrase)
        # The article stays literal ("a Asian"), as in the generation prompts.
        tokens = [self.prefix]
        if article:
            tokens.append(article)
        if self.group_identifier is not None:
            tokens.append(self.group_identifier.prompt_identifier)
        if self.gender_identifier is not None:
            tokens.append(self.gender_identifier)
        tokens.append(noun_phrase)
        return " ".join(tokens)


def build_base_prompt(occupation: OccupationSpec, gender: str | None = None) -> str:
    """Prompt used to generate the base image of an occupation.

    >>> from fairperturb.groups import get_occupation
    >>> build_base_prompt(get_occupation("chef"))
    "A photo of the face of a chef in a chef's jacket"
    """
    return PromptTemplate(gender_identifier=gender).render(occupation)


def build_perturbed_prompt(occupation: OccupationSpec, group: DemographicGroup,
                           gender: str | None = None) -> str:
    """Inpainting prompt: the group identifier, then the gender, then the occupation."""
    return PromptTemplate(gender_identifier=gender, group_identifier=DemographicGroup.parse(group)).render(occupation)


def vqa_questions(occupation: OccupationSpec) -> tuple[str, str, str]:
    """The three filtering questions: faithfulness, limb realism, overall realism."""
    return (
        f"Is there a {occupation.name} in this image?",
        "Are this person's limbs distorted?",
        "Is this image real or fake?",
    )
