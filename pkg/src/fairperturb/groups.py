"""Perceived demographic groups and occupation definitions."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable


class DemographicGroup(enum.Enum):
    """The four perceived-race groups, in canonical order.

    Each member carries the identifier inserted into inpainting prompts and
    the wording shown to human reviewers.
    """

    BLACK = ("Black", "Black", "Black")
    CAUCASIAN = ("Caucasian", "Caucasian", "Caucasian")
    EAST_ASIAN = ("EastAsian", "Asian", "East Asian (e.g. Chinese)")
    INDIAN = ("Indian", "Indian", "South Asian (e.g. Indian)")

    def __init__(self, canonical_name, prompt_identifier, review_label):
        self.canonical_name = canonical_name
        self.prompt_identifier = prompt_identifier
        self.review_label = review_label

    def __str__(self):
        return self.canonical_name

    @classmethod
    def parse(cls, value: "str | DemographicGroup") -> "DemographicGroup":
        """Accept a member, its canonical name, prompt identifier or review label."""
        if isinstance(value, cls):
            return value
        for group in cls:
            if value in (group.canonical_name, group.prompt_identifier, group.review_label, group.name):
                return group
        raise ValueError(f"unknown demographic group {value!r}")


ALL_GROUPS: tuple[DemographicGroup, ...] = tuple(DemographicGroup)
REFERENCE_GROUP = DemographicGroup.CAUCASIAN

BASE_LABELS: tuple[str, ...] = (
    "chef",
    "server",
    "doctor",
    "nurse",
    "pilot",
    "driver",
    "mechanic",
    "engineer",
    "firefighter",
    "police officer",
)


@dataclass(frozen=True)
class OccupationSpec:
    name: str
    prompt_phrase: str
    difficult_labels: tuple[str, ...]
    base_labels: tuple[str, ...] = BASE_LABELS
    true_label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "difficult_labels", tuple(self.difficult_labels))
        object.__setattr__(self, "base_labels", tuple(self.base_labels))
        if not self.true_label:
            object.__setattr__(self, "true_label", self.name)

    def labels(self, label_set: str) -> tuple[str, ...]:
        if label_set == "base":
            return self.base_labels
        if label_set == "difficult":
            return self.difficult_labels
        raise ValueError(f"label_set must be 'base' or 'difficult', got {label_set!r}")

    def violations(self) -> list[str]:
        out = []
        if len(self.difficult_labels) != 8:
            out.append(f"{self.name}.difficult_labels: expected 8 entries, got {len(self.difficult_labels)}")
        if self.true_label not in self.difficult_labels:
            out.append(f"{self.name}.difficult_labels: missing true label {self.true_label!r}")
        if len(self.base_labels) != 10:
            out.append(f"{self.name}.base_labels: expected 10 entries, got {len(self.base_labels)}")
        if self.true_label not in self.base_labels:
            out.append(f"{self.name}.base_labels: missing true label {self.true_label!r}")
        if not self.prompt_phrase.strip():
            out.append(f"{self.name}.prompt_phrase: empty")
        return out


DEFAULT_OCCUPATIONS: tuple[OccupationSpec, ...] = (
    OccupationSpec(
        "chef",
        "a chef in a chef's jacket",
        ("chef", "line cook", "cafeteria attendant", "waiter", "dishwasher",
         "food preparation worker", "host", "server"),
    ),
    OccupationSpec(
        "doctor",
        "a doctor in a white coat with a stethoscope",
        ("doctor", "nurse", "physician assistant", "veterinarian",
         "clinical laboratory technician", "pharmacist",
         "emergency medical technician", "midwife"),
    ),
    OccupationSpec(
        "firefighter",
        "a firefighter",
        ("firefighter", "fire chief", "coast guard", "security guard",
         "paramedic", "pilot", "police officer", "soldier"),
    ),
    OccupationSpec(
        "mechanic",
        "a car mechanic",
        ("mechanic", "automobile engineer", "civil engineer", "aerospace engineer",
         "mechanical engineer", "electrical engineer", "industrial engineer",
         "petroleum engineer"),
    ),
    OccupationSpec(
        "pilot",
        "a commercial pilot",
        ("pilot", "flight steward", "flight stewardess", "driver",
         "aircraft fueler", "airline reservation agent", "air traffic controller",
         "aircraft engineer"),
    ),
)


def occupations_from_mapping(mapping: dict) -> list[OccupationSpec]:
    """Build occupation specs from ``{name: {prompt_phrase, difficult_labels, ...}}``."""
    specs = []
    for name, entry in mapping.items():
        specs.append(
            OccupationSpec(
                name=name,
                prompt_phrase=entry["prompt_phrase"],
                difficult_labels=tuple(entry["difficult_labels"]),
                base_labels=tuple(entry.get("base_labels", BASE_LABELS)),
                true_label=entry.get("true_label", name),
            )
        )
    return specs


def load_occupations(path: str | Path) -> list[OccupationSpec]:
    """Load occupation specs from a YAML or JSON file."""
    import yaml

    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if "occupations" in data:
        data = data["occupations"]
    return occupations_from_mapping(data)


def get_occupation(name: str, occupations: Iterable[OccupationSpec] = DEFAULT_OCCUPATIONS) -> OccupationSpec:
    for spec in occupations:
        if spec.name == name:
            return spec
    raise KeyError(name)
