"""Persistent record types and the JSONL manifest.

A manifest is a line-delimited JSON file; every line is one record carrying a
``kind`` discriminator, the ``stage`` that produced it and a ``timestamp``.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from typing import Any, Iterable, Iterator

from .groups import ALL_GROUPS, DemographicGroup


class ValidationError(ValueError):
    """A record violates one of its invariants."""

    def __init__(self, record_id, field_name, rule):
        self.record_id = record_id
        self.field_name = field_name
        self.rule = rule
        super().__init__(f"record {record_id!r}, field {field_name!r}: {rule}")


@dataclass(frozen=True)
class VQAResult:
    answer: str
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"VQA score must lie in [0, 1], got {self.score}")

    def is_yes(self) -> bool:
        return self.answer.strip().lower().startswith("yes")

    def is_no(self) -> bool:
        return self.answer.strip().lower().startswith("no")

    def real_score(self) -> float:
        """Confidence that the image is real; a "fake" answer is flipped."""
        text = self.answer.strip().lower()
        if text.startswith("fake"):
            return 1.0 - self.score
        return self.score


@dataclass(frozen=True)
class Box:
    x0: float
    y0: float
    x1: float
    y1: float
    confidence: float = 1.0

    @property
    def area(self) -> float:
        return max(0.0, self.x1 - self.x0) * max(0.0, self.y1 - self.y0)

    def clip(self, width: int, height: int) -> "Box":
        return Box(
            min(max(self.x0, 0.0), width),
            min(max(self.y0, 0.0), height),
            min(max(self.x1, 0.0), width),
            min(max(self.y1, 0.0), height),
            self.confidence,
        )

    def within(self, width: int, height: int) -> bool:
        return 0 <= self.x0 <= self.x1 <= width and 0 <= self.y0 <= self.y1 <= height


@dataclass(frozen=True)
class BaseImageRecord:
    base_id: str
    occupation: str
    prompt: str
    seed: int
    image_ref: str
    gender: str | None = None
    vqa_q1: VQAResult | None = None
    vqa_q2: VQAResult | None = None
    vqa_q3_score: float | None = None
    grayscale: bool | None = None
    selected: bool = False
    stage: str = "generate"
    timestamp: str = ""

    kind = "base_image"

    @property
    def record_id(self):
        return self.base_id

    def violations(self) -> list[str]:
        out = []
        if self.vqa_q3_score is not None and not 0.0 <= self.vqa_q3_score <= 1.0:
            out.append("vqa_q3_score: must lie in [0, 1]")
        if self.selected:
            if self.vqa_q1 is None or not self.vqa_q1.is_yes():
                out.append("selected: requires vqa_q1 answer yes")
            if self.vqa_q2 is None or not self.vqa_q2.is_no():
                out.append("selected: requires vqa_q2 answer no")
            if self.grayscale is not False:
                out.append("selected: requires grayscale false")
        return out


@dataclass(frozen=True)
class MaskRecord:
    base_id: str
    boxes: tuple[Box, ...]
    mask_ref: str
    width: int
    height: int
    mask_pixels: int = 0
    stage: str = "mask"
    timestamp: str = ""

    kind = "mask"

    @property
    def record_id(self):
        return self.base_id

    def violations(self) -> list[str]:
        out = []
        for i, box in enumerate(self.boxes):
            if not box.within(self.width, self.height):
                out.append(f"boxes[{i}]: outside image bounds {self.width}x{self.height}")
        if self.boxes and self.mask_pixels <= 0:
            out.append("mask_ref: mask must be nonempty when boxes are present")
        return out


@dataclass(frozen=True)
class Variant:
    image_ref: str
    prompt: str
    seed: int
    attribute_label: DemographicGroup | None = None
    passed: bool = False


@dataclass(frozen=True)
class PerturbationSet:
    set_id: str
    occupation: str
    base_id: str
    variants: dict  # DemographicGroup -> Variant
    k: int = len(ALL_GROUPS)
    gender: str | None = None
    sampled: bool = False
    stage: str = "perturb"
    timestamp: str = ""

    kind = "perturbation_set"

    @property
    def record_id(self):
        return self.set_id

    def violations(self) -> list[str]:
        return validate_set(self)


@dataclass(frozen=True)
class DropRecord:
    """Provenance for a record that left the pipeline at ``stage``."""

    record_id: str
    occupation: str
    reason: str
    detail: str = ""
    stage: str = ""
    timestamp: str = ""

    kind = "drop"

    def violations(self) -> list[str]:
        return [] if self.reason else ["reason: must be nonempty"]


@dataclass(frozen=True)
class StageYield:
    occupation: str
    stage: str
    n_input: int
    n_kept: int
    dropped: dict  # reason -> count
    timestamp: str = ""

    kind = "stage_yield"

    @property
    def record_id(self):
        return f"{self.occupation}:{self.stage}"

    @property
    def n_dropped(self) -> int:
        return sum(self.dropped.values())

    def violations(self) -> list[str]:
        if self.n_kept + self.n_dropped != self.n_input:
            return [f"dropped: kept {self.n_kept} + dropped {self.n_dropped} != input {self.n_input}"]
        return []


RECORD_TYPES = {cls.kind: cls for cls in (BaseImageRecord, MaskRecord, PerturbationSet, DropRecord, StageYield)}
KIND_ORDER = ("base_image", "mask", "perturbation_set", "drop", "stage_yield")


def derive_set_id(base_id: str) -> str:
    return "set-" + hashlib.sha256(base_id.encode("utf-8")).hexdigest()[:16]


def validate_set(pset) -> list[str]:
    """Return the invariant violations of a perturbation set; never raises."""
    out = []
    variants = getattr(pset, "variants", None)
    if not isinstance(variants, dict):
        return ["variants: not a mapping"]
    present = {}
    for key, variant in variants.items():
        try:
            present[DemographicGroup.parse(key)] = variant
        except (ValueError, TypeError):
            out.append(f"variants: unknown group {key!r}")
    for group in ALL_GROUPS:
        if group not in present:
            out.append(f"variants: missing group {group.canonical_name}")
    k = getattr(pset, "k", None)
    if k != len(variants):
        out.append(f"k: stored {k} but set has {len(variants)} variants")
    for group, variant in present.items():
        label = getattr(variant, "attribute_label", None)
        if getattr(variant, "passed", False) and label is not group:
            out.append(
                f"variants.{group.canonical_name}.passed: passed requires attribute_label == {group.canonical_name}"
            )
    if getattr(pset, "sampled", False):
        for group, variant in present.items():
            label = getattr(variant, "attribute_label", None)
            if not getattr(variant, "passed", False) or label is not group:
                shown = getattr(label, "canonical_name", label)
                out.append(
                    f"sampled: variant {group.canonical_name} not passed "
                    f"(attribute_label={shown}); sampled implies all variants passed"
                )
    return out


# -- serialization -------------------------------------------------------------

def _encode(value):
    if isinstance(value, DemographicGroup):
        return value.canonical_name
    if isinstance(value, (VQAResult, Box, Variant)):
        return {f.name: _encode(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, tuple):
        return [_encode(v) for v in value]
    if isinstance(value, dict):
        return {(_encode(k) if isinstance(k, DemographicGroup) else k): _encode(v) for k, v in value.items()}
    return value


def record_to_dict(record) -> dict:
    out: dict[str, Any] = {"kind": record.kind}
    for f in fields(record):
        value = getattr(record, f.name)
        if f.name == "variants":
            value = {g.canonical_name: value[g] for g in ALL_GROUPS if g in value}
            value.update({k: v for k, v in record.variants.items() if not isinstance(k, DemographicGroup)})
        out[f.name] = _encode(value)
    return out


def _vqa(d):
    return None if d is None else VQAResult(**d)


def record_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    if kind not in RECORD_TYPES:
        raise ValueError(f"unknown record kind {kind!r}")
    if kind == "base_image":
        d["vqa_q1"] = _vqa(d.get("vqa_q1"))
        d["vqa_q2"] = _vqa(d.get("vqa_q2"))
        return BaseImageRecord(**d)
    if kind == "mask":
        d["boxes"] = tuple(Box(**b) for b in d["boxes"])
        return MaskRecord(**d)
    if kind == "perturbation_set":
        variants = {}
        for name, v in d["variants"].items():
            v = dict(v)
            if v.get("attribute_label") is not None:
                v["attribute_label"] = DemographicGroup.parse(v["attribute_label"])
            variants[DemographicGroup.parse(name)] = Variant(**v)
        d["variants"] = variants
        return PerturbationSet(**d)
    if kind == "drop":
        return DropRecord(**d)
    return StageYield(**d)


def dumps_record(record) -> str:
    return json.dumps(record_to_dict(record), ensure_ascii=False, separators=(",", ":"))


def canonical_order(records: Iterable) -> list:
    """Sort records by kind, then by id, so output bytes never depend on scheduling."""
    return sorted(records, key=lambda r: (KIND_ORDER.index(r.kind), r.record_id, r.stage))


def check_records(records: Iterable) -> None:
    """Raise ``ValidationError`` for the first broken invariant or duplicate id."""
    seen: set[tuple[str, str]] = set()
    for record in records:
        key = (record.kind, record.record_id)
        if key in seen:
            raise ValidationError(record.record_id, "id", f"duplicate {record.kind} id")
        seen.add(key)
        problems = record.violations()
        if problems:
            field_name, _, rule = problems[0].partition(": ")
            raise ValidationError(record.record_id, field_name, rule)


def write_manifest(records: Iterable, path: str | os.PathLike) -> None:
    """Validate ``records`` and write them as one JSON object per line."""
    records = list(records)
    check_records(records)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(dumps_record(record))
            fh.write("\n")


def iter_manifest(path: str | os.PathLike) -> Iterator:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield record_from_dict(json.loads(line))


def read_manifest(path: str | os.PathLike) -> list:
    return list(iter_manifest(path))


@dataclass
class Manifest:
    """In-memory manifest: an append-only record log plus the config hash."""

    records: list = field(default_factory=list)
    pipeline_config_hash: str = ""

    def append(self, record) -> None:
        self.records.append(record)

    def extend(self, records: Iterable) -> None:
        self.records.extend(records)

    def of_kind(self, kind: str) -> list:
        return [r for r in self.records if r.kind == kind]

    @property
    def base_images(self) -> list[BaseImageRecord]:
        return self.of_kind("base_image")

    @property
    def masks(self) -> list[MaskRecord]:
        return self.of_kind("mask")

    @property
    def sets(self) -> list[PerturbationSet]:
        return self.of_kind("perturbation_set")

    @property
    def sampled_sets(self) -> list[PerturbationSet]:
        return [s for s in self.sets if s.sampled]

    @property
    def drops(self) -> list[DropRecord]:
        return self.of_kind("drop")

    @property
    def yields(self) -> list[StageYield]:
        return self.of_kind("stage_yield")

    def canonicalized(self) -> "Manifest":
        return Manifest(canonical_order(self.records), self.pipeline_config_hash)

    def write(self, path: str | os.PathLike) -> None:
        """Write the manifest; the config hash goes to a sidecar header line."""
        records = canonical_order(self.records)
        check_records(records)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps({"kind": "header", "pipeline_config_hash": self.pipeline_config_hash}))
            fh.write("\n")
            for record in records:
                fh.write(dumps_record(record))
                fh.write("\n")

    @classmethod
    def read(cls, path: str | os.PathLike) -> "Manifest":
        manifest = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                d = json.loads(line)
                if d.get("kind") == "header":
                    manifest.pipeline_config_hash = d.get("pipeline_config_hash", "")
                else:
                    manifest.append(record_from_dict(d))
        return manifest
