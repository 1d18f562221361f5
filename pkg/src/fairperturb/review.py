"""Crowd review: stratified sampling of images and realism / fidelity scores."""

from __future__ import annotations

import csv
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from ._hashing import stable_int
from .groups import ALL_GROUPS, DemographicGroup
from .pipeline import sample_ids
from .records import Manifest

CSV_FIELDS = ("image_ref", "set_id", "intended_group", "q_quality", "q_identity")
QUALITY_ANSWERS = ("Yes", "No", "Unsure")
IDENTITY_ANSWERS = tuple(g.review_label for g in ALL_GROUPS) + ("Others",)


class ReviewFormatError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass(frozen=True)
class AnnotationRow:
    image_ref: str
    set_id: str
    intended_group: DemographicGroup
    q_quality: str
    q_identity: str
    occupation: str | None = None

    def identity_group(self) -> DemographicGroup | None:
        """The group named by the reviewer, or None for "Others"."""
        if self.q_identity == "Others":
            return None
        return DemographicGroup.parse(self.q_identity)


def parse_row(values: Mapping[str, str], line: int) -> AnnotationRow:
    missing = [f for f in CSV_FIELDS if not values.get(f)]
    if missing:
        raise ReviewFormatError(line, f"missing value(s) for {', '.join(missing)}")
    try:
        intended = DemographicGroup.parse(values["intended_group"])
    except ValueError:
        raise ReviewFormatError(line, f"unknown intended_group {values['intended_group']!r}") from None
    if values["q_quality"] not in QUALITY_ANSWERS:
        raise ReviewFormatError(line, f"q_quality must be one of {QUALITY_ANSWERS}, got {values['q_quality']!r}")
    if values["q_identity"] not in IDENTITY_ANSWERS:
        raise ReviewFormatError(line, f"q_identity must be one of {IDENTITY_ANSWERS}, got {values['q_identity']!r}")
    return AnnotationRow(values["image_ref"], values["set_id"], intended, values["q_quality"],
                         values["q_identity"], values.get("occupation") or None)


def read_annotations(path: str | os.PathLike) -> list[AnnotationRow]:
    """Read the review CSV; a header row with at least ``CSV_FIELDS`` is required.

    An optional ``occupation`` column is kept when present.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(CSV_FIELDS) <= set(reader.fieldnames):
            raise ReviewFormatError(1, f"header must contain {', '.join(CSV_FIELDS)}")
        return [parse_row(row, reader.line_num) for row in reader]


def write_annotations(rows: Iterable[AnnotationRow], path: str | os.PathLike, with_occupation: bool = False) -> None:
    header = list(CSV_FIELDS) + (["occupation"] if with_occupation else [])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in rows:
            values = [r.image_ref, r.set_id, r.intended_group.canonical_name, r.q_quality, r.q_identity]
            writer.writerow(values + ([r.occupation or ""] if with_occupation else []))


@dataclass
class ReviewScores:
    realism: float
    race_fidelity: float
    n: int

    def formatted(self) -> str:
        return f"{self.realism * 100:.1f}% / {self.race_fidelity * 100:.1f}%"


def _scores(rows: Sequence[AnnotationRow]) -> ReviewScores:
    n = len(rows)
    # "Unsure" and "Others" stay in the denominators
    realism = sum(r.q_quality == "No" for r in rows) / n
    fidelity = sum(r.identity_group() is r.intended_group for r in rows) / n
    return ReviewScores(realism, fidelity, n)


def aggregate_review(rows: Sequence[AnnotationRow], occupation_of: Mapping[str, str] | None = None) -> dict:
    """Overall and per-occupation realism and race-fidelity scores.

    Realism is the share of answers "No" to the quality-issue question;
    fidelity is the share naming the intended group. Occupations come from
    ``occupation_of`` (set_id -> occupation) or the rows' own column.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no annotation rows")
    by_occupation: dict[str, list] = defaultdict(list)
    for r in rows:
        occ = (occupation_of or {}).get(r.set_id, r.occupation)
        if occ:
            by_occupation[occ].append(r)
    return {
        "overall": _scores(rows),
        "per_occupation": {occ: _scores(rs) for occ, rs in sorted(by_occupation.items())},
    }


def occupation_lookup(manifest: Manifest) -> dict[str, str]:
    return {s.set_id: s.occupation for s in manifest.sets}


def sample_for_review(manifest: Manifest, fraction: float, seed: int = 0) -> list[str]:
    """Stratified sample of sampled-set images, the same fraction of every occupation x group cell."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    cells: dict[tuple[str, DemographicGroup], list[str]] = defaultdict(list)
    for s in manifest.sampled_sets:
        for g, v in s.variants.items():
            cells[(s.occupation, g)].append(v.image_ref)
    out = []
    for (occ, g), refs in sorted(cells.items(), key=lambda kv: (kv[0][0], ALL_GROUPS.index(kv[0][1]))):
        # half-up rounding; round() would send 2.5 to 2
        n = len(refs) if fraction == 1 else math.floor(fraction * len(refs) + 0.5)
        out.extend(sample_ids(refs, n, stable_int(seed, "review", occ, g.canonical_name)))
    return out


def format_review_table(scores: dict) -> str:
    lines = ["| Occupation | Realism Score | Race Fidelity Score |", "|---|---:|---:|"]
    overall = scores["overall"]
    lines.append(f"| **Overall** | **{overall.realism * 100:.1f}%** | **{overall.race_fidelity * 100:.1f}%** |")
    for occ, s in scores["per_occupation"].items():
        lines.append(f"| {occ.capitalize()} | {s.realism * 100:.1f}% | {s.race_fidelity * 100:.1f}% |")
    return "\n".join(lines)
