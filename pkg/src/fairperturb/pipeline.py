"""Staged construction of a demographically perturbed image dataset.

Stages run in a fixed order per occupation:

    generate -> vqa_filter -> select_topk -> grayscale_filter      (base images)
    mask -> perturb -> attribute_filter -> sample                 (perturbation sets)

Every stage reports a ``StageYield`` and a ``DropRecord`` for each record it
removes, so ``kept + dropped == input`` holds at every stage.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Callable, Iterable, Sequence

import numpy as np

from ._hashing import config_hash, stable_int
from .adapters.base import AdapterError, NoFaceError, PipelineAdapters
from .groups import ALL_GROUPS, DEFAULT_OCCUPATIONS, DemographicGroup, OccupationSpec, occupations_from_mapping
from .prompting import GENDERS, build_base_prompt, build_perturbed_prompt, vqa_questions
from .records import (
    BaseImageRecord,
    DropRecord,
    Manifest,
    MaskRecord,
    PerturbationSet,
    StageYield,
    Variant,
    derive_set_id,
)
from .store import ImageStore

logger = logging.getLogger(__name__)

BASE_STAGES = ("generate", "vqa_filter", "select_topk", "grayscale_filter")
SET_STAGES = ("mask", "perturb", "attribute_filter", "sample")
STAGES = BASE_STAGES + SET_STAGES


class StageError(RuntimeError):
    """A stage left no survivors for an occupation."""

    def __init__(self, stage: str, occupation: str, message: str = "no survivors"):
        self.stage = stage
        self.occupation = occupation
        super().__init__(f"stage {stage!r} ({occupation}): {message}")


@dataclass
class PipelineConfig:
    occupations: list = field(default_factory=lambda: list(DEFAULT_OCCUPATIONS))
    images_per_occupation: int = 5000
    top_k: int = 2000
    sets_per_occupation: int = 1200
    groups: tuple = ALL_GROUPS
    gender_mode: str = "unspecified"
    seed: int = 0
    image_size: tuple = (1024, 1024)
    # pixel is gray when max-min over channels <= this (uint8 units)
    grayscale_max_spread: int = 8
    grayscale_min_fraction: float = 0.99
    box_threshold: float = 0.35
    detector_query: str = "person"
    workers: int = 1
    # forwarded untouched to real backends (guidance scale, steps, strength, ...)
    backend_options: dict = field(default_factory=dict)

    def __post_init__(self):
        self.groups = tuple(DemographicGroup.parse(g) for g in self.groups)
        self.image_size = tuple(self.image_size)
        if self.top_k > self.images_per_occupation:
            raise ValueError("top_k must not exceed images_per_occupation")
        if self.sets_per_occupation > self.top_k:
            raise ValueError("sets_per_occupation must not exceed top_k")
        if self.gender_mode not in ("unspecified", "balanced"):
            raise ValueError(f"gender_mode must be 'unspecified' or 'balanced', got {self.gender_mode!r}")
        if min(self.images_per_occupation, self.top_k, self.sets_per_occupation) < 1:
            raise ValueError("image, top_k and set counts must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_dict(self) -> dict:
        return {
            "occupations": {
                o.name: {
                    "prompt_phrase": o.prompt_phrase,
                    "difficult_labels": list(o.difficult_labels),
                    "base_labels": list(o.base_labels),
                    "true_label": o.true_label,
                }
                for o in self.occupations
            },
            "images_per_occupation": self.images_per_occupation,
            "top_k": self.top_k,
            "sets_per_occupation": self.sets_per_occupation,
            "groups": [g.canonical_name for g in self.groups],
            "gender_mode": self.gender_mode,
            "seed": self.seed,
            "image_size": list(self.image_size),
            "grayscale_max_spread": self.grayscale_max_spread,
            "grayscale_min_fraction": self.grayscale_min_fraction,
            "box_threshold": self.box_threshold,
            "detector_query": self.detector_query,
            "workers": self.workers,
            "backend_options": self.backend_options,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise KeyError(f"unknown pipeline config keys: {sorted(unknown)}")
        if "occupations" in data and isinstance(data["occupations"], dict):
            data["occupations"] = occupations_from_mapping(data["occupations"])
        return cls(**data)

    def hash(self) -> str:
        # worker count never changes output
        payload = self.to_dict()
        payload.pop("workers")
        return config_hash(json.dumps(payload, sort_keys=True))


def is_grayscale(pixels: np.ndarray, max_spread: int = 8, min_fraction: float = 0.99) -> bool:
    """True when at least ``min_fraction`` of pixels have channel spread <= ``max_spread``."""
    pixels = np.asarray(pixels)
    if pixels.ndim == 2:
        return True
    spread = pixels.max(axis=2).astype(np.int16) - pixels.min(axis=2).astype(np.int16)
    return float(np.mean(spread <= max_spread)) >= min_fraction


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


class DatasetPipeline:
    """Runs the stages over bound adapters and accumulates a manifest.

    ``clock`` supplies record timestamps; pass a constant function to make
    manifests byte-identical across runs.
    """

    def __init__(self, config: PipelineConfig, adapters: PipelineAdapters, store: ImageStore,
                 clock: Callable[[], str] | None = None):
        self.config = config
        self.adapters = adapters
        self.store = store
        self.clock = clock or _utc_now
        self.manifest = Manifest(pipeline_config_hash=config.hash())
        self.warnings: list[str] = []

    # -- helpers ---------------------------------------------------------------

    def _warn(self, message: str) -> None:
        logger.warning(message)
        self.warnings.append(message)

    def _map(self, fn, items: Sequence, *adapters):
        if self.config.workers == 1 or any(getattr(a, "serial", False) for a in adapters) or len(items) < 2:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            return list(pool.map(fn, items))

    def _drop(self, stage, occupation, record_id, reason, detail="") -> DropRecord:
        return DropRecord(record_id=record_id, occupation=occupation, reason=reason,
                          detail=detail, stage=stage, timestamp=self.clock())

    def _report(self, stage, occupation, n_input, n_kept, drops: list[DropRecord]) -> StageYield:
        reasons = Counter(d.reason for d in drops)
        stage_yield = StageYield(occupation=occupation, stage=stage, n_input=n_input, n_kept=n_kept,
                                 dropped=dict(sorted(reasons.items())), timestamp=self.clock())
        if stage_yield.violations():
            raise AssertionError(f"conservation broken at {stage}: {stage_yield.violations()}")
        self.manifest.extend(drops)
        self.manifest.append(stage_yield)
        logger.info("%s/%s: %d in, %d kept, %s", occupation, stage, n_input, n_kept, dict(reasons))
        return stage_yield

    def _occupation(self, name: str) -> OccupationSpec:
        for spec in self.config.occupations:
            if spec.name == name:
                return spec
        raise KeyError(name)

    # -- stage A: text-to-image generation -------------------------------------

    def stage_generate(self, occupation: OccupationSpec) -> list[BaseImageRecord]:
        cfg = self.config

        def gender_for(i):
            return GENDERS[i % 2] if cfg.gender_mode == "balanced" else None

        jobs = []
        for i in range(cfg.images_per_occupation):
            seed = cfg.seed + i
            base_id = f"{occupation.name}-{seed:06d}"
            gender = gender_for(i)
            jobs.append((base_id, seed, gender, build_base_prompt(occupation, gender)))

        def run(job):
            base_id, seed, gender, prompt = job
            ref = f"images/base/{occupation.name}/{base_id}.png"
            try:
                self.adapters.generator.generate(prompt, seed, cfg.image_size, ref)
            except AdapterError as exc:
                return None, self._drop("generate", occupation.name, base_id, "generation_error", str(exc))
            record = BaseImageRecord(base_id=base_id, occupation=occupation.name, prompt=prompt, seed=seed,
                                     image_ref=ref, gender=gender, stage="generate", timestamp=self.clock())
            return record, None

        results = self._map(run, jobs, self.adapters.generator)
        kept = [r for r, _ in results if r is not None]
        drops = [d for _, d in results if d is not None]
        self._report("generate", occupation.name, len(jobs), len(kept), drops)
        if len(kept) < cfg.top_k:
            self._warn(f"{occupation.name}: only {len(kept)} images generated, fewer than top_k={cfg.top_k}")
        return kept

    # -- stage B: VQA faithfulness / limb filtering ----------------------------

    def stage_vqa_filter(self, records: Sequence[BaseImageRecord]) -> tuple[list[BaseImageRecord], list[BaseImageRecord]]:
        """Ask all three questions; keep images answering yes to Q1 and no to Q2.

        Returns ``(kept, annotated)``: ``annotated`` holds every record that
        got answers, kept or not.
        """
        if not records:
            return [], []
        occupation = self._occupation(records[0].occupation)
        q1, q2, q3 = vqa_questions(occupation)

        def run(record):
            try:
                a1 = self.adapters.vqa.answer(record.image_ref, q1)
                a2 = self.adapters.vqa.answer(record.image_ref, q2)
                a3 = self.adapters.vqa.answer(record.image_ref, q3)
            except (AdapterError, ValueError) as exc:
                return None, self._drop("vqa_filter", record.occupation, record.base_id, "vqa_error", str(exc))
            updated = replace(record, vqa_q1=a1, vqa_q2=a2, vqa_q3_score=a3.real_score(),
                              stage="vqa_filter", timestamp=self.clock())
            if not a1.is_yes():
                return updated, self._drop("vqa_filter", record.occupation, record.base_id, "q1_not_yes", a1.answer)
            if not a2.is_no():
                return updated, self._drop("vqa_filter", record.occupation, record.base_id, "q2_not_no", a2.answer)
            return updated, None

        results = self._map(run, list(records), self.adapters.vqa)
        annotated = [r for r, _ in results if r is not None]
        kept = [r for r, d in results if d is None]
        drops = [d for _, d in results if d is not None]
        self._report("vqa_filter", occupation.name, len(records), len(kept), drops)
        return kept, annotated

    # -- stage C: top-k by realism score --------------------------------------

    def stage_select_topk(self, records: Sequence[BaseImageRecord], k: int | None = None) -> list[BaseImageRecord]:
        """Keep the ``k`` highest Q3 scores; ties go to the lower base_id."""
        k = self.config.top_k if k is None else k
        if not records:
            return []
        occupation = records[0].occupation
        ranked = sorted(records, key=lambda r: (-r.vqa_q3_score, r.base_id))
        if len(ranked) < k:
            self._warn(f"{occupation}: {len(ranked)} images survive VQA filtering, fewer than top_k={k}; keeping all")
        kept = [replace(r, stage="select_topk") for r in ranked[:k]]
        drops = [self._drop("select_topk", occupation, r.base_id, "below_top_k", f"q3={r.vqa_q3_score!r}")
                 for r in ranked[k:]]
        self._report("select_topk", occupation, len(records), len(kept), drops)
        return sorted(kept, key=lambda r: r.base_id)

    # -- stage D: grayscale removal -------------------------------------------

    def stage_grayscale_filter(self, records: Sequence[BaseImageRecord]) -> tuple[list[BaseImageRecord], list[BaseImageRecord]]:
        """Returns ``(selected, rejected_grayscale)``."""
        if not records:
            return [], []
        cfg = self.config
        occupation = records[0].occupation

        def run(record):
            try:
                gray = is_grayscale(self.store.read_image(record.image_ref),
                                    cfg.grayscale_max_spread, cfg.grayscale_min_fraction)
            except OSError as exc:
                return record, self._drop("grayscale_filter", occupation, record.base_id, "unreadable_image", str(exc))
            updated = replace(record, grayscale=gray, selected=not gray, stage="grayscale_filter",
                              timestamp=self.clock())
            if gray:
                return updated, self._drop("grayscale_filter", occupation, record.base_id, "grayscale")
            return updated, None

        results = self._map(run, list(records))
        kept = [r for r, d in results if d is None]
        rejected = [r for r, d in results if d is not None]
        drops = [d for _, d in results if d is not None]
        self._report("grayscale_filter", occupation, len(records), len(kept), drops)
        return kept, rejected

    # -- stage E: person masks -------------------------------------------------

    def stage_mask(self, records: Sequence[BaseImageRecord]) -> list[MaskRecord]:
        """Union of per-box segments over all boxes at or above ``box_threshold``."""
        if not records:
            return []
        cfg = self.config
        occupation = records[0].occupation

        def run(record):
            base_id = record.base_id
            try:
                boxes = self.adapters.detector.detect(record.image_ref, cfg.detector_query)
            except AdapterError as exc:
                return None, self._drop("mask", occupation, base_id, "detection_error", str(exc))
            boxes = [b for b in boxes if b.confidence >= cfg.box_threshold]
            if not boxes:
                return None, self._drop("mask", occupation, base_id, "no_boxes")
            width, height = self.store.image_size(record.image_ref)
            union = np.zeros((height, width), dtype=bool)
            try:
                for i, box in enumerate(boxes):
                    seg_ref = f"masks/{occupation}/segments/{base_id}-{i}.png"
                    self.adapters.segmenter.segment(record.image_ref, box, seg_ref)
                    union |= self.store.read_mask(seg_ref)
            except AdapterError as exc:
                return None, self._drop("mask", occupation, base_id, "segmentation_error", str(exc))
            if not union.any():
                return None, self._drop("mask", occupation, base_id, "empty_mask")
            mask_ref = self.store.write_mask(f"masks/{occupation}/{base_id}.png", union)
            return MaskRecord(base_id=base_id, boxes=tuple(boxes), mask_ref=mask_ref, width=width, height=height,
                              mask_pixels=int(union.sum()), stage="mask", timestamp=self.clock()), None

        results = self._map(run, list(records), self.adapters.detector, self.adapters.segmenter)
        kept = [m for m, _ in results if m is not None]
        drops = [d for _, d in results if d is not None]
        self._report("mask", occupation, len(records), len(kept), drops)
        return kept

    # -- stage F: inpainting perturbations -------------------------------------

    def variant_seed(self, base_id: str, group: DemographicGroup) -> int:
        return stable_int(self.config.seed, "perturb", base_id, group.canonical_name)

    def stage_perturb(self, records: Sequence[BaseImageRecord], masks: Sequence[MaskRecord]) -> list[PerturbationSet]:
        """One inpainted variant per group; a set with any failed variant is dropped whole."""
        if not records:
            return []
        occupation = self._occupation(records[0].occupation)
        mask_of = {m.base_id: m for m in masks}
        todo = [r for r in records if r.base_id in mask_of]

        def run(record):
            variants = {}
            for group in self.config.groups:
                prompt = build_perturbed_prompt(occupation, group, record.gender)
                seed = self.variant_seed(record.base_id, group)
                out = f"images/variants/{occupation.name}/{record.base_id}/{group.canonical_name}.png"
                try:
                    self.adapters.inpainter.inpaint(record.image_ref, mask_of[record.base_id].mask_ref,
                                                    prompt, seed, out)
                except AdapterError as exc:
                    return None, self._drop("perturb", occupation.name, derive_set_id(record.base_id),
                                            "variant_error", f"{group.canonical_name}: {exc}")
                variants[group] = Variant(image_ref=out, prompt=prompt, seed=seed)
            return PerturbationSet(set_id=derive_set_id(record.base_id), occupation=occupation.name,
                                   base_id=record.base_id, variants=variants, k=len(variants),
                                   gender=record.gender, stage="perturb", timestamp=self.clock()), None

        results = self._map(run, todo, self.adapters.inpainter)
        kept = [s for s, _ in results if s is not None]
        drops = [d for _, d in results if d is not None]
        self._report("perturb", occupation.name, len(todo), len(kept), drops)
        return kept

    # -- stage G: perceived-attribute agreement --------------------------------

    def stage_attribute_filter(self, sets: Sequence[PerturbationSet]) -> tuple[list[PerturbationSet], list[PerturbationSet]]:
        """Label every variant; keep a set only if each variant is its intended group.

        Returns ``(kept, rejected)``; both carry attribute labels and passed flags.
        """
        if not sets:
            return [], []
        occupation = sets[0].occupation

        def run(pset):
            variants = {}
            reason = None
            for group, variant in pset.variants.items():
                try:
                    label = self.adapters.race_classifier.classify(variant.image_ref)
                except NoFaceError:
                    label = None
                    reason = reason or "no_face"
                except AdapterError:
                    label = None
                    reason = reason or "classifier_error"
                passed = label is group
                if not passed and reason is None:
                    reason = "attribute_mismatch"
                variants[group] = replace(variant, attribute_label=label, passed=passed)
            updated = replace(pset, variants=variants, stage="attribute_filter", timestamp=self.clock())
            if reason is None:
                return updated, None
            return updated, self._drop("attribute_filter", occupation, pset.set_id, reason)

        results = self._map(run, list(sets), self.adapters.race_classifier)
        kept = [s for s, d in results if d is None]
        rejected = [s for s, d in results if d is not None]
        drops = [d for _, d in results if d is not None]
        self._report("attribute_filter", occupation, len(sets), len(kept), drops)
        return kept, rejected

    # -- stage H: balanced sampling --------------------------------------------

    def stage_sample(self, sets: Sequence[PerturbationSet], n: int | None = None,
                     seed: int | None = None) -> list[PerturbationSet]:
        """Mark a seeded uniform sample of ``n`` sets per occupation as sampled.

        In balanced gender mode ``n`` is split evenly between male and female.
        Returns every input set, sampled or not.
        """
        n = self.config.sets_per_occupation if n is None else n
        seed = self.config.seed if seed is None else seed
        out = []
        by_occupation: dict[str, list[PerturbationSet]] = {}
        for s in sets:
            by_occupation.setdefault(s.occupation, []).append(s)
        for occupation, pool in sorted(by_occupation.items()):
            if self.config.gender_mode == "balanced":
                quotas = {"male": n // 2, "female": n - n // 2}
                strata = {g: [s for s in pool if s.gender == g] for g in quotas}
            else:
                quotas = {None: n}
                strata = {None: list(pool)}
            chosen: set[str] = set()
            for stratum, quota in quotas.items():
                chosen |= set(sample_ids([s.set_id for s in strata[stratum]], quota,
                                         stable_int(seed, "sample", occupation, stratum), self._warn,
                                         f"{occupation}/{stratum or 'all'}"))
            drops = []
            for s in pool:
                picked = s.set_id in chosen
                out.append(replace(s, sampled=picked, stage="sample", timestamp=self.clock()))
                if not picked:
                    drops.append(self._drop("sample", occupation, s.set_id, "not_sampled"))
            self._report("sample", occupation, len(pool), len(chosen), drops)
        return sorted(out, key=lambda s: s.set_id)

    # -- phases ----------------------------------------------------------------

    def build_base_images(self, occupations: Iterable[OccupationSpec] | None = None) -> Manifest:
        """Stages A-D; base image records are stored in their final state."""
        for occupation in occupations or self.config.occupations:
            generated = self.stage_generate(occupation)
            self._require(generated, "generate", occupation.name)
            vqa_kept, annotated = self.stage_vqa_filter(generated)
            self._require(vqa_kept, "vqa_filter", occupation.name)
            top = self.stage_select_topk(vqa_kept)
            selected, gray = self.stage_grayscale_filter(top)
            self._require(selected, "grayscale_filter", occupation.name)
            final = {r.base_id: r for r in generated}
            final.update({r.base_id: r for r in annotated})
            final.update({r.base_id: r for r in gray})
            final.update({r.base_id: r for r in selected})
            self.manifest.extend(final.values())
        return self.manifest

    def build_sets(self, base_manifest: Manifest | None = None) -> Manifest:
        """Stages E-H over the selected base images of ``base_manifest``."""
        if base_manifest is not None and base_manifest is not self.manifest:
            self.manifest.extend(base_manifest.records)
        selected = [r for r in self.manifest.base_images if r.selected]
        by_occupation: dict[str, list[BaseImageRecord]] = {}
        for r in sorted(selected, key=lambda r: r.base_id):
            by_occupation.setdefault(r.occupation, []).append(r)
        for occupation in self.config.occupations:
            records = by_occupation.get(occupation.name, [])
            self._require(records, "grayscale_filter", occupation.name)
            masks = self.stage_mask(records)
            self._require(masks, "mask", occupation.name)
            self.manifest.extend(masks)
            sets = self.stage_perturb(records, masks)
            self._require(sets, "perturb", occupation.name)
            kept, rejected = self.stage_attribute_filter(sets)
            self._require(kept, "attribute_filter", occupation.name)
            self.manifest.extend(rejected)
            self.manifest.extend(self.stage_sample(kept))
        self.manifest = self.manifest.canonicalized()
        return self.manifest

    def run(self) -> Manifest:
        self.build_base_images()
        return self.build_sets()

    @staticmethod
    def _require(records, stage, occupation):
        if not records:
            raise StageError(stage, occupation)


def sample_ids(ids: Sequence[str], n: int, seed: int, warn=None, label="") -> list[str]:
    """Seeded uniform sample of ``n`` ids without replacement (all of them if fewer)."""
    ids = sorted(ids)
    if len(ids) <= n:
        if len(ids) < n and warn is not None:
            warn(f"{label}: only {len(ids)} candidates for a sample of {n}; taking all")
        return ids
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(ids), size=n, replace=False)
    return sorted(ids[i] for i in picks)


def run_pipeline(config: PipelineConfig, adapters: PipelineAdapters, store: ImageStore,
                 clock: Callable[[], str] | None = None) -> Manifest:
    return DatasetPipeline(config, adapters, store, clock=clock).run()


def yield_report(manifest: Manifest) -> dict:
    """Per-occupation, per-stage yields in stage order."""
    report: dict[str, list[dict]] = {}
    for y in sorted(manifest.yields, key=lambda y: (y.occupation, STAGES.index(y.stage))):
        report.setdefault(y.occupation, []).append(
            {"stage": y.stage, "input": y.n_input, "kept": y.n_kept, "dropped": y.n_dropped, "reasons": y.dropped}
        )
    return report


def format_yield_table(manifest: Manifest) -> str:
    lines = [f"{'occupation':<14}{'stage':<18}{'input':>8}{'kept':>8}{'dropped':>9}  reasons"]
    for occupation, rows in yield_report(manifest).items():
        for row in rows:
            reasons = ", ".join(f"{k}={v}" for k, v in row["reasons"].items())
            lines.append(f"{occupation:<14}{row['stage']:<18}{row['input']:>8}{row['kept']:>8}{row['dropped']:>9}  {reasons}")
    return "\n".join(lines)
