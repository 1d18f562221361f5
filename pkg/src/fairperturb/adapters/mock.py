"""Deterministic in-process backends for tests, demos and dry runs.

Every mock is a pure function of its configuration and inputs, so a pipeline
run with mocks is bit-reproducible.
"""

from __future__ import annotations

import fnmatch
from pathlib import PurePosixPath
from typing import Mapping, Sequence

import numpy as np

from .._hashing import stable_int, stable_uniform
from ..groups import ALL_GROUPS, DemographicGroup
from ..records import Box, VQAResult
from ..store import ImageStore
from .base import (
    BackendUnavailable,
    GenerativeScorer,
    ImageGenerator,
    Inpainter,
    NoFaceError,
    PersonDetector,
    PipelineAdapters,
    PreconditionError,
    RaceClassifier,
    Segmenter,
    VQAModel,
    ZeroShotClassifier,
    check_log_probs,
    check_similarities,
)


def seeded_pixels(prompt: str, seed: int, size: tuple[int, int]) -> np.ndarray:
    """Uniform RGB noise keyed by (prompt, seed); shape (height, width, 3)."""
    width, height = size
    rng = np.random.default_rng(stable_int("pixels", prompt, seed, bits=63))
    return rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)


class MockImageGenerator(ImageGenerator):
    """Seed-keyed noise images.

    ``fail_seeds`` raise ``BackendUnavailable``; ``grayscale_seeds`` produce a
    gray image (all channels equal), useful for exercising the grayscale filter.
    """

    def __init__(self, store: ImageStore, fail_seeds=(), grayscale_seeds=()):
        self.store = store
        self.fail_seeds = set(fail_seeds)
        self.grayscale_seeds = set(grayscale_seeds)

    def generate(self, prompt, seed, size=(1024, 1024), out=None):
        if seed in self.fail_seeds:
            raise BackendUnavailable(f"mock generator configured to fail seed {seed}")
        pixels = seeded_pixels(prompt, seed, size)
        if seed in self.grayscale_seeds:
            pixels = np.repeat(pixels[..., :1], 3, axis=2)
        return self.store.write_image(out, pixels)


class MockInpainter(Inpainter):
    """Replaces masked pixels with seeded noise; unmasked pixels are copied exactly."""

    def __init__(self, store: ImageStore, fail_prompts=()):
        self.store = store
        self.fail_prompts = set(fail_prompts)

    def inpaint(self, base, mask, prompt, seed, out):
        if prompt in self.fail_prompts:
            raise BackendUnavailable(f"mock inpainter configured to fail prompt {prompt!r}")
        pixels = self.store.read_image(base)
        region = self.store.read_mask(mask)
        if region.shape != pixels.shape[:2]:
            raise PreconditionError(
                f"mask resolution {region.shape[::-1]} differs from image resolution {pixels.shape[1::-1]}"
            )
        height, width = region.shape
        fresh = seeded_pixels(prompt, seed, (width, height))
        return self.store.write_image(out, np.where(region[..., None], fresh, pixels))


class MockVQA(VQAModel):
    """Table-driven VQA.

    Lookup order: exact ``(image, question)`` in ``table``; then the first
    glob pattern in ``by_question`` matching the question, which draws an
    answer from ``answers``/``weights`` by a hash of (image, question) and a
    score in [0.5, 1); then ``default``.
    """

    def __init__(self, table: Mapping | None = None, default=("no", 0.5),
                 by_question: Mapping | None = None, fail_images=()):
        self.table = {k: VQAResult(*v) if not isinstance(v, VQAResult) else v for k, v in (table or {}).items()}
        self.default = VQAResult(*default)
        self.by_question = dict(by_question or {})
        self.fail_images = set(fail_images)

    def answer(self, image, question):
        if image in self.fail_images:
            raise BackendUnavailable(f"mock VQA configured to fail on {image}")
        if (image, question) in self.table:
            return self.table[(image, question)]
        for pattern, rule in self.by_question.items():
            if fnmatch.fnmatchcase(question, pattern):
                answers = list(rule["answers"])
                weights = np.asarray(rule.get("weights", [1.0] * len(answers)), dtype=float)
                cdf = np.cumsum(weights / weights.sum())
                u = stable_uniform("vqa-answer", image, question)
                idx = min(int(np.searchsorted(cdf, u, side="right")), len(answers) - 1)
                score = 0.5 + 0.5 * stable_uniform("vqa-score", image, question)
                return VQAResult(answers[idx], score)
        return self.default


class MockDetector(PersonDetector):
    """Returns configured boxes per image.

    ``default`` boxes are given in fractional coordinates and scaled to the
    image; table entries are in pixels. Results are clipped to the image.
    """

    def __init__(self, store: ImageStore, table: Mapping | None = None,
                 default: Sequence = ((0.25, 0.25, 0.75, 0.75, 0.9),), fail_images=()):
        self.store = store
        self.table = {k: [b if isinstance(b, Box) else Box(*b) for b in v] for k, v in (table or {}).items()}
        self.default = [b if isinstance(b, Box) else Box(*b) for b in default]
        self.fail_images = set(fail_images)

    def detect(self, image, query):
        if not query:
            raise PreconditionError("detector query must be nonempty")
        if image in self.fail_images:
            raise BackendUnavailable(f"mock detector configured to fail on {image}")
        width, height = self.store.image_size(image)
        if image in self.table:
            boxes = self.table[image]
        else:
            boxes = [Box(b.x0 * width, b.y0 * height, b.x1 * width, b.y1 * height, b.confidence)
                     for b in self.default]
        return [b.clip(width, height) for b in boxes]


class MockSegmenter(Segmenter):
    """Fills the box rectangle (pixel edges rounded to the nearest integer)."""

    def __init__(self, store: ImageStore, fail_images=()):
        self.store = store
        self.fail_images = set(fail_images)

    def segment(self, image, box, out):
        if image in self.fail_images:
            raise BackendUnavailable(f"mock segmenter configured to fail on {image}")
        width, height = self.store.image_size(image)
        if not box.within(width, height):
            raise PreconditionError(f"box {box} outside image bounds {width}x{height}")
        x0, y0, x1, y1 = (int(round(v)) for v in (box.x0, box.y0, box.x1, box.y1))
        if x1 <= x0 or y1 <= y0:
            raise PreconditionError(f"degenerate box {box}")
        mask = np.zeros((height, width), dtype=bool)
        mask[y0:y1, x0:x1] = True
        return self.store.write_mask(out, mask)


class MockRaceClassifier(RaceClassifier):
    """Group lookup by image ref.

    With ``infer_from_ref`` the group is read from the file stem (the pipeline
    stores variants as ``.../<CanonicalName>.png``). ``flip_rate`` and
    ``no_face_rate`` inject hash-determined misclassifications and misses.
    """

    def __init__(self, table: Mapping | None = None, infer_from_ref=False,
                 flip_rate=0.0, no_face_rate=0.0, salt=""):
        self.table = {k: DemographicGroup.parse(v) for k, v in (table or {}).items()}
        self.infer_from_ref = infer_from_ref
        self.flip_rate = flip_rate
        self.no_face_rate = no_face_rate
        self.salt = salt

    def classify(self, image):
        if image in self.table:
            return self.table[image]
        if not self.infer_from_ref:
            raise NoFaceError(f"no face found in {image}")
        try:
            group = DemographicGroup.parse(PurePosixPath(image).stem)
        except ValueError:
            raise NoFaceError(f"no face found in {image}") from None
        if stable_uniform("no-face", self.salt, image) < self.no_face_rate:
            raise NoFaceError(f"no face found in {image}")
        if stable_uniform("flip", self.salt, image) < self.flip_rate:
            group = ALL_GROUPS[(ALL_GROUPS.index(group) + 1) % len(ALL_GROUPS)]
        return group


class MockZeroShotClassifier(ZeroShotClassifier):
    """Similarities from a per-image table, else ``default``, else hashed values in [0.15, 0.35)."""

    def __init__(self, table: Mapping | None = None, default=None, fail_images=()):
        self.table = {k: np.asarray(v, dtype=float) for k, v in (table or {}).items()}
        self.default = None if default is None else np.asarray(default, dtype=float)
        self.fail_images = set(fail_images)

    def similarities(self, image, label_texts):
        if not label_texts:
            raise PreconditionError("label_texts must be nonempty")
        if image in self.fail_images:
            raise BackendUnavailable(f"mock classifier configured to fail on {image}")
        if image in self.table:
            values = self.table[image]
        elif self.default is not None:
            values = self.default
        else:
            values = [0.15 + 0.2 * stable_uniform("sim", image, text) for text in label_texts]
        return check_similarities(values, len(label_texts))


class MockGenerativeScorer(GenerativeScorer):
    """Joint log probability = sum of configured per-token log probabilities.

    ``token_table`` maps an answer to its token log probs; unknown answers are
    split on whitespace and each token scores ``default_token_logprob``.
    ``per_image`` overrides the table for specific images.
    """

    def __init__(self, token_table: Mapping | None = None, per_image: Mapping | None = None,
                 default_token_logprob=-5.0):
        self.token_table = {k: list(v) for k, v in (token_table or {}).items()}
        self.per_image = {img: {k: list(v) for k, v in t.items()} for img, t in (per_image or {}).items()}
        self.default_token_logprob = default_token_logprob

    def log_probs(self, image, prompt_template, answers):
        if not answers:
            raise PreconditionError("answers must be nonempty")
        table = {**self.token_table, **self.per_image.get(image, {})}
        joint = []
        for answer in answers:
            tokens = table.get(answer)
            if tokens is None:
                tokens = [self.default_token_logprob] * max(1, len(answer.split()))
            joint.append(float(np.sum(tokens)))
        return check_log_probs(joint, len(answers))


def _pairs_table(entries, key_fields, value_fields):
    return {tuple(e[k] for k in key_fields): tuple(e[v] for v in value_fields) for e in entries or []}


def mock_adapters_from_config(config: Mapping, store: ImageStore) -> PipelineAdapters:
    """Build the six pipeline mocks from a JSON/YAML-style mapping.

    Schema (all keys optional)::

        generator:  {fail_seeds: [int], grayscale_seeds: [int]}
        vqa:        {table: [{image, question, answer, score}],
                     default: [answer, score],
                     by_question: {glob: {answers: [str], weights: [float]}},
                     fail_images: [ref]}
        detector:   {table: {ref: [[x0, y0, x1, y1, conf]]},
                     default: [[fx0, fy0, fx1, fy1, conf]], fail_images: [ref]}
        segmenter:  {fail_images: [ref]}
        inpainter:  {fail_prompts: [str]}
        race_classifier: {table: {ref: group}, infer_from_ref: bool,
                          flip_rate: float, no_face_rate: float, salt: str}
    """
    gen = config.get("generator", {})
    vqa = config.get("vqa", {})
    det = config.get("detector", {})
    seg = config.get("segmenter", {})
    inp = config.get("inpainter", {})
    race = config.get("race_classifier", {"infer_from_ref": True})
    det_kwargs = {"table": det.get("table"), "fail_images": det.get("fail_images", ())}
    if "default" in det:
        det_kwargs["default"] = det["default"]
    return PipelineAdapters(
        generator=MockImageGenerator(store, gen.get("fail_seeds", ()), gen.get("grayscale_seeds", ())),
        vqa=MockVQA(
            table=_pairs_table(vqa.get("table"), ("image", "question"), ("answer", "score")),
            default=tuple(vqa.get("default", ("no", 0.5))),
            by_question=vqa.get("by_question"),
            fail_images=vqa.get("fail_images", ()),
        ),
        detector=MockDetector(store, **det_kwargs),
        segmenter=MockSegmenter(store, seg.get("fail_images", ())),
        inpainter=MockInpainter(store, inp.get("fail_prompts", ())),
        race_classifier=MockRaceClassifier(
            table=race.get("table"),
            infer_from_ref=race.get("infer_from_ref", False),
            flip_rate=race.get("flip_rate", 0.0),
            no_face_rate=race.get("no_face_rate", 0.0),
            salt=race.get("salt", ""),
        ),
    )


# A permissive configuration: most images pass the VQA questions, a few do not.
DEMO_MOCK_CONFIG = {
    "vqa": {
        "by_question": {
            "Is there a * in this image?": {"answers": ["yes", "no"], "weights": [0.9, 0.1]},
            "Are this person's limbs distorted?": {"answers": ["no", "yes"], "weights": [0.85, 0.15]},
            "Is this image real or fake?": {"answers": ["real", "fake"], "weights": [0.7, 0.3]},
        }
    },
    "race_classifier": {"infer_from_ref": True, "flip_rate": 0.05},
}
