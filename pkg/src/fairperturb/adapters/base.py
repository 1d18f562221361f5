"""Backend interfaces consumed by the dataset pipeline and the evaluator.

Concrete backends (diffusion models, VQA, detectors, classifiers) are supplied
by the deployment. Every method that produces a file takes the destination
``out`` ref and returns it.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..groups import DemographicGroup
from ..records import Box, VQAResult


class AdapterError(RuntimeError):
    """Any backend failure."""


class BackendUnavailable(AdapterError):
    pass


class GenerationTimeout(AdapterError):
    pass


class PreconditionError(AdapterError):
    """The caller passed inputs that violate the adapter contract."""


class NoFaceError(AdapterError):
    """The attribute classifier found no face; the variant cannot be labeled."""


class ImageGenerator(ABC):
    # Set to True for backends that must not be called concurrently.
    serial = False

    @abstractmethod
    def generate(self, prompt: str, seed: int, size: tuple[int, int], out: str) -> str:
        """Render ``prompt`` with ``seed`` at ``size`` (width, height) into ``out``."""


class Inpainter(ABC):
    serial = False

    @abstractmethod
    def inpaint(self, base: str, mask: str, prompt: str, seed: int, out: str) -> str:
        """Regenerate the masked region of ``base`` conditioned on ``prompt``."""


class VQAModel(ABC):
    serial = False

    @abstractmethod
    def answer(self, image: str, question: str) -> VQAResult:
        ...


class PersonDetector(ABC):
    serial = False

    @abstractmethod
    def detect(self, image: str, query: str) -> list[Box]:
        """Boxes (pixel coordinates, clipped to the image) matching ``query``."""


class Segmenter(ABC):
    serial = False

    @abstractmethod
    def segment(self, image: str, box: Box, out: str) -> str:
        """Write a binary mask for the object inside ``box`` to ``out``."""


class RaceClassifier(ABC):
    serial = False

    @abstractmethod
    def classify(self, image: str) -> DemographicGroup:
        """Perceived group of the face in ``image``; raises ``NoFaceError`` if none."""


class ZeroShotClassifier(ABC):
    serial = False

    @abstractmethod
    def similarities(self, image: str, label_texts: Sequence[str]) -> np.ndarray:
        """Cosine similarity between ``image`` and each label text, in order."""


class GenerativeScorer(ABC):
    serial = False

    @abstractmethod
    def log_probs(self, image: str, prompt_template: str, answers: Sequence[str]) -> np.ndarray:
        """Joint (summed token) log probability of each answer continuation."""


def check_similarities(values, n_labels: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != (n_labels,):
        raise AdapterError(f"expected {n_labels} similarities, got shape {values.shape}")
    if not np.all(np.isfinite(values)) or np.any(np.abs(values) > 1.0 + 1e-9):
        raise AdapterError("cosine similarities must be finite and lie in [-1, 1]")
    return values


def check_log_probs(values, n_answers: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != (n_answers,):
        raise AdapterError(f"expected {n_answers} log probabilities, got shape {values.shape}")
    if not np.all(np.isfinite(values)) or np.any(values > 0):
        raise AdapterError("joint log probabilities must be finite and <= 0")
    return values


@dataclass
class PipelineAdapters:
    """The six backends the dataset pipeline needs."""

    generator: ImageGenerator
    vqa: VQAModel
    detector: PersonDetector
    segmenter: Segmenter
    inpainter: Inpainter
    race_classifier: RaceClassifier
