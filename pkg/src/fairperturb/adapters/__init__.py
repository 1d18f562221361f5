"""Model-backend interfaces, mock implementations and binding helpers."""

from __future__ import annotations

import importlib
from typing import Any, Mapping

from .base import (
    AdapterError,
    BackendUnavailable,
    GenerationTimeout,
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
)
from .mock import (
    DEMO_MOCK_CONFIG,
    MockDetector,
    MockGenerativeScorer,
    MockImageGenerator,
    MockInpainter,
    MockRaceClassifier,
    MockSegmenter,
    MockVQA,
    MockZeroShotClassifier,
    mock_adapters_from_config,
)

__all__ = [
    "AdapterError", "BackendUnavailable", "GenerationTimeout", "GenerativeScorer",
    "ImageGenerator", "Inpainter", "NoFaceError", "PersonDetector", "PipelineAdapters",
    "PreconditionError", "RaceClassifier", "Segmenter", "VQAModel", "ZeroShotClassifier",
    "DEMO_MOCK_CONFIG", "MockDetector", "MockGenerativeScorer", "MockImageGenerator",
    "MockInpainter", "MockRaceClassifier", "MockSegmenter", "MockVQA",
    "MockZeroShotClassifier", "mock_adapters_from_config", "import_backend",
]


def import_backend(target: str, options: Mapping[str, Any] | None = None, **extra):
    """Instantiate a deployment-supplied backend from ``"package.module:ClassName"``."""
    module_name, _, attr = target.partition(":")
    if not attr:
        raise ValueError(f"backend target must look like 'module:ClassName', got {target!r}")
    try:
        factory = getattr(importlib.import_module(module_name), attr)
    except (ImportError, AttributeError) as exc:
        raise BackendUnavailable(f"cannot import backend {target!r}: {exc}") from exc
    return factory(**dict(options or {}), **extra)
