"""Demographic perturbation datasets and perturbation-robustness fairness evaluation."""

from .evaluation import (
    FairnessInput,
    FairnessReport,
    PredictionRecord,
    classify,
    fairness_metric,
    fairness_report,
    label_texts,
    lens_classify,
    softmax,
)
from .groups import ALL_GROUPS, DEFAULT_OCCUPATIONS, DemographicGroup, OccupationSpec
from .pipeline import DatasetPipeline, PipelineConfig, run_pipeline
from .prompting import build_base_prompt, build_perturbed_prompt
from .records import Manifest, PerturbationSet, read_manifest, validate_set, write_manifest
from .stats import bonferroni, compare_models, lpm_cluster_regression, moods_median_test

__all__ = [
    "ALL_GROUPS", "DEFAULT_OCCUPATIONS", "DatasetPipeline", "DemographicGroup", "FairnessInput", "FairnessReport",
    "Manifest", "OccupationSpec", "PerturbationSet", "PipelineConfig", "PredictionRecord", "bonferroni",
    "build_base_prompt", "build_perturbed_prompt", "classify", "compare_models", "fairness_metric",
    "fairness_report", "label_texts", "lens_classify", "lpm_cluster_regression", "moods_median_test",
    "read_manifest", "run_pipeline", "softmax", "validate_set", "write_manifest",
]

__version__ = "0.1.0"
