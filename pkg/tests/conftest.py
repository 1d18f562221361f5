import copy

import numpy as np
import pytest

from fairperturb.adapters import DEMO_MOCK_CONFIG, mock_adapters_from_config
from fairperturb.evaluation import make_prediction
from fairperturb.groups import ALL_GROUPS, get_occupation
from fairperturb.pipeline import DatasetPipeline, PipelineConfig
from fairperturb.store import ImageStore

FIXED_TIME = "2024-01-01T00:00:00+00:00"


def fixed_clock():
    return FIXED_TIME


@pytest.fixture
def store(tmp_path):
    return ImageStore(tmp_path / "data")


def small_config(**overrides):
    params = dict(
        occupations=[get_occupation("chef")],
        images_per_occupation=40,
        top_k=20,
        sets_per_occupation=5,
        image_size=(32, 32),
        seed=7,
    )
    params.update(overrides)
    return PipelineConfig(**params)


def mock_config(**overrides):
    cfg = copy.deepcopy(DEMO_MOCK_CONFIG)
    cfg["generator"] = {"grayscale_seeds": [9, 12]}
    cfg.update(overrides)
    return cfg


def make_pipeline(store, config=None, mocks=None, clock=fixed_clock):
    config = config or small_config()
    adapters = mock_adapters_from_config(mocks if mocks is not None else mock_config(), store)
    return DatasetPipeline(config, adapters, store, clock=clock)


def predictions_from_probs(probs, occupation="chef", label_list=("chef", "line cook")):
    """Two-label predictions with true-label probability ``probs[set][group]``."""
    out = []
    for i, row in enumerate(np.asarray(probs, dtype=float)):
        for j, p in enumerate(row):
            out.append(make_prediction([p, 1.0 - p], label_list, label_list[0], set_id=f"s{i:04d}",
                                       group=ALL_GROUPS[j], occupation=occupation))
    return out
