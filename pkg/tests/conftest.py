from pathlib import Path

import numpy as np
import pytest

from valdnet.config import ModelConfig, TrainConfig
from valdnet.data import save_manifest
from valdnet.synthetic import generate_synthetic, split_dataset

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def micro_config() -> ModelConfig:
    """Micro model sampling 4 frames, small enough for per-test training"""
    return ModelConfig.micro(frames=4)


@pytest.fixture
def quick_train() -> TrainConfig:
    return TrainConfig(epochs=2, batch_size=4, seed=7, record_wall_time=False)


@pytest.fixture
def synthetic_dataset(tmp_path: Path):
    """Five clips per class, 6 frames of 16x16, split 4+4 / 1+1; returns (manifest, root)"""
    root = tmp_path / "synthetic"
    manifest = split_dataset(generate_synthetic(root, seed=3, per_class=5, frames=6, size=16), seed=3)
    save_manifest(manifest, root / "manifest.json")
    return manifest, root
