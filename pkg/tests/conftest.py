"""Pytest configuration and fixtures for tests."""

from __future__ import annotations

from pathlib import Path
import sys

import numpy as np
import pytest

# Add the repository root to the path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from airnet.model.decoder import DecoderConfig  # noqa: E402
from airnet.model.encoder import EncoderConfig  # noqa: E402
from airnet.model.network import AirNet, ModelConfig  # noqa: E402
from airnet.rng import RngStream  # noqa: E402
from airnet.synthdata.dataset import make_record  # noqa: E402
from airnet.synthdata.sampling import sample_surface  # noqa: E402
from airnet.synthdata.shapes import sphere, torus  # noqa: E402

TINY_POINTS = 24


def tiny_model_config(dtype: str = "float64", **encoder_overrides) -> ModelConfig:
    """N=24, M=4, d=8, k_enc=4, k_dec=3, one downsampling and one full-attention layer."""
    encoder = {
        "feature_dim": 8,
        "num_anchors": 4,
        "downsampling_layers": 1,
        "full_attention_layers": 1,
        "k_enc": 4,
        **encoder_overrides,
    }
    return ModelConfig(
        EncoderConfig(**encoder),
        DecoderConfig(k_dec=3, width=16, head_layers=2, head_hidden=16),
        dtype,
    )


@pytest.fixture
def tiny_config() -> ModelConfig:
    return tiny_model_config()


@pytest.fixture
def tiny_config_factory():
    return tiny_model_config


@pytest.fixture
def tiny_model(tiny_config) -> AirNet:
    return AirNet.create(tiny_config, seed=3)


@pytest.fixture
def torus_shape():
    return torus(0.25, 0.1)


@pytest.fixture
def sphere_shape():
    return sphere(0.4)


@pytest.fixture
def torus_points(torus_shape) -> np.ndarray:
    """A clean 24-point torus cloud in float64."""
    cloud = sample_surface(torus_shape, TINY_POINTS, 0.0, RngStream(5).split("cloud"))
    return cloud.points.astype(np.float64)


@pytest.fixture
def tiny_records():
    """Three random shapes sized for the tiny model."""
    return [
        make_record(index, seed=11, n_points=TINY_POINTS, n_supervision=64)
        for index in range(3)
    ]
