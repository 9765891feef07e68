"""Tests for point-cloud to mesh reconstruction."""

from __future__ import annotations

import numpy as np
import pytest

from airnet.errors import ConfigError
from airnet.extraction.reconstruct import (
    ExtractionConfig,
    grid_bounds,
    reconstruct,
    reconstruct_shape,
)
from airnet.geometry.pointcloud_io import PointCloud
from airnet.rng import RngStream
from airnet.synthdata.sampling import sample_surface
from airnet.synthdata.shapes import sphere


class CentroidSphereModel:
    """Stands in for a trained network: a soft ball of fixed radius around the cloud centroid."""

    def __init__(self, radius: float = 0.2) -> None:
        self.radius = radius
        self.calls = 0

    def occupancy_function(self, points, workers=1):
        center = np.asarray(points, dtype=np.float64).mean(axis=0)
        self.calls += 1

        def occupancy(queries):
            distance = np.linalg.norm(queries - center, axis=1)
            return 1.0 / (1.0 + np.exp((distance - self.radius) / 0.02))

        return occupancy


def _cloud() -> np.ndarray:
    return sample_surface(sphere(0.2), 300, 0.0, RngStream(50)).points.astype(np.float64)


def test_extraction_config_defaults():
    """Default extraction runs from 32^3 to 128^3 on the padded unit cube."""
    config = ExtractionConfig()
    assert config.final_resolution == 128
    assert config.domain == pytest.approx(0.55)


@pytest.mark.parametrize(
    "kwargs", [{"res0": 7}, {"upsampling_steps": -1}, {"threshold": 0.0}, {"threshold": 1.5}]
)
def test_invalid_extraction_config(kwargs):
    """Extraction settings are range-checked."""
    with pytest.raises(ConfigError):
        ExtractionConfig(**kwargs)


def test_extraction_config_from_section():
    """Section values are coerced from text."""
    config = ExtractionConfig.from_section({"res0": "16", "upsampling_steps": "1", "threshold": "0.4"})
    assert (config.res0, config.upsampling_steps, config.threshold) == (16, 1, 0.4)


def test_grid_bounds_inflate_and_clamp():
    """The cloud box grows by 0.1 per side but never leaves [-0.55, 0.55]."""
    config = ExtractionConfig()
    low, high = grid_bounds(np.array([[-0.1, -0.5, 0.0], [0.2, 0.1, 0.5]]), config)
    assert np.allclose(low, [-0.2, -0.55, -0.1])
    assert np.allclose(high, [0.3, 0.2, 0.55])


def test_reconstruct_encodes_once():
    """The occupancy function is built once per cloud."""
    model = CentroidSphereModel()
    mesh = reconstruct(model, PointCloud(_cloud()), ExtractionConfig(res0=16, upsampling_steps=1))
    assert model.calls == 1
    assert mesh.is_watertight()
    radii = np.linalg.norm(mesh.vertices - _cloud().mean(axis=0), axis=1)
    assert np.max(np.abs(radii - 0.2)) < 0.02


def test_reconstruction_follows_translation():
    """Shifting the cloud shifts the mesh by the same offset."""
    config = ExtractionConfig(res0=16, upsampling_steps=1)
    shift = np.array([0.05, -0.04, 0.03])
    base = reconstruct(CentroidSphereModel(), _cloud(), config)
    moved = reconstruct(CentroidSphereModel(), _cloud() + shift, config)
    assert np.array_equal(moved.faces, base.faces)
    assert np.allclose(moved.vertices, base.vertices + shift, atol=1e-6)


def test_empty_field_gives_empty_mesh():
    """A model that sees nothing reconstructs nothing."""
    mesh = reconstruct(CentroidSphereModel(radius=-0.1), _cloud(), ExtractionConfig(res0=8, upsampling_steps=1))
    assert mesh.is_empty


def test_ground_truth_mesh_of_a_sphere():
    """Exact occupancy extracts a closed sphere within one grid cell."""
    config = ExtractionConfig(res0=16, upsampling_steps=1)
    mesh = reconstruct_shape(sphere(0.3), config)
    assert mesh.is_watertight()
    radii = np.linalg.norm(mesh.vertices, axis=1)
    assert np.max(np.abs(radii - 0.3)) <= 2 * config.domain / config.final_resolution
