"""Tests for multiresolution isosurface extraction."""

from __future__ import annotations

import numpy as np
import pytest

from airnet.errors import ConfigError, NumericError
from airnet.extraction.marching_cubes import marching_cubes
from airnet.extraction.mise import dense_grid, mise, straddling_cells
from airnet.rng import RngStream


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _sphere_field(radius: float = 0.4, center=(0.0, 0.0, 0.0)):
    center = np.asarray(center)

    def occupancy(points: np.ndarray) -> np.ndarray:
        return _sigmoid((radius - np.linalg.norm(points - center, axis=1)) / 0.05)

    return occupancy


def _ellipsoid_field(axes: np.ndarray, center: np.ndarray):
    def occupancy(points: np.ndarray) -> np.ndarray:
        level = np.linalg.norm((points - center) / axes, axis=1)
        return _sigmoid((1.0 - level) / 0.1)

    return occupancy


def test_constant_field_evaluates_only_the_initial_grid():
    """Nothing straddles the threshold, so no refinement happens."""
    grid = mise(lambda points: np.full(len(points), 0.2), res0=16, upsampling_steps=2)
    assert grid.resolution == 64
    assert grid.n_evaluations == 17**3
    assert not grid.occupied().any()
    assert marching_cubes(grid).is_empty


def test_sphere_matches_dense_grid_with_fewer_evaluations():
    """res0 32 with two doublings reproduces the dense 128 grid using < 30% of its evaluations."""
    occupancy = _sphere_field()
    refined = mise(occupancy, res0=32, upsampling_steps=2)
    dense = dense_grid(occupancy, resolution=128)
    assert refined.resolution == 128
    assert np.array_equal(refined.occupied(), dense.occupied())
    assert refined.n_evaluations < 0.3 * dense.n_evaluations
    evaluated = refined.evaluated
    assert np.array_equal(refined.values[evaluated], dense.values[evaluated])

    mesh_refined = marching_cubes(refined)
    mesh_dense = marching_cubes(dense)
    assert np.array_equal(mesh_refined.faces, mesh_dense.faces)
    assert np.allclose(mesh_refined.vertices, mesh_dense.vertices, atol=1e-12)


def test_random_ellipsoids_match_dense_grids():
    """Convex fields are extracted exactly at res0 16 with two doublings."""
    for index in range(10):
        u = RngStream(40).split(index).uniform(6)
        axes = 0.15 + 0.25 * u[:3]
        center = 0.1 * (u[3:] - 0.5)
        occupancy = _ellipsoid_field(axes, center)
        refined = mise(occupancy, res0=16, upsampling_steps=2)
        dense = dense_grid(occupancy, resolution=64)
        assert np.array_equal(refined.occupied(), dense.occupied()), f"ellipsoid {index}"
        assert refined.n_evaluations < dense.n_evaluations


def _blob_field(seed: int, count: int = 8):
    """Sigmoid of a sum of Gaussian bumps: merged, pinched and disjoint pieces."""
    stream = RngStream(seed).split("blobs")
    centers = 0.6 * stream.uniform(3 * count).reshape(count, 3) - 0.3
    widths = 0.07 + 0.05 * stream.uniform(count)
    weights = 0.8 + 0.4 * stream.uniform(count)

    def occupancy(points: np.ndarray) -> np.ndarray:
        level = np.zeros(len(points))
        for center, width, weight in zip(centers, widths, weights, strict=True):
            d2 = np.sum((points - center) ** 2, axis=1)
            level += weight * np.exp(-0.5 * d2 / width**2)
        return _sigmoid((level - 0.5) / 0.05)

    return occupancy


@pytest.mark.parametrize("seed", range(10))
def test_random_smooth_fields_match_dense_grids(seed):
    """Non-convex blob fields give the dense 128 grid's occupancy at every vertex."""
    occupancy = _blob_field(seed)
    refined = mise(occupancy, res0=32, upsampling_steps=2)
    dense = dense_grid(occupancy, resolution=128)
    mismatched = np.argwhere(refined.occupied() != dense.occupied())
    assert len(mismatched) == 0, f"{len(mismatched)} vertices differ, first {mismatched[:3].tolist()}"
    assert np.array_equal(
        straddling_cells(refined.values, 0.5), straddling_cells(dense.values, 0.5)
    )
    assert refined.n_evaluations < dense.n_evaluations


def test_surface_is_followed_through_a_thin_neck():
    """Two bumps joined by a neck narrower than a coarse cell extract as one piece."""
    centers = np.array([[-0.2, 0.0, 0.0], [0.2, 0.0, 0.0]])

    def occupancy(points: np.ndarray) -> np.ndarray:
        level = sum(
            np.exp(-0.5 * np.sum((points - center) ** 2, axis=1) / 0.121**2) for center in centers
        )
        return _sigmoid((level - 0.5) / 0.05)

    refined = mise(occupancy, res0=16, upsampling_steps=3)
    dense = dense_grid(occupancy, resolution=128)
    assert np.array_equal(refined.occupied(), dense.occupied())


def test_zero_upsampling_steps_is_dense():
    """Without doublings MISE is the plain initial grid."""
    occupancy = _sphere_field(0.3)
    refined = mise(occupancy, res0=16, upsampling_steps=0)
    dense = dense_grid(occupancy, resolution=16)
    assert np.array_equal(refined.values, dense.values)
    assert refined.n_evaluations == refined.dense_evaluations


def test_straddling_cells():
    """Only cells with corners on both sides are active."""
    values = np.zeros((3, 3, 3))
    values[0, 0, 0] = 1.0
    active = straddling_cells(values, 0.5)
    assert active.shape == (2, 2, 2)
    assert active.sum() == 1
    assert active[0, 0, 0]


def test_vertex_positions_span_the_box():
    """Vertex 0 is the low corner and vertex R the high one."""
    grid = mise(_sphere_field(), low=(-0.5, -0.5, -0.5), high=(0.5, 0.5, 0.5), res0=8, upsampling_steps=1)
    assert np.allclose(grid.vertex_positions([0, 0, 0]), -0.5)
    assert np.allclose(grid.vertex_positions([16, 16, 16]), 0.5)
    assert np.allclose(grid.spacing, 1.0 / 16)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"res0": 4},
        {"upsampling_steps": -1},
        {"threshold": 1.0},
        {"threshold": 0.0},
        {"low": (0.1, 0.0, 0.0), "high": (0.1, 1.0, 1.0)},
    ],
)
def test_invalid_arguments(kwargs):
    """Resolutions below 8, negative steps, thresholds outside (0, 1) and empty boxes fail."""
    with pytest.raises(ConfigError):
        mise(_sphere_field(), **kwargs)


def test_non_finite_occupancy():
    """NaN from the occupancy function is a numeric error."""
    with pytest.raises(NumericError):
        mise(lambda points: np.full(len(points), np.nan), res0=8, upsampling_steps=1)
