"""Tests for the reconstruction metrics and evaluation reports."""

from __future__ import annotations

import math

import numpy as np
import pytest
import trimesh

from airnet.errors import DegenerateShapeError
from airnet.extraction.mesh import TriangleMesh
from airnet.metrics import (
    EvalReport,
    ShapeMetrics,
    chamfer_l1,
    evaluate_shape,
    f_score,
    iou,
    mesh_occupancy,
    normal_consistency,
    sample_mesh,
)
from airnet.synthdata.shapes import sphere


def _square(offset=(0.0, 0.0, 0.0), plane: str = "xy") -> TriangleMesh:
    corners = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]])
    zeros = np.zeros((4, 1))
    if plane == "xy":
        vertices = np.hstack([corners, zeros])
    else:
        vertices = np.hstack([zeros, corners])
    return TriangleMesh(vertices + np.asarray(offset), np.array([[0, 1, 2], [0, 2, 3]]))


def _box_mesh(extent: float = 0.6) -> TriangleMesh:
    box = trimesh.creation.box(extents=(extent, extent, extent))
    return TriangleMesh(box.vertices, box.faces)


def test_mesh_against_itself_is_perfect():
    """Identical meshes give chamfer 0, normal consistency 1 and F-score 1."""
    mesh = _box_mesh()
    assert chamfer_l1(mesh, mesh, n_samples=2000) == 0.0
    assert normal_consistency(mesh, mesh, n_samples=2000) == pytest.approx(1.0)
    assert f_score(mesh, mesh, n_samples=2000) == 1.0


def test_iou_of_identical_shapes():
    """A shape overlaps itself completely."""
    shape = sphere(0.3)
    assert iou(shape.occupancy, shape.occupancy, n_samples=5000) == 1.0


def test_iou_of_concentric_spheres():
    """Radii 0.3 and 0.4 overlap by (0.3 / 0.4)^3 = 0.4219."""
    inner, outer = sphere(0.3), sphere(0.4)
    assert iou(inner.occupancy, outer.occupancy, n_samples=100_000) == pytest.approx(0.4219, abs=0.01)


def test_iou_of_two_empty_shapes():
    """An empty union counts as a perfect match."""
    def nothing(points):
        return np.zeros(len(points))

    assert iou(nothing, nothing, n_samples=100) == 1.0


def test_chamfer_of_parallel_squares():
    """Unit squares 0.1 apart are 0.1 apart on average."""
    chamfer = chamfer_l1(_square(), _square((0.0, 0.0, 0.1)), n_samples=5000)
    assert chamfer == pytest.approx(0.1, rel=1e-6)


def test_normal_consistency_of_orthogonal_planes():
    """Perpendicular surfaces have zero normal agreement."""
    value = normal_consistency(_square(), _square(plane="yz"), n_samples=2000)
    assert value == pytest.approx(0.0, abs=1e-9)


def test_f_score_depends_on_the_threshold():
    """A shift of half the threshold scores 1; twice the threshold scores 0."""
    base = _square()
    assert f_score(base, _square((0.0, 0.0, 0.005)), threshold=0.01, n_samples=2000) == 1.0
    assert f_score(base, _square((0.0, 0.0, 0.02)), threshold=0.01, n_samples=2000) == 0.0


def test_sampling_an_empty_mesh():
    """Empty meshes cannot be sampled."""
    with pytest.raises(DegenerateShapeError):
        sample_mesh(TriangleMesh.empty(), 10, seed=0)


def test_mesh_occupancy_of_a_box():
    """A filled voxelization answers inside/outside queries."""
    occupancy = mesh_occupancy(_box_mesh(0.6), pitch=0.02)
    values = occupancy(np.array([[0.0, 0.0, 0.0], [0.1, -0.2, 0.15], [0.45, 0.0, 0.0]]))
    assert values.tolist() == [1.0, 1.0, 0.0]
    assert mesh_occupancy(TriangleMesh.empty(), pitch=0.02)(np.zeros((2, 3))).tolist() == [0.0, 0.0]


def test_evaluate_shape_with_empty_prediction():
    """An empty prediction keeps its IoU and scores infinite chamfer, zero NC and F."""
    target = sphere(0.3)
    metrics = evaluate_shape(
        "shape_00000",
        TriangleMesh.empty(),
        _box_mesh(),
        lambda points: np.zeros(len(points)),
        target.occupancy,
        iou_samples=1000,
        surface_samples=100,
    )
    assert metrics.iou == 0.0
    assert math.isinf(metrics.chamfer_l1)
    assert metrics.normal_consistency == 0.0
    assert metrics.f_score == 0.0


def test_evaluate_shape_against_itself():
    """Ground truth compared with itself is perfect on every metric."""
    mesh = _box_mesh()
    occupancy = mesh_occupancy(mesh, pitch=0.05)
    metrics = evaluate_shape("box", mesh, mesh, occupancy, occupancy, 2000, 2000)
    assert (metrics.iou, metrics.chamfer_l1, metrics.f_score) == (1.0, 0.0, 1.0)
    assert metrics.normal_consistency == pytest.approx(1.0)


def test_report_lines_and_means():
    """The key=value report lists every shape and the mean row."""
    report = EvalReport(
        [ShapeMetrics("a", 0.5, 0.02, 0.9, 0.6), ShapeMetrics("b", 1.0, 0.0, 1.0, 1.0)],
        iou_samples=10_000,
    )
    text = report.to_kv()
    assert "a.iou=0.500000" in text.splitlines()
    assert "mean.iou=0.750000" in text.splitlines()
    assert "mean.chamfer_l1=0.010000" in text.splitlines()
    assert "iou_standard_error_bound=0.005000" in text.splitlines()
    table = report.format_table().splitlines()
    assert table[0].startswith("shape")
    assert table[-1].startswith("mean")
    assert len(table) == 4


def test_empty_report_mean_is_nan():
    """Without rows the mean is undefined."""
    assert math.isnan(EvalReport().mean().iou)
