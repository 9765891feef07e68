"""Reconstruction metrics: volumetric IoU, L1 chamfer, normal consistency, F-score.

Surface metrics compare area-uniform samples of two meshes through
nearest-neighbor queries; both meshes are sampled with the same seed, so a
mesh compared with itself sees identical sample sets.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
import logging
import math

import numpy as np
from scipy.spatial import cKDTree
import trimesh
import trimesh.sample

from .const import (
    DEFAULT_F_SCORE_THRESHOLD,
    DEFAULT_IOU_SAMPLES,
    DEFAULT_OCCUPANCY_THRESHOLD,
    DEFAULT_SURFACE_SAMPLES,
    UNIT_CUBE_HALF,
)
from .errors import DegenerateShapeError
from .extraction.mesh import TriangleMesh
from .rng import RngStream

_LOGGER = logging.getLogger(__name__)

OccupancyFunction = Callable[[np.ndarray], np.ndarray]


@dataclass
class SurfaceSamples:
    points: np.ndarray
    normals: np.ndarray


def sample_mesh(mesh: TriangleMesh, count: int, seed: int) -> SurfaceSamples:
    """Area-uniform surface samples with the normal of the face each came from.

    Raises:
        DegenerateShapeError: if the mesh has no area to sample.
    """
    if mesh.is_empty or mesh.area() <= 0.0:
        raise DegenerateShapeError("cannot sample the surface of an empty mesh")
    surface = mesh.to_trimesh()
    points, face_index = trimesh.sample.sample_surface(surface, count, seed=seed)
    return SurfaceSamples(np.asarray(points), surface.face_normals[face_index])


def _surface_seed(seed: int) -> int:
    return RngStream(seed).split("surface").derive_seed()


def _nearest(source: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    distance, index = cKDTree(target).query(source)
    return distance, index


# --- Sample-level metrics --------------------------------------------------


def chamfer_from_samples(a: SurfaceSamples, b: SurfaceSamples) -> float:
    """``(accuracy + completeness) / 2`` of the mean nearest-neighbor distances."""
    accuracy, _ = _nearest(a.points, b.points)
    completeness, _ = _nearest(b.points, a.points)
    return float(0.5 * (accuracy.mean() + completeness.mean()))


def normal_consistency_from_samples(a: SurfaceSamples, b: SurfaceSamples) -> float:
    _, to_b = _nearest(a.points, b.points)
    _, to_a = _nearest(b.points, a.points)
    dot_a = np.abs(np.einsum("ij,ij->i", a.normals, b.normals[to_b]))
    dot_b = np.abs(np.einsum("ij,ij->i", b.normals, a.normals[to_a]))
    return float(0.5 * (dot_a.mean() + dot_b.mean()))


def f_score_from_samples(a: SurfaceSamples, b: SurfaceSamples, threshold: float) -> float:
    """Harmonic mean of precision (``a`` near ``b``) and recall (``b`` near ``a``)."""
    to_b, _ = _nearest(a.points, b.points)
    to_a, _ = _nearest(b.points, a.points)
    precision = float(np.mean(to_b <= threshold))
    recall = float(np.mean(to_a <= threshold))
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


# --- Mesh-level metrics ----------------------------------------------------


def iou(
    predicted: OccupancyFunction,
    target: OccupancyFunction,
    n_samples: int = DEFAULT_IOU_SAMPLES,
    seed: int = 0,
    threshold: float = DEFAULT_OCCUPANCY_THRESHOLD,
) -> float:
    """Monte-Carlo volumetric IoU over uniform samples of the unit cube; 1 when both are empty."""
    stream = RngStream(seed).split("iou")
    points = stream.uniform(3 * n_samples).reshape(n_samples, 3) - UNIT_CUBE_HALF
    inside_pred = np.asarray(predicted(points)).reshape(-1) >= threshold
    inside_target = np.asarray(target(points)).reshape(-1) >= threshold
    union = np.count_nonzero(inside_pred | inside_target)
    if union == 0:
        return 1.0
    return np.count_nonzero(inside_pred & inside_target) / union


def chamfer_l1(
    mesh_a: TriangleMesh,
    mesh_b: TriangleMesh,
    n_samples: int = DEFAULT_SURFACE_SAMPLES,
    seed: int = 0,
) -> float:
    seed = _surface_seed(seed)
    return chamfer_from_samples(sample_mesh(mesh_a, n_samples, seed), sample_mesh(mesh_b, n_samples, seed))


def normal_consistency(
    mesh_a: TriangleMesh,
    mesh_b: TriangleMesh,
    n_samples: int = DEFAULT_SURFACE_SAMPLES,
    seed: int = 0,
) -> float:
    seed = _surface_seed(seed)
    return normal_consistency_from_samples(
        sample_mesh(mesh_a, n_samples, seed), sample_mesh(mesh_b, n_samples, seed)
    )


def f_score(
    mesh_a: TriangleMesh,
    mesh_b: TriangleMesh,
    threshold: float = DEFAULT_F_SCORE_THRESHOLD,
    n_samples: int = DEFAULT_SURFACE_SAMPLES,
    seed: int = 0,
) -> float:
    seed = _surface_seed(seed)
    return f_score_from_samples(
        sample_mesh(mesh_a, n_samples, seed), sample_mesh(mesh_b, n_samples, seed), threshold
    )


def mesh_occupancy(mesh: TriangleMesh, pitch: float) -> OccupancyFunction:
    """Inside test for a closed mesh through a filled voxelization of side ``pitch``."""
    if mesh.is_empty:
        return lambda points: np.zeros(len(points))
    voxels = mesh.to_trimesh().voxelized(pitch).fill()
    return lambda points: voxels.is_filled(np.asarray(points)).astype(np.float64)


# --- Reports ---------------------------------------------------------------


@dataclass(frozen=True)
class ShapeMetrics:
    name: str
    iou: float
    chamfer_l1: float
    normal_consistency: float
    f_score: float


@dataclass
class EvalReport:
    rows: list[ShapeMetrics] = field(default_factory=list)
    iou_samples: int = DEFAULT_IOU_SAMPLES
    surface_samples: int = DEFAULT_SURFACE_SAMPLES
    f_score_threshold: float = DEFAULT_F_SCORE_THRESHOLD
    seed: int = 0

    def mean(self, name: str = "mean") -> ShapeMetrics:
        if not self.rows:
            return ShapeMetrics(name, math.nan, math.nan, math.nan, math.nan)
        return ShapeMetrics(
            name,
            float(np.mean([row.iou for row in self.rows])),
            float(np.mean([row.chamfer_l1 for row in self.rows])),
            float(np.mean([row.normal_consistency for row in self.rows])),
            float(np.mean([row.f_score for row in self.rows])),
        )

    @property
    def iou_standard_error_bound(self) -> float:
        """Binomial worst case ``0.5 / sqrt(n)`` of one Monte-Carlo IoU estimate."""
        return 0.5 / math.sqrt(self.iou_samples)

    def format_table(self) -> str:
        return format_metrics_table([*self.rows, self.mean()], label="shape")

    def to_kv(self) -> str:
        lines = [
            f"seed={self.seed}",
            f"iou_samples={self.iou_samples}",
            f"surface_samples={self.surface_samples}",
            f"f_score_threshold={self.f_score_threshold:g}",
            f"iou_standard_error_bound={self.iou_standard_error_bound:.6f}",
        ]
        for row in [*self.rows, self.mean()]:
            lines += [
                f"{row.name}.iou={row.iou:.6f}",
                f"{row.name}.chamfer_l1={row.chamfer_l1:.6f}",
                f"{row.name}.normal_consistency={row.normal_consistency:.6f}",
                f"{row.name}.f_score={row.f_score:.6f}",
            ]
        return "\n".join(lines) + "\n"


def format_metrics_table(rows: Sequence[ShapeMetrics], label: str = "shape") -> str:
    width = max([len(label), *(len(row.name) for row in rows)])
    lines = [f"{label:<{width}}  {'IoU↑':>8}  {'L1-CD↓':>8}  {'NC↑':>8}  {'F-Score↑':>8}"]
    lines += [
        f"{row.name:<{width}}  {row.iou:>8.4f}  {row.chamfer_l1:>8.4f}  "
        f"{row.normal_consistency:>8.4f}  {row.f_score:>8.4f}"
        for row in rows
    ]
    return "\n".join(lines)


def evaluate_shape(
    name: str,
    predicted_mesh: TriangleMesh,
    target_mesh: TriangleMesh,
    predicted_occupancy: OccupancyFunction,
    target_occupancy: OccupancyFunction,
    iou_samples: int = DEFAULT_IOU_SAMPLES,
    surface_samples: int = DEFAULT_SURFACE_SAMPLES,
    f_score_threshold: float = DEFAULT_F_SCORE_THRESHOLD,
    seed: int = 0,
) -> ShapeMetrics:
    """All four metrics for one shape; an empty prediction scores zero with infinite chamfer."""
    volume = iou(predicted_occupancy, target_occupancy, iou_samples, seed)
    if predicted_mesh.is_empty:
        _LOGGER.warning("Predicted mesh for %s is empty", name)
        return ShapeMetrics(name, volume, math.inf, 0.0, 0.0)
    surface_seed = _surface_seed(seed)
    a = sample_mesh(predicted_mesh, surface_samples, surface_seed)
    b = sample_mesh(target_mesh, surface_samples, surface_seed)
    return ShapeMetrics(
        name,
        volume,
        chamfer_from_samples(a, b),
        normal_consistency_from_samples(a, b),
        f_score_from_samples(a, b, f_score_threshold),
    )
