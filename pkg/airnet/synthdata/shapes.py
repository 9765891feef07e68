"""Analytic watertight shapes: primitives, poses and unions with exact SDFs.

Signed distances are negative inside. Every primitive knows its surface area
and how to draw area-uniform points on its own surface in local coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Any

import numpy as np

from ..const import SHAPE_MARGIN, UNIT_CUBE_HALF
from ..errors import DataFormatError, DegenerateShapeError
from ..rng import RngStream

KIND_SPHERE = "sphere"
KIND_BOX = "box"
KIND_TORUS = "torus"
PRIMITIVE_KINDS = (KIND_SPHERE, KIND_BOX, KIND_TORUS)


@dataclass(frozen=True)
class Sphere:
    radius: float

    kind = KIND_SPHERE

    def sdf(self, p: np.ndarray) -> np.ndarray:
        return np.linalg.norm(p, axis=-1) - self.radius

    def area(self) -> float:
        return 4.0 * math.pi * self.radius**2

    def half_extents(self) -> np.ndarray:
        return np.full(3, self.radius)

    def sample_surface(self, stream: RngStream, n: int) -> np.ndarray:
        directions = stream.gaussian(3 * n).reshape(n, 3)
        norms = np.linalg.norm(directions, axis=1, keepdims=True)
        return self.radius * directions / np.maximum(norms, 1e-300)

    def params(self) -> dict[str, Any]:
        return {"radius": self.radius}


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its half side lengths."""

    half_size: tuple[float, float, float]

    kind = KIND_BOX

    def sdf(self, p: np.ndarray) -> np.ndarray:
        q = np.abs(p) - np.asarray(self.half_size)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def _face_areas(self) -> np.ndarray:
        hx, hy, hz = self.half_size
        # One entry per face pair, normal along x, y, z.
        return 4.0 * np.array([hy * hz, hx * hz, hx * hy])

    def area(self) -> float:
        return float(2.0 * self._face_areas().sum())

    def half_extents(self) -> np.ndarray:
        return np.asarray(self.half_size, dtype=np.float64)

    def sample_surface(self, stream: RngStream, n: int) -> np.ndarray:
        half = np.asarray(self.half_size, dtype=np.float64)
        pair_weights = self._face_areas() / self._face_areas().sum()
        u = stream.uniform(n)
        axis = np.minimum(np.searchsorted(np.cumsum(pair_weights), u, side="right"), 2)
        side = np.where(stream.uniform(n) < 0.5, -1.0, 1.0)
        points = (2.0 * stream.uniform(3 * n).reshape(n, 3) - 1.0) * half
        rows = np.arange(n)
        points[rows, axis] = side * half[axis]
        return points

    def params(self) -> dict[str, Any]:
        return {"half_size": list(self.half_size)}


@dataclass(frozen=True)
class Torus:
    """Torus around a coordinate axis (0=x, 1=y, 2=z)."""

    major: float
    minor: float
    axis: int = 2

    kind = KIND_TORUS

    def _to_z(self, p: np.ndarray) -> np.ndarray:
        order = [(self.axis + 1) % 3, (self.axis + 2) % 3, self.axis]
        return p[..., order]

    def _from_z(self, p: np.ndarray) -> np.ndarray:
        out = np.empty_like(p)
        out[..., (self.axis + 1) % 3] = p[..., 0]
        out[..., (self.axis + 2) % 3] = p[..., 1]
        out[..., self.axis] = p[..., 2]
        return out

    def sdf(self, p: np.ndarray) -> np.ndarray:
        q = self._to_z(p)
        ring = np.hypot(q[..., 0], q[..., 1]) - self.major
        return np.hypot(ring, q[..., 2]) - self.minor

    def area(self) -> float:
        return 4.0 * math.pi**2 * self.major * self.minor

    def half_extents(self) -> np.ndarray:
        extents = np.full(3, self.major + self.minor)
        extents[self.axis] = self.minor
        return extents

    def sample_surface(self, stream: RngStream, n: int) -> np.ndarray:
        # Rejection on the tube angle: area density is proportional to R + r cos(phi).
        accepted: list[np.ndarray] = []
        have = 0
        while have < n:
            batch = max(2 * (n - have), 64)
            theta = 2.0 * math.pi * stream.uniform(batch)
            phi = 2.0 * math.pi * stream.uniform(batch)
            keep = stream.uniform(batch) * (self.major + self.minor) <= (
                self.major + self.minor * np.cos(phi)
            )
            theta, phi = theta[keep], phi[keep]
            ring = self.major + self.minor * np.cos(phi)
            local = np.stack(
                [ring * np.cos(theta), ring * np.sin(theta), self.minor * np.sin(phi)], axis=1
            )
            accepted.append(local)
            have += len(local)
        return self._from_z(np.concatenate(accepted)[:n])

    def params(self) -> dict[str, Any]:
        return {"major": self.major, "minor": self.minor, "axis": self.axis}


Primitive = Sphere | Box | Torus


@dataclass(frozen=True)
class Pose:
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0

    def to_local(self, p: np.ndarray) -> np.ndarray:
        return (p - np.asarray(self.center)) / self.scale

    def to_world(self, p: np.ndarray) -> np.ndarray:
        return p * self.scale + np.asarray(self.center)


@dataclass(frozen=True)
class Part:
    primitive: Primitive
    pose: Pose = Pose()

    def sdf(self, p: np.ndarray) -> np.ndarray:
        return self.pose.scale * self.primitive.sdf(self.pose.to_local(p))

    def area(self) -> float:
        return self.primitive.area() * self.pose.scale**2

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        center = np.asarray(self.pose.center, dtype=np.float64)
        half = self.primitive.half_extents() * self.pose.scale
        return center - half, center + half

    def sample_surface(self, stream: RngStream, n: int) -> np.ndarray:
        return self.pose.to_world(self.primitive.sample_surface(stream, n))


@dataclass(frozen=True)
class SdfShape:
    """Union of posed primitives."""

    parts: tuple[Part, ...]

    def __post_init__(self) -> None:
        if not self.parts:
            raise DegenerateShapeError("a shape needs at least one primitive")

    def sdf(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return np.min([part.sdf(points) for part in self.parts], axis=0)

    def occupancy(self, points: np.ndarray) -> np.ndarray:
        """Exact occupancy indicator ``sdf <= 0`` as float64 0/1 values."""
        return (self.sdf(points) <= 0.0).astype(np.float64)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lows, highs = zip(*(part.bounds() for part in self.parts), strict=True)
        return np.min(lows, axis=0), np.max(highs, axis=0)

    def validate(self, margin: float = SHAPE_MARGIN) -> SdfShape:
        """Check the shape is non-degenerate and fits the unit cube with ``margin``.

        Raises:
            DegenerateShapeError: otherwise.
        """
        for part in self.parts:
            if not part.area() > 0.0 or part.pose.scale <= 0.0:
                raise DegenerateShapeError(f"degenerate primitive {part.primitive}")
            if isinstance(part.primitive, Torus) and not (
                0.0 < part.primitive.minor < part.primitive.major
            ):
                raise DegenerateShapeError("torus needs 0 < minor < major")
        low, high = self.bounds()
        limit = UNIT_CUBE_HALF - margin
        if np.any(low < -limit - 1e-12) or np.any(high > limit + 1e-12):
            raise DegenerateShapeError(
                f"shape bounds {low.round(4).tolist()}..{high.round(4).tolist()} "
                f"exceed the unit cube with margin {margin}"
            )
        return self

    # --- Serialization -----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "parts": [
                {
                    "kind": part.primitive.kind,
                    **part.primitive.params(),
                    "center": list(part.pose.center),
                    "scale": part.pose.scale,
                }
                for part in self.parts
            ]
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SdfShape:
        try:
            parts = []
            for item in data["parts"]:
                kind = item["kind"]
                if kind == KIND_SPHERE:
                    primitive: Primitive = Sphere(float(item["radius"]))
                elif kind == KIND_BOX:
                    primitive = Box(tuple(float(v) for v in item["half_size"]))
                elif kind == KIND_TORUS:
                    primitive = Torus(
                        float(item["major"]), float(item["minor"]), int(item.get("axis", 2))
                    )
                else:
                    raise DataFormatError(f"unknown primitive kind {kind!r}")
                pose = Pose(tuple(float(v) for v in item["center"]), float(item["scale"]))
                parts.append(Part(primitive, pose))
        except (KeyError, TypeError, ValueError) as err:
            raise DataFormatError(f"malformed shape description: {err}") from err
        return cls(tuple(parts))


def sphere(radius: float, center=(0.0, 0.0, 0.0)) -> SdfShape:
    return SdfShape((Part(Sphere(radius), Pose(tuple(center))),))


def box(half_size, center=(0.0, 0.0, 0.0)) -> SdfShape:
    return SdfShape((Part(Box(tuple(half_size)), Pose(tuple(center))),))


def torus(major: float, minor: float, axis: int = 2, center=(0.0, 0.0, 0.0)) -> SdfShape:
    return SdfShape((Part(Torus(major, minor, axis), Pose(tuple(center))),))


def union(*shapes: SdfShape) -> SdfShape:
    return SdfShape(tuple(part for shape in shapes for part in shape.parts))
