"""Triangle meshes: container, OBJ files and trimesh interop."""

from __future__ import annotations

from dataclasses import dataclass
import logging
from pathlib import Path

import numpy as np
import trimesh

from ..errors import DataFormatError, ShapeMismatchError

_LOGGER = logging.getLogger(__name__)


@dataclass
class TriangleMesh:
    """``V x 3`` float64 vertices and ``F x 3`` vertex indices."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self) -> None:
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ShapeMismatchError(
                f"face indices must lie in [0, {len(self.vertices)}), got "
                f"[{self.faces.min()}, {self.faces.max()}]"
            )

    @classmethod
    def empty(cls) -> TriangleMesh:
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def to_trimesh(self) -> trimesh.Trimesh:
        return trimesh.Trimesh(vertices=self.vertices, faces=self.faces, process=False)

    def face_normals(self) -> np.ndarray:
        """Unit normals following the face winding."""
        return self.to_trimesh().face_normals

    def area(self) -> float:
        return float(self.to_trimesh().area) if not self.is_empty else 0.0

    def compact(self) -> TriangleMesh:
        """Drop vertices no face references, keeping the remaining order."""
        used = np.zeros(len(self.vertices), dtype=bool)
        used[self.faces.reshape(-1)] = True
        if used.all():
            return self
        remap = np.cumsum(used) - 1
        return TriangleMesh(self.vertices[used], remap[self.faces])

    def translated(self, offset) -> TriangleMesh:
        return TriangleMesh(self.vertices + np.asarray(offset, dtype=np.float64), self.faces.copy())

    def edge_use_counts(self) -> np.ndarray:
        """How many faces share each distinct undirected edge."""
        edges = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return counts

    def is_watertight(self) -> bool:
        """Every edge is shared by exactly two faces."""
        return not self.is_empty and bool(np.all(self.edge_use_counts() == 2))


def format_obj(mesh: TriangleMesh) -> str:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}\n" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}\n" for a, b, c in mesh.faces]
    return "".join(lines)


def parse_obj(text: str, source: str = "<obj>") -> TriangleMesh:
    """Read ``v`` and ``f`` records; faces with more than three corners are fanned."""
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        try:
            if fields[0] == "v":
                vertices.append([float(value) for value in fields[1:4]])
            elif fields[0] == "f":
                corners = [int(item.split("/")[0]) - 1 for item in fields[1:]]
                if len(corners) < 3:
                    raise DataFormatError(f"{source}:{lineno}: face with fewer than 3 corners")
                faces.extend([corners[0], corners[i], corners[i + 1]] for i in range(1, len(corners) - 1))
        except ValueError as err:
            raise DataFormatError(f"{source}:{lineno}: {err}") from err
    if any(len(vertex) != 3 for vertex in vertices):
        raise DataFormatError(f"{source}: vertex records need three coordinates")
    try:
        return TriangleMesh(np.asarray(vertices, dtype=np.float64), np.asarray(faces, dtype=np.int64))
    except ShapeMismatchError as err:
        raise DataFormatError(f"{source}: {err}") from err


def write_obj(path: Path | str, mesh: TriangleMesh) -> None:
    Path(path).write_text(format_obj(mesh), encoding="utf-8")


def read_obj(path: Path | str) -> TriangleMesh:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as err:
        raise DataFormatError(f"cannot read mesh {path}: {err}") from err
    return parse_obj(text, str(path))
