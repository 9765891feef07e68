"""Point-cloud container and its text / binary file codecs.

Text format: UTF-8, one point per line, whitespace-separated reals
``x y z [f1 ... fd]``.

Binary format: a 12-byte header of little-endian u32 ``(magic, N, d0)``
followed by ``N`` rows of ``3 + d0`` little-endian f32 values.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
import struct

import numpy as np

from ..const import POINTCLOUD_MAGIC
from ..errors import DataFormatError, ShapeMismatchError

_HEADER = struct.Struct("<III")
_ROW_DTYPE = np.dtype("<f4")


@dataclass
class PointCloud:
    """``N x 3`` coordinates with optional ``N x d0`` per-point features."""

    points: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or len(self.points) < 1:
            raise ShapeMismatchError(f"point cloud needs N >= 1 rows of 3, got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise DataFormatError("point cloud coordinates must be finite")
        if self.features is not None:
            self.features = np.asarray(self.features)
            if self.features.ndim != 2 or len(self.features) != len(self.points):
                raise ShapeMismatchError(
                    f"{len(self.points)} points but features of shape {self.features.shape}"
                )

    def __len__(self) -> int:
        return len(self.points)

    @property
    def feature_dim(self) -> int:
        return 0 if self.features is None else self.features.shape[1]

    def rows(self) -> np.ndarray:
        if self.features is None:
            return self.points
        return np.concatenate([self.points, self.features], axis=1)


def _from_rows(rows: np.ndarray, source: str) -> PointCloud:
    if rows.ndim != 2 or rows.shape[1] < 3:
        raise DataFormatError(f"{source}: expected rows of at least 3 values")
    features = rows[:, 3:] if rows.shape[1] > 3 else None
    return PointCloud(rows[:, :3], features)


def format_xyz(cloud: PointCloud) -> str:
    return "".join(" ".join(f"{value:.9g}" for value in row) + "\n" for row in cloud.rows())


def parse_xyz(text: str, source: str = "<text>") -> PointCloud:
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise DataFormatError(
                f"{source}:{lineno}: expected {width} values, got {len(fields)}"
            )
        try:
            rows.append([float(value) for value in fields])
        except ValueError as err:
            raise DataFormatError(f"{source}:{lineno}: {err}") from err
    if not rows:
        raise DataFormatError(f"{source}: no points")
    return _from_rows(np.asarray(rows, dtype=np.float64), source)


def encode_binary(cloud: PointCloud) -> bytes:
    header = _HEADER.pack(POINTCLOUD_MAGIC, len(cloud), cloud.feature_dim)
    return header + np.ascontiguousarray(cloud.rows(), dtype=_ROW_DTYPE).tobytes()


def decode_binary(blob: bytes, source: str = "<bytes>") -> PointCloud:
    if len(blob) < _HEADER.size:
        raise DataFormatError(f"{source}: truncated header")
    magic, count, feature_dim = _HEADER.unpack_from(blob)
    if magic != POINTCLOUD_MAGIC:
        raise DataFormatError(f"{source}: bad magic 0x{magic:08x}")
    width = 3 + feature_dim
    expected = _HEADER.size + count * width * _ROW_DTYPE.itemsize
    if len(blob) != expected:
        raise DataFormatError(f"{source}: expected {expected} bytes, got {len(blob)}")
    rows = np.frombuffer(blob, dtype=_ROW_DTYPE, offset=_HEADER.size).reshape(count, width)
    return _from_rows(rows.astype(np.float32), source)


def write_point_cloud(path: Path | str, cloud: PointCloud) -> None:
    """Write ``cloud``; ``.bin`` selects the binary format, anything else text."""
    path = Path(path)
    if path.suffix == ".bin":
        path.write_bytes(encode_binary(cloud))
    else:
        path.write_text(format_xyz(cloud), encoding="utf-8")


def read_point_cloud(path: Path | str) -> PointCloud:
    """Read a point cloud, detecting the binary format by its magic number."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as err:
        raise DataFormatError(f"cannot read point cloud {path}: {err}") from err
    if len(blob) >= 4 and struct.unpack_from("<I", blob)[0] == POINTCLOUD_MAGIC:
        return decode_binary(blob, str(path))
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError as err:
        raise DataFormatError(f"{path}: not UTF-8 text nor a binary point cloud") from err
    return parse_xyz(text, str(path))
