"""Farthest point sampling and exact k-nearest-neighbor grouping.

Both are deterministic functions of the point coordinates: FPS seeds at the
point farthest from the centroid and breaks every tie by lexicographic
coordinate order (then by index), kNN breaks distance ties by the lower key
index. Reordering the input therefore reorders nothing but the indices.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatchError
from .pointcloud_io import PointCloud

# Queries per distance block in knn; bounds the (block, N) distance matrix.
_KNN_BLOCK = 1024


def _check_points(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ShapeMismatchError(f"expected an N x 3 coordinate array, got {points.shape}")
    return points


def _lexicographic_rank(points: np.ndarray) -> np.ndarray:
    order = np.lexsort((points[:, 2], points[:, 1], points[:, 0]))
    rank = np.empty(len(points), dtype=np.int64)
    rank[order] = np.arange(len(points))
    return rank


def _centroid(points: np.ndarray) -> np.ndarray:
    # Summing in lexicographic order makes the mean bit-identical under any
    # permutation of the rows.
    order = np.lexsort((points[:, 2], points[:, 1], points[:, 0]))
    return points[order].mean(axis=0)


def centroid_center(cloud: PointCloud | np.ndarray) -> PointCloud | np.ndarray:
    """Subtract the centroid from every point; features are kept as they are."""
    if isinstance(cloud, PointCloud):
        return PointCloud(centroid_center(cloud.points), cloud.features)
    points = _check_points(cloud)
    return points - _centroid(points)


def _argmax_with_rank(values: np.ndarray, rank: np.ndarray) -> int:
    candidates = np.flatnonzero(values == values.max())
    return int(candidates[np.argmin(rank[candidates])])


def fps(points: np.ndarray, count: int) -> np.ndarray:
    """Select ``count`` indices by farthest point sampling.

    Args:
        points: ``N x 3`` coordinates.
        count: number of points to keep, ``1 <= count <= N``.

    Returns:
        Selected indices in selection order.

    Raises:
        ShapeMismatchError: if ``count`` is out of range.
    """
    points = _check_points(points)
    n = len(points)
    if not 1 <= count <= n:
        raise ShapeMismatchError(f"fps: cannot select {count} of {n} points")

    rank = _lexicographic_rank(points)
    offsets = centroid_center(points)
    first = _argmax_with_rank(np.einsum("ij,ij->i", offsets, offsets), rank)

    selected = np.empty(count, dtype=np.int64)
    selected[0] = first
    diff = points - points[first]
    min_dist = np.einsum("ij,ij->i", diff, diff)
    min_dist[first] = -1.0
    for i in range(1, count):
        nxt = _argmax_with_rank(min_dist, rank)
        selected[i] = nxt
        diff = points - points[nxt]
        np.minimum(min_dist, np.einsum("ij,ij->i", diff, diff), out=min_dist)
        min_dist[selected[: i + 1]] = -1.0
    return selected


def knn(queries: np.ndarray, keys: np.ndarray, k: int) -> np.ndarray:
    """Exact ``k`` nearest keys per query, sorted by ascending distance.

    Raises:
        ShapeMismatchError: if ``k`` is not in ``[1, len(keys)]``.
    """
    queries = _check_points(queries)
    keys = _check_points(keys)
    if not 1 <= k <= len(keys):
        raise ShapeMismatchError(f"knn: k={k} with {len(keys)} keys")

    result = np.empty((len(queries), k), dtype=np.int64)
    for start in range(0, len(queries), _KNN_BLOCK):
        block = queries[start : start + _KNN_BLOCK]
        diff = block[:, None, :] - keys[None, :, :]
        dist = np.einsum("ijk,ijk->ij", diff, diff)
        # Stable sort keeps the lower key index first on equal distances.
        result[start : start + len(block)] = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return result


# --- Batched helpers -------------------------------------------------------


def as_batch(points: np.ndarray) -> np.ndarray:
    """View ``N x 3`` or ``B x N x 3`` coordinates as a ``B x N x 3`` batch."""
    points = np.asarray(points)
    if points.ndim == 2:
        points = points[None]
    if points.ndim != 3 or points.shape[2] != 3:
        raise ShapeMismatchError(f"expected (B, N, 3) coordinates, got {points.shape}")
    return points


def batched_fps(points: np.ndarray, count: int) -> np.ndarray:
    """FPS per shape of a ``B x N x 3`` batch; returns ``B x count`` local indices."""
    return np.stack([fps(shape_points, count) for shape_points in points])


def batched_knn(queries: np.ndarray, keys: np.ndarray, k: int) -> np.ndarray:
    """kNN per shape, returned as indices into the flattened ``(B * N)`` keys.

    Args:
        queries: ``B x M x 3``.
        keys: ``B x N x 3``.

    Returns:
        ``(B * M) x k`` global row indices.
    """
    if len(queries) != len(keys):
        raise ShapeMismatchError(
            f"batch sizes differ: {len(queries)} queries vs {len(keys)} keys"
        )
    n_keys = keys.shape[1]
    blocks = [
        knn(shape_queries, shape_keys, k) + b * n_keys
        for b, (shape_queries, shape_keys) in enumerate(zip(queries, keys, strict=True))
    ]
    return np.concatenate(blocks, axis=0) if blocks else np.empty((0, k), np.int64)
