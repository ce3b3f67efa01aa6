"""Brute-force baselines the optimized filters must match exactly.

These deliberately share no code with the fast paths: the voxel oracle
is a plain Python dict walk, and the SOR/kNN oracles scan all pairwise
distances. They are O(n^2) or worse and intended for clouds up to
roughly 10k points.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import PointCloud


def oracle_voxel(cloud: PointCloud, leaf: float) -> PointCloud:
    """Hash-map voxel downsample: centroid plus rounded mean color."""
    groups: dict[tuple[int, int, int], list[int]] = {}
    pos = cloud.positions
    for i in range(len(cloud)):
        key = (
            math.floor(float(pos[i, 0]) / leaf),
            math.floor(float(pos[i, 1]) / leaf),
            math.floor(float(pos[i, 2]) / leaf),
        )
        groups.setdefault(key, []).append(i)

    centroids = np.empty((len(groups), 3), dtype=np.float32)
    colors = np.empty((len(groups), 3), dtype=np.uint8)
    for row, members in enumerate(groups.values()):
        count = len(members)
        for axis in range(3):
            total = 0.0
            for i in members:
                total += float(pos[i, axis])
            centroids[row, axis] = np.float32(total / count)
            csum = sum(int(cloud.colors[i, axis]) for i in members)
            colors[row, axis] = (2 * csum + count) // (2 * count)
    return PointCloud(centroids, colors, cloud.frame_id, cloud.timestamp_us)


def _distance_matrix(a: np.ndarray, b: np.ndarray, chunk: int = 256) -> np.ndarray:
    """All-pairs Euclidean distances, row-chunked to bound memory."""
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    out = np.empty((len(a64), len(b64)), dtype=np.float64)
    for start in range(0, len(a64), chunk):
        stop = min(start + chunk, len(a64))
        dx = a64[start:stop, 0][:, None] - b64[None, :, 0]
        dy = a64[start:stop, 1][:, None] - b64[None, :, 1]
        dz = a64[start:stop, 2][:, None] - b64[None, :, 2]
        out[start:stop] = np.sqrt(dx * dx + dy * dy + dz * dz)
    return out


def oracle_sor_mask(cloud: PointCloud, k: int, std_ratio: float) -> np.ndarray:
    """Boolean keep-mask of the all-pairs statistical outlier filter."""
    n = len(cloud)
    if n <= k:
        return np.ones(n, dtype=bool)
    dists = _distance_matrix(cloud.positions, cloud.positions)
    means = np.empty(n, dtype=np.float64)
    for i in range(n):
        row = np.sort(dists[i])
        # row[0] is one zero self-distance; sum the next k ascending
        acc = row[1]
        for j in range(2, k + 1):
            acc += row[j]
        means[i] = acc / k
    threshold = float(np.mean(means)) + std_ratio * float(np.std(means))
    return means <= threshold


def oracle_sor(cloud: PointCloud, k: int, std_ratio: float) -> PointCloud:
    return cloud.select(oracle_sor_mask(cloud, k, std_ratio))


def oracle_knn(positions: np.ndarray, query, k: int, exclude_id: int | None = None) -> np.ndarray:
    """Linear-scan k nearest ids, distance ties broken by lower id."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    q = np.asarray(query, dtype=np.float64).reshape(3)
    dx = pos[:, 0] - q[0]
    dy = pos[:, 1] - q[1]
    dz = pos[:, 2] - q[2]
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
    ids = np.arange(len(pos), dtype=np.int64)
    if exclude_id is not None:
        keep = ids != exclude_id
        dist = dist[keep]
        ids = ids[keep]
    order = np.lexsort((ids, dist))
    return ids[order[:k]]
