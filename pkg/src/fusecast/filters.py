"""Per-frame point reduction: crop, voxel downsample, outlier removal, budget.

The chain runs after fusion in this fixed order: axis-aligned crop,
voxel-grid downsampling, statistical outlier removal, then a hard point
budget. Every stage is deterministic; two runs over the same cloud
produce bitwise-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import PointCloud


@dataclass(frozen=True)
class Aabb:
    """Closed axis-aligned box, used to crop to the workspace."""

    min: tuple[float, float, float]
    max: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "min", tuple(float(v) for v in self.min))
        object.__setattr__(self, "max", tuple(float(v) for v in self.max))
        if any(lo > hi for lo, hi in zip(self.min, self.max)):
            raise ValueError(f"box min {self.min} exceeds max {self.max}")


@dataclass(frozen=True)
class FilterParams:
    """Reduction-chain parameters; defaults follow common practice."""

    voxel_leaf: float = 0.003  # meters
    sor_k: int = 20
    sor_std_ratio: float = 2.0
    point_budget: int = 75_000

    def __post_init__(self):
        if self.voxel_leaf <= 0:
            raise ValueError(f"voxel_leaf must be positive, got {self.voxel_leaf}")
        if self.sor_k < 1:
            raise ValueError(f"sor_k must be >= 1, got {self.sor_k}")
        if self.sor_std_ratio <= 0:
            raise ValueError(f"sor_std_ratio must be positive, got {self.sor_std_ratio}")
        if self.point_budget < 1:
            raise ValueError(f"point_budget must be >= 1, got {self.point_budget}")


def crop_aabb(cloud: PointCloud, box: Aabb) -> PointCloud:
    """Keep exactly the points inside the closed box, order preserved."""
    p = cloud.positions
    lo = np.asarray(box.min)
    hi = np.asarray(box.max)
    keep = np.all((p >= lo) & (p <= hi), axis=1)
    return cloud.select(keep)


def voxel_downsample(cloud: PointCloud, leaf: float) -> PointCloud:
    """One point per occupied voxel: member centroid, rounded mean color.

    Voxels are ``floor(p / leaf)`` per axis (mathematical floor, so
    negative coordinates bin correctly). Output order is the first
    occurrence of each voxel in the input.
    """
    if leaf <= 0:
        raise ValueError(f"leaf must be positive, got {leaf}")
    cloud_out, _ = voxel_downsample_with_map(cloud, leaf)
    return cloud_out


def voxel_downsample_with_map(cloud: PointCloud, leaf: float) -> tuple[PointCloud, np.ndarray]:
    """Voxel downsample plus the input-point-to-output-row mapping.

    The mapping lets callers carry per-point labels through the
    reduction (the synthetic-noise tests use it to track injected
    outliers).
    """
    centroids, colors, inverse = kernels.voxel_bin(cloud.positions, cloud.colors, leaf)
    return PointCloud(centroids, colors, cloud.frame_id, cloud.timestamp_us), inverse


def sor_filter(cloud: PointCloud, k: int, std_ratio: float) -> PointCloud:
    """Drop points whose mean k-nearest-neighbor distance is anomalous.

    A point is kept iff its mean distance to its k nearest neighbors
    (itself excluded) is at most mu + std_ratio * sigma, where mu and
    sigma are the mean and population standard deviation of those
    per-point means. Clouds of k or fewer points pass through unchanged.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if std_ratio <= 0:
        raise ValueError(f"std_ratio must be positive, got {std_ratio}")
    if len(cloud) <= k:
        return cloud
    means = kernels.mean_knn_distance(cloud.positions, k)
    threshold = float(np.mean(means)) + std_ratio * float(np.std(means))
    return cloud.select(means <= threshold)


def enforce_budget(cloud: PointCloud, budget: int) -> PointCloud:
    """Cap the cloud at `budget` points by deterministic stride sampling.

    Keeps indices ``floor(i * n / budget)`` for i in 0..budget-1, which
    are strictly increasing when n > budget; under-budget clouds pass
    through unchanged.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    n = len(cloud)
    if n <= budget:
        return cloud
    idx = (np.arange(budget, dtype=np.int64) * n) // budget
    return cloud.select(idx)


class PointIndex:
    """Exact nearest-neighbor index over a fixed cloud.

    Queries return ids ordered by (distance, id): distance ties go to
    the lower point id. The index is immutable once built, so concurrent
    queries are safe.
    """

    def __init__(self, positions: np.ndarray):
        positions = np.ascontiguousarray(positions, dtype=np.float32).reshape(-1, 3)
        if len(positions) == 0:
            raise ValueError("cannot index an empty cloud")
        self.positions = positions

    def __len__(self) -> int:
        return len(self.positions)

    def query(self, point, k: int, exclude_id: int | None = None) -> np.ndarray:
        """Ids of the k nearest points to `point`, optionally skipping one."""
        queries = np.asarray(point, dtype=np.float32).reshape(1, 3)
        exclude = None if exclude_id is None else np.array([exclude_id], dtype=np.int64)
        return kernels.knn(self.positions, queries, k, exclude)[0]

    def query_batch(self, points, k: int, exclude_ids=None) -> np.ndarray:
        """Vectorized :meth:`query` over (m, 3) query points."""
        queries = np.ascontiguousarray(points, dtype=np.float32).reshape(-1, 3)
        exclude = None if exclude_ids is None else np.asarray(exclude_ids, dtype=np.int64)
        return kernels.knn(self.positions, queries, k, exclude)
