"""Vectorized numpy implementations of the per-frame hot kernels.

This is the portable fallback backend. ``fusecast.kernels._native``
implements the same four entry points in Cython; ``fusecast.kernels``
picks one at import time. The two backends must stay bitwise
interchangeable, so every operation here is performed in float64 with a
fixed accumulation order that the compiled loops reproduce exactly:

* back-projection evaluates ``(u - cx) * z / fx`` per pixel in float64
  and rounds to float32 once,
* voxel centroids accumulate per-cell sums in input order (np.bincount
  walks the input sequentially) and divide once,
* mean kNN distances sum the k sorted neighbor distances in ascending
  order, one column at a time.

Changing any of these orders breaks backend parity tests.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

# floor(p / leaf) cell coordinates beyond this are rejected rather than
# risk int64 overflow when packing three axes into one key.
MAX_CELL_COORD = 2**40


def backproject(depth, color, mask, keep, fx, fy, cx, cy, depth_scale):
    """Lift kept pixels with valid depth into camera-frame 3D points.

    Returns (positions float32 (n,3), colors uint8 (n,3)) in row-major
    pixel scan order. `keep` is a 256-entry uint8 class lookup table.
    """
    h, w = depth.shape
    flat_depth = depth.reshape(-1)
    kept = keep.view(bool)[mask.reshape(-1)] & (flat_depth > 0)
    idx = np.flatnonzero(kept)
    z = flat_depth[idx].astype(np.float64) * depth_scale
    u = (idx % w).astype(np.float64)
    v = (idx // w).astype(np.float64)
    positions = np.empty((idx.size, 3), dtype=np.float32)
    positions[:, 0] = (u - cx) * z / fx
    positions[:, 1] = (v - cy) * z / fy
    positions[:, 2] = z
    colors = color.reshape(-1, 3)[idx].copy()
    return positions, colors


def voxel_bin(positions, colors, leaf):
    """Bin points into cubic cells of edge `leaf` and average each cell.

    Returns (centroids float32 (m,3), mean colors uint8 (m,3), inverse
    int64 (n,)) where inverse maps each input point to its output row.
    Output rows are ordered by first occurrence of each cell in the
    input. Mean colors are rounded half-up. Cells are found with a
    mathematical floor so negative coordinates bin correctly.
    """
    n = positions.shape[0]
    if n == 0:
        return (
            np.empty((0, 3), dtype=np.float32),
            np.empty((0, 3), dtype=np.uint8),
            np.empty(0, dtype=np.int64),
        )
    pos64 = positions.astype(np.float64)
    q = np.floor(pos64 / leaf)
    if np.any(np.abs(q) > MAX_CELL_COORD):
        raise ValueError(f"voxel leaf {leaf} is too small for the cloud extent")
    cells = q.astype(np.int64)
    offs = cells - cells.min(axis=0)
    dims = [int(d) + 1 for d in offs.max(axis=0)]
    if dims[0] * dims[1] * dims[2] >= 2**62:
        raise ValueError(f"voxel grid for leaf {leaf} exceeds the addressable key space")
    key = (offs[:, 0] * dims[1] + offs[:, 1]) * dims[2] + offs[:, 2]

    _, first_idx, inv = np.unique(key, return_index=True, return_inverse=True)
    m = first_idx.size
    order = np.argsort(first_idx)
    rank = np.empty(m, dtype=np.int64)
    rank[order] = np.arange(m, dtype=np.int64)
    inverse = rank[inv.reshape(-1)]

    counts = np.bincount(inverse, minlength=m)
    centroids = np.empty((m, 3), dtype=np.float32)
    color_sums = np.empty((m, 3), dtype=np.int64)
    for axis in range(3):
        centroids[:, axis] = np.bincount(inverse, weights=pos64[:, axis], minlength=m) / counts
        # uint8 sums stay far below 2**53, so float64 bincount is exact
        color_sums[:, axis] = np.bincount(
            inverse, weights=colors[:, axis].astype(np.float64), minlength=m
        ).astype(np.int64)
    mean_colors = ((2 * color_sums + counts[:, None]) // (2 * counts[:, None])).astype(np.uint8)
    return centroids, mean_colors, inverse


def mean_knn_distance(positions, k):
    """Mean Euclidean distance from each point to its k nearest others.

    Requires n > k. Distances are summed in ascending order so the
    result is reproducible across backends.
    """
    n = positions.shape[0]
    if n <= k:
        raise ValueError(f"need more than k={k} points, got {n}")
    pos64 = positions.astype(np.float64)
    tree = cKDTree(pos64)
    dists, _ = tree.query(pos64, k=k + 1, workers=-1)
    # column 0 is one zero self-distance; with duplicate points any of the
    # tied zeros may land there, which leaves the remaining k unchanged
    acc = dists[:, 1].copy()
    for j in range(2, k + 1):
        acc += dists[:, j]
    return acc / k


def knn(positions, queries, k, exclude=None):
    """Exact k nearest neighbor ids for each query point.

    Ties at equal distance are broken by lower point id; each output row
    is sorted by (distance, id). `exclude` optionally gives one point id
    per query to leave out (for self-exclusion semantics).
    """
    n = positions.shape[0]
    nq = queries.shape[0]
    need = k + (1 if exclude is not None else 0)
    if k < 1:
        raise ValueError("k must be >= 1")
    if need > n:
        raise ValueError(f"k={k} too large for {n} indexed points")
    pos64 = positions.astype(np.float64)
    q64 = queries.astype(np.float64)
    tree = cKDTree(pos64)
    kq = min(n, need + 1)
    dists, ids = tree.query(q64, k=kq, workers=-1)
    if kq == 1:
        dists = dists.reshape(nq, 1)
        ids = ids.reshape(nq, 1)
    if kq < n:
        # a tie spanning the query horizon means the true winners may lie
        # beyond the kq candidates; those rows fall back to a full scan
        safe = dists[:, kq - 1] > dists[:, need - 1]
    else:
        safe = np.ones(nq, dtype=bool)

    out = np.empty((nq, k), dtype=np.int64)
    all_ids = np.arange(n, dtype=np.int64)
    for r in range(nq):
        if safe[r]:
            cand_d = dists[r]
            cand_i = ids[r].astype(np.int64)
        else:
            diff = pos64 - q64[r]
            cand_d = np.sqrt(diff[:, 0] ** 2 + diff[:, 1] ** 2 + diff[:, 2] ** 2)
            cand_i = all_ids
        if exclude is not None:
            mask = cand_i != exclude[r]
            cand_d = cand_d[mask]
            cand_i = cand_i[mask]
        sel = np.lexsort((cand_i, cand_d))[:k]
        out[r] = cand_i[sel]
    return out
