"""The brute-force oracles on cases with closed-form answers.

The oracles are trusted references elsewhere, so they get their own
sanity checks against constructions where the answer is obvious.
"""

import numpy as np

from fusecast.geometry import PointCloud
from fusecast.oracles import oracle_knn, oracle_sor, oracle_voxel


def test_voxel_oracle_singleton_identity():
    cloud = PointCloud(
        np.array([[0.11, -0.22, 0.33]], np.float32), np.array([[9, 8, 7]], np.uint8)
    )
    out = oracle_voxel(cloud, 0.05)
    np.testing.assert_array_equal(out.positions, cloud.positions)
    np.testing.assert_array_equal(out.colors, cloud.colors)


def test_voxel_oracle_two_point_cell():
    cloud = PointCloud(
        np.array([[0.01, 0.01, 0.01], [0.03, 0.03, 0.03]], np.float32),
        np.array([[100, 0, 0], [200, 0, 0]], np.uint8),
    )
    out = oracle_voxel(cloud, 0.05)
    assert len(out) == 1
    np.testing.assert_allclose(out.positions[0], [0.02, 0.02, 0.02], atol=1e-7)
    np.testing.assert_array_equal(out.colors[0], [150, 0, 0])


def test_sor_oracle_removes_grid_outlier():
    axes = [np.arange(10) * 0.01] * 3
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    pts = np.concatenate([grid, [[1.0, 1.0, 1.0]]]).astype(np.float32)
    cloud = PointCloud(pts, np.zeros((len(pts), 3), np.uint8))
    out = oracle_sor(cloud, 8, 2.0)
    assert len(out) == len(cloud) - 1
    assert not np.any(np.all(out.positions == [1.0, 1.0, 1.0], axis=1))


def test_knn_oracle_analytic_line():
    pts = np.array([[0, 0, 0], [1, 0, 0], [3, 0, 0], [7, 0, 0]], np.float32)
    np.testing.assert_array_equal(oracle_knn(pts, [1.2, 0, 0], 2), [1, 0])
    # distance tie between ids 0 and 2 from x=1.5: lower id wins
    np.testing.assert_array_equal(oracle_knn(pts, [1.5, 0, 0], 2), [1, 0])
    np.testing.assert_array_equal(oracle_knn(pts, [3, 0, 0], 1, exclude_id=2), [1])
