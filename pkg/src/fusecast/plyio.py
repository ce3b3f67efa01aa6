"""Binary little-endian PLY snapshots of point clouds.

One vertex element with float32 x/y/z and uchar red/green/blue, the
lowest common denominator every point-cloud tool reads. The 15-byte
packed vertex record matches the wire format's point record, so a
snapshot is byte-for-byte the payload a receiver saw.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import PointCloud
from .protocol import POINT_DTYPE


def ply_header(count: int) -> bytes:
    lines = [
        "ply",
        "format binary_little_endian 1.0",
        f"element vertex {count}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    return ("\n".join(lines) + "\n").encode("ascii")


def write_ply(path, cloud: PointCloud):
    records = np.empty(len(cloud), dtype=POINT_DTYPE)
    records["x"] = cloud.positions[:, 0]
    records["y"] = cloud.positions[:, 1]
    records["z"] = cloud.positions[:, 2]
    records["r"] = cloud.colors[:, 0]
    records["g"] = cloud.colors[:, 1]
    records["b"] = cloud.colors[:, 2]
    Path(path).write_bytes(ply_header(len(cloud)) + records.tobytes())
