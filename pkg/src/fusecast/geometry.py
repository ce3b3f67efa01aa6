"""Pinhole camera model, depth back-projection, and rigid transforms.

All clouds produced here are columnar: float32 positions in meters and
uint8 RGB colors, one row per point. Per-camera clouds live in the
camera frame until :func:`transform` moves them into the robot base
frame using the camera's extrinsic transform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

ORTHONORMAL_TOL = 1e-6


class FrameMismatchError(ValueError):
    """Frame image dimensions disagree with the camera intrinsics."""


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole parameters mapping camera-frame rays to pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_scale: float = 0.001  # meters per raw depth unit

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )
        if self.depth_scale <= 0:
            raise ValueError(f"depth_scale must be positive, got {self.depth_scale}")


@dataclass(eq=False)
class RigidTransform:
    """Rotation plus translation; maps points between frames."""

    rotation: np.ndarray  # (3, 3) float64, orthonormal
    translation: np.ndarray  # (3,) float64, meters

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > ORTHONORMAL_TOL:
            raise ValueError(f"rotation is not orthonormal (max |R'R - I| = {err:.2e})")
        if np.linalg.det(self.rotation) < 0:
            raise ValueError("rotation must be proper (det = +1)")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> "RigidTransform":
        rot = self.rotation.T
        return RigidTransform(rot, -(rot @ self.translation))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equivalent to applying `other` first, then self."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Rotate and translate float32 points; returns float32.

        Written as explicit per-axis expressions so the float64 operation
        order is fixed (matrix kernels may reassociate sums).
        """
        p = points.astype(np.float64)
        r = self.rotation
        t = self.translation
        out = np.empty_like(points, dtype=np.float32)
        out[:, 0] = p[:, 0] * r[0, 0] + p[:, 1] * r[0, 1] + p[:, 2] * r[0, 2] + t[0]
        out[:, 1] = p[:, 0] * r[1, 0] + p[:, 1] * r[1, 1] + p[:, 2] * r[1, 2] + t[1]
        out[:, 2] = p[:, 0] * r[2, 0] + p[:, 1] * r[2, 1] + p[:, 2] * r[2, 2] + t[2]
        return out


@dataclass(eq=False)
class RgbdFrame:
    """One camera's synchronized depth, color, and semantic mask images."""

    camera_id: int
    frame_id: int
    timestamp_us: int
    depth: np.ndarray  # (h, w) uint16 raw units, 0 = invalid
    color: np.ndarray  # (h, w, 3) uint8
    mask: np.ndarray  # (h, w) uint8 class ids

    def __post_init__(self):
        self.depth = np.ascontiguousarray(self.depth, dtype=np.uint16)
        self.color = np.ascontiguousarray(self.color, dtype=np.uint8)
        self.mask = np.ascontiguousarray(self.mask, dtype=np.uint8)
        if self.depth.ndim != 2:
            raise ValueError(f"depth must be a 2D image, got shape {self.depth.shape}")
        shape = self.depth.shape
        if self.color.shape != shape + (3,) or self.mask.shape != shape:
            raise ValueError(
                f"image shapes disagree: depth {self.depth.shape}, "
                f"color {self.color.shape}, mask {self.mask.shape}"
            )

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass(eq=False)
class PointCloud:
    """Columnar point cloud: positions in meters plus RGB colors."""

    positions: np.ndarray  # (n, 3) float32
    colors: np.ndarray  # (n, 3) uint8
    frame_id: int = 0
    timestamp_us: int = 0

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float32).reshape(-1, 3)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if len(self.positions) != len(self.colors):
            raise ValueError(
                f"positions ({len(self.positions)}) and colors ({len(self.colors)}) differ in length"
            )

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def empty(cls, frame_id: int = 0, timestamp_us: int = 0) -> "PointCloud":
        return cls(
            np.empty((0, 3), dtype=np.float32),
            np.empty((0, 3), dtype=np.uint8),
            frame_id,
            timestamp_us,
        )

    def select(self, index) -> "PointCloud":
        """New cloud containing the rows picked by a mask or index array."""
        return PointCloud(
            self.positions[index], self.colors[index], self.frame_id, self.timestamp_us
        )

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.positions).all())


def keep_table(keep_classes) -> np.ndarray:
    """256-entry uint8 lookup marking mask class ids that produce points."""
    classes = sorted(set(int(c) for c in keep_classes))
    if not classes:
        raise ValueError("keep_classes must not be empty")
    if classes[0] < 0 or classes[-1] > 255:
        raise ValueError(f"class ids must fit a byte, got {classes}")
    table = np.zeros(256, dtype=np.uint8)
    table[classes] = 1
    return table


def back_project(frame: RgbdFrame, intrinsics: Intrinsics, keep_classes) -> PointCloud:
    """Lift a frame's kept pixels into a camera-frame point cloud.

    A pixel produces a point iff its mask class is in `keep_classes` and
    its raw depth is nonzero; the point is
    ``((u - cx) * z / fx, (v - cy) * z / fy, z)`` with
    ``z = depth * depth_scale``, colored from the same pixel. Output
    order is the row-major pixel scan, so results are deterministic.
    """
    if (frame.height, frame.width) != (intrinsics.height, intrinsics.width):
        raise FrameMismatchError(
            f"camera {frame.camera_id} frame {frame.frame_id}: image is "
            f"{frame.width}x{frame.height} but intrinsics expect "
            f"{intrinsics.width}x{intrinsics.height}"
        )
    positions, colors = kernels.backproject(
        frame.depth,
        frame.color,
        frame.mask,
        keep_table(keep_classes),
        intrinsics.fx,
        intrinsics.fy,
        intrinsics.cx,
        intrinsics.cy,
        intrinsics.depth_scale,
    )
    return PointCloud(positions, colors, frame.frame_id, frame.timestamp_us)


def transform(cloud: PointCloud, t: RigidTransform) -> PointCloud:
    """Apply a rigid transform to every position; colors are untouched."""
    return PointCloud(
        t.apply(cloud.positions), cloud.colors.copy(), cloud.frame_id, cloud.timestamp_us
    )


def merge(clouds) -> PointCloud:
    """Concatenate clouds (caller supplies them in camera id order).

    Provenance takes the maximum frame id and timestamp of the inputs; an
    empty input list yields an empty cloud.
    """
    clouds = list(clouds)
    if not clouds:
        return PointCloud.empty()
    return PointCloud(
        np.concatenate([c.positions for c in clouds]),
        np.concatenate([c.colors for c in clouds]),
        max(c.frame_id for c in clouds),
        max(c.timestamp_us for c in clouds),
    )


def rotation_to_quat_wxyz(rotation: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a proper rotation matrix."""
    r = np.asarray(rotation, dtype=np.float64)
    trace = np.trace(r)
    if trace > 0:
        s = np.sqrt(trace + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array(
            [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        )
    elif r[1, 1] > r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = np.array(
            [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = np.array(
            [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        )
    return q / np.linalg.norm(q)


def quat_wxyz_to_rotation(quat: np.ndarray) -> np.ndarray:
    """Rotation matrix for a (w, x, y, z) quaternion (normalized first)."""
    w, x, y, z = np.asarray(quat, dtype=np.float64)
    norm = np.sqrt(w * w + x * x + y * y + z * z)
    if norm == 0:
        raise ValueError("zero quaternion has no rotation")
    w, x, y, z = w / norm, x / norm, y / norm, z / norm
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
