"""Bit-exact binary wire format for point-cloud and wrist-RGB packets.

Every message is a 28-byte little-endian header followed by one payload:

    header:  magic 4s | version u16 | msg_type u16 | frame_id u64 |
             timestamp_us u64 | payload_len u32

    point cloud (msg_type 1):
        point_count u32, then point_count records of
        x f32 | y f32 | z f32 | r u8 | g u8 | b u8   (15 bytes, packed)

    wrist RGB (msg_type 2):
        width u16 | height u16 | pose 7 x f32 (position xyz + unit
        quaternion wxyz) | width*height*3 raw RGB bytes, row-major

The decoder is total: any byte sequence either decodes or raises
:class:`WireDecodeError` with a specific :class:`DecodeErrorKind`; it
never reads past the buffer. See WIRE_FORMAT.md for golden vectors.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud

MAGIC = b"FCST"
VERSION = 1
MSG_POINT_CLOUD = 1
MSG_WRIST_RGB = 2

HEADER = struct.Struct("<4sHHQQI")
HEADER_SIZE = HEADER.size  # 28

POINT_DTYPE = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("r", "u1"), ("g", "u1"), ("b", "u1")]
)
POINT_SIZE = POINT_DTYPE.itemsize  # 15, no padding

WRIST_FIXED = struct.Struct("<HH7f")  # width, height, pose
QUAT_NORM_TOL = 1e-4


class DecodeErrorKind(enum.Enum):
    BAD_MAGIC = "bad magic"
    BAD_VERSION = "unsupported version"
    BAD_MSG_TYPE = "unknown message type"
    TRUNCATED = "buffer shorter than declared length"
    LENGTH_MISMATCH = "buffer longer than declared length"
    BAD_POINT_COUNT = "payload length does not match point count"
    NON_FINITE = "non-finite point coordinates"
    BAD_IMAGE_SIZE = "payload length does not match image size"
    BAD_QUATERNION = "pose quaternion is not unit length"


class WireDecodeError(ValueError):
    """Classified decode rejection; `kind` says what was wrong."""

    def __init__(self, kind: DecodeErrorKind, detail: str = ""):
        self.kind = kind
        super().__init__(f"{kind.value}{': ' + detail if detail else ''}")


class WireEncodeError(ValueError):
    """Refused to encode an invalid message."""


@dataclass(eq=False)
class WristRgbMessage:
    """Wrist-camera RGB image plus the end-effector pose in base frame."""

    frame_id: int
    timestamp_us: int
    width: int
    height: int
    pose: np.ndarray  # (7,) float32: x, y, z, qw, qx, qy, qz
    pixels: np.ndarray  # (height, width, 3) uint8


def message_size(point_count: int) -> int:
    """Total encoded bytes for a point-cloud message of n points."""
    return HEADER_SIZE + 4 + POINT_SIZE * point_count


def _pack_header(msg_type: int, frame_id: int, timestamp_us: int, payload_len: int) -> bytes:
    return HEADER.pack(MAGIC, VERSION, msg_type, frame_id, timestamp_us, payload_len)


def encode_cloud(cloud: PointCloud) -> bytes:
    """Serialize a point cloud; refuses non-finite coordinates."""
    if not cloud.is_finite():
        raise WireEncodeError("cloud contains non-finite coordinates")
    n = len(cloud)
    records = np.empty(n, dtype=POINT_DTYPE)
    records["x"] = cloud.positions[:, 0]
    records["y"] = cloud.positions[:, 1]
    records["z"] = cloud.positions[:, 2]
    records["r"] = cloud.colors[:, 0]
    records["g"] = cloud.colors[:, 1]
    records["b"] = cloud.colors[:, 2]
    payload = struct.pack("<I", n) + records.tobytes()
    return _pack_header(MSG_POINT_CLOUD, cloud.frame_id, cloud.timestamp_us, len(payload)) + payload


def encode_wrist(frame, pose) -> bytes:
    """Serialize a wrist RGB frame with its 7-float pose.

    `frame` is an RgbdFrame (only color is sent); `pose` is
    (x, y, z, qw, qx, qy, qz) with a unit quaternion.
    """
    pose32 = np.asarray(pose, dtype=np.float32).reshape(7)
    norm = float(np.sqrt(np.sum(pose32[3:].astype(np.float64) ** 2)))
    if abs(norm - 1.0) > QUAT_NORM_TOL:
        raise WireEncodeError(f"quaternion norm {norm:.6f} is not 1 within {QUAT_NORM_TOL}")
    h, w = frame.color.shape[:2]
    payload = WRIST_FIXED.pack(w, h, *pose32.tolist()) + frame.color.tobytes()
    return _pack_header(MSG_WRIST_RGB, frame.frame_id, frame.timestamp_us, len(payload)) + payload


def decode(buf: bytes):
    """Parse one message; returns PointCloud or WristRgbMessage.

    Total over arbitrary input: every rejection raises WireDecodeError
    with a distinct kind and no crash.
    """
    buf = bytes(buf)
    if len(buf) < HEADER_SIZE:
        if len(buf) >= 4 and buf[:4] != MAGIC:
            raise WireDecodeError(DecodeErrorKind.BAD_MAGIC)
        raise WireDecodeError(DecodeErrorKind.TRUNCATED, f"{len(buf)} bytes < header")
    magic, version, msg_type, frame_id, timestamp_us, payload_len = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise WireDecodeError(DecodeErrorKind.BAD_MAGIC)
    if version != VERSION:
        raise WireDecodeError(DecodeErrorKind.BAD_VERSION, f"version {version}")
    if msg_type not in (MSG_POINT_CLOUD, MSG_WRIST_RGB):
        raise WireDecodeError(DecodeErrorKind.BAD_MSG_TYPE, f"type {msg_type}")
    total = HEADER_SIZE + payload_len
    if len(buf) < total:
        raise WireDecodeError(DecodeErrorKind.TRUNCATED, f"{len(buf)} bytes < {total}")
    if len(buf) > total:
        raise WireDecodeError(DecodeErrorKind.LENGTH_MISMATCH, f"{len(buf)} bytes > {total}")
    payload = buf[HEADER_SIZE:total]
    if msg_type == MSG_POINT_CLOUD:
        return _decode_cloud_payload(payload, frame_id, timestamp_us)
    return _decode_wrist_payload(payload, frame_id, timestamp_us)


def _decode_cloud_payload(payload: bytes, frame_id: int, timestamp_us: int) -> PointCloud:
    if len(payload) < 4:
        raise WireDecodeError(DecodeErrorKind.BAD_POINT_COUNT, "missing count field")
    (count,) = struct.unpack_from("<I", payload)
    if len(payload) != 4 + POINT_SIZE * count:
        raise WireDecodeError(
            DecodeErrorKind.BAD_POINT_COUNT, f"count {count} vs payload {len(payload)}"
        )
    records = np.frombuffer(payload, dtype=POINT_DTYPE, count=count, offset=4)
    positions = np.empty((count, 3), dtype=np.float32)
    positions[:, 0] = records["x"]
    positions[:, 1] = records["y"]
    positions[:, 2] = records["z"]
    if not np.isfinite(positions).all():
        raise WireDecodeError(DecodeErrorKind.NON_FINITE)
    colors = np.empty((count, 3), dtype=np.uint8)
    colors[:, 0] = records["r"]
    colors[:, 1] = records["g"]
    colors[:, 2] = records["b"]
    return PointCloud(positions, colors, frame_id, timestamp_us)


def _decode_wrist_payload(payload: bytes, frame_id: int, timestamp_us: int) -> WristRgbMessage:
    if len(payload) < WRIST_FIXED.size:
        raise WireDecodeError(DecodeErrorKind.BAD_IMAGE_SIZE, "missing fixed fields")
    fields = WRIST_FIXED.unpack_from(payload)
    width, height = fields[0], fields[1]
    pose = np.array(fields[2:], dtype=np.float32)
    expected = WRIST_FIXED.size + 3 * width * height
    if len(payload) != expected:
        raise WireDecodeError(
            DecodeErrorKind.BAD_IMAGE_SIZE, f"{width}x{height} needs {expected}, got {len(payload)}"
        )
    norm = float(np.sqrt(np.sum(pose[3:].astype(np.float64) ** 2)))
    if not np.isfinite(norm) or abs(norm - 1.0) > QUAT_NORM_TOL:
        raise WireDecodeError(DecodeErrorKind.BAD_QUATERNION, f"norm {norm}")
    if not np.isfinite(pose[:3]).all():
        raise WireDecodeError(DecodeErrorKind.NON_FINITE, "pose position")
    pixels = (
        np.frombuffer(payload, dtype=np.uint8, offset=WRIST_FIXED.size)
        .reshape(height, width, 3)
        .copy()
    )
    return WristRgbMessage(frame_id, timestamp_us, width, height, pose, pixels)
