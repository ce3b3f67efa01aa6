"""Recorded frameset archives: a manifest plus raw per-camera images.

Layout (all multi-byte values little-endian, images row-major):

    <root>/manifest.json
    <root>/frames/<frame_id:06d>/cam<camera_id:02d>_depth.u16le
    <root>/frames/<frame_id:06d>/cam<camera_id:02d>_color.rgb8
    <root>/frames/<frame_id:06d>/cam<camera_id:02d>_mask.u8

The manifest pins the rig (intrinsics and extrinsics), depth scale,
class table, and the frame list; file sizes must match the declared
resolutions exactly. See ARCHIVE_FORMAT.md for the byte-level contract.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import Intrinsics, RgbdFrame, RigidTransform
from .pipeline import CameraRig, FrameSet, RigCamera
from .scene import CLASS_TABLE

FORMAT_NAME = "fusecast-archive"
FORMAT_VERSION = 1


class ArchiveError(ValueError):
    """Archive file or manifest violates the format contract."""


def _frame_dir(root: Path, frame_id: int) -> Path:
    return root / "frames" / f"{frame_id:06d}"


def _image_paths(root: Path, frame_id: int, camera_id: int) -> dict[str, Path]:
    base = _frame_dir(root, frame_id)
    stem = f"cam{camera_id:02d}"
    return {
        "depth": base / f"{stem}_depth.u16le",
        "color": base / f"{stem}_color.rgb8",
        "mask": base / f"{stem}_mask.u8",
    }


class ArchiveWriter:
    """Streams framesets to disk; the manifest is written on close."""

    def __init__(self, root, rig: CameraRig, class_table: dict[int, str] | None = None):
        self.root = Path(root)
        self.rig = rig
        self.class_table = dict(class_table or CLASS_TABLE)
        self._frames: list[dict] = []
        scales = {c.intrinsics.depth_scale for c in rig.cameras}
        if len(scales) != 1:
            raise ArchiveError(f"cameras disagree on depth_scale: {sorted(scales)}")
        self.depth_scale = scales.pop()
        (self.root / "frames").mkdir(parents=True, exist_ok=True)

    def add(self, fs: FrameSet):
        frame_id = fs.frame_id
        members = list(fs.frames) + ([fs.wrist] if fs.wrist is not None else [])
        for frame in members:
            paths = _image_paths(self.root, frame_id, frame.camera_id)
            paths["depth"].parent.mkdir(parents=True, exist_ok=True)
            paths["depth"].write_bytes(frame.depth.astype("<u2").tobytes())
            paths["color"].write_bytes(frame.color.tobytes())
            paths["mask"].write_bytes(frame.mask.tobytes())
        self._frames.append({"frame_id": frame_id, "timestamp_us": fs.capture_timestamp_us})

    def close(self):
        cameras = []
        for cam in self.rig.cameras:
            intr = cam.intrinsics
            cameras.append(
                {
                    "camera_id": cam.camera_id,
                    "role": "wrist" if cam.camera_id == self.rig.wrist_camera_id else "static",
                    "width": intr.width,
                    "height": intr.height,
                    "fx": intr.fx,
                    "fy": intr.fy,
                    "cx": intr.cx,
                    "cy": intr.cy,
                    "rotation": cam.extrinsic.rotation.tolist(),
                    "translation": cam.extrinsic.translation.tolist(),
                }
            )
        manifest = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "depth_scale": self.depth_scale,
            "class_table": {str(k): v for k, v in sorted(self.class_table.items())},
            "cameras": cameras,
            "frames": self._frames,
        }
        with open(self.root / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")


def write_archive(root, rig: CameraRig, framesets, class_table=None) -> int:
    """Write an iterable of framesets; returns the frame count."""
    writer = ArchiveWriter(root, rig, class_table)
    count = 0
    for fs in framesets:
        writer.add(fs)
        count += 1
    writer.close()
    return count


class ArchiveReader:
    """Validating reader; raises ArchiveError naming the offending file."""

    def __init__(self, root):
        self.root = Path(root)
        manifest_path = self.root / "manifest.json"
        if not manifest_path.exists():
            raise ArchiveError(f"{manifest_path}: manifest missing")
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ArchiveError(f"{manifest_path}: invalid JSON ({exc})") from exc
        if manifest.get("format") != FORMAT_NAME:
            raise ArchiveError(f"{manifest_path}: format is not {FORMAT_NAME!r}")
        if manifest.get("version") != FORMAT_VERSION:
            raise ArchiveError(f"{manifest_path}: unsupported version {manifest.get('version')}")
        self.depth_scale = float(manifest["depth_scale"])
        self.class_table = {int(k): v for k, v in manifest["class_table"].items()}
        self._known_classes = np.zeros(256, dtype=bool)
        self._known_classes[list(self.class_table)] = True

        cameras = []
        wrist_id = None
        for cam in manifest["cameras"]:
            intr = Intrinsics(
                fx=float(cam["fx"]),
                fy=float(cam["fy"]),
                cx=float(cam["cx"]),
                cy=float(cam["cy"]),
                width=int(cam["width"]),
                height=int(cam["height"]),
                depth_scale=self.depth_scale,
            )
            ext = RigidTransform(np.asarray(cam["rotation"]), np.asarray(cam["translation"]))
            cameras.append(RigCamera(int(cam["camera_id"]), intr, ext))
            if cam.get("role") == "wrist":
                if wrist_id is not None:
                    raise ArchiveError(f"{manifest_path}: more than one wrist camera")
                wrist_id = int(cam["camera_id"])
        self.rig = CameraRig(cameras, wrist_camera_id=wrist_id)
        self.frames = [(int(f["frame_id"]), int(f["timestamp_us"])) for f in manifest["frames"]]

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def frame_ids(self) -> list[int]:
        return [fid for fid, _ in self.frames]

    def _read_exact(self, path: Path, expected: int) -> bytes:
        if not path.exists():
            raise ArchiveError(f"{path}: file missing")
        data = path.read_bytes()
        if len(data) != expected:
            raise ArchiveError(f"{path}: expected {expected} bytes, found {len(data)}")
        return data

    def _load_frame(self, frame_id: int, timestamp_us: int, cam: RigCamera) -> RgbdFrame:
        intr = cam.intrinsics
        h, w = intr.height, intr.width
        paths = _image_paths(self.root, frame_id, cam.camera_id)
        depth = np.frombuffer(self._read_exact(paths["depth"], 2 * h * w), dtype="<u2").reshape(h, w)
        color = np.frombuffer(self._read_exact(paths["color"], 3 * h * w), dtype=np.uint8).reshape(h, w, 3)
        mask = np.frombuffer(self._read_exact(paths["mask"], h * w), dtype=np.uint8).reshape(h, w)
        bad = ~self._known_classes[mask]
        if bad.any():
            unknown = sorted(np.unique(mask[bad]).tolist())
            raise ArchiveError(f"{paths['mask']}: unknown class ids {unknown}")
        return RgbdFrame(cam.camera_id, frame_id, timestamp_us, depth.copy(), color.copy(), mask.copy())

    def load_frameset(self, frame_id: int) -> FrameSet:
        try:
            timestamp_us = next(ts for fid, ts in self.frames if fid == frame_id)
        except StopIteration:
            raise ArchiveError(f"frame {frame_id} not in manifest") from None
        frames = [
            self._load_frame(frame_id, timestamp_us, cam) for cam in self.rig.static_cameras
        ]
        wrist = None
        if self.rig.wrist_camera is not None:
            wrist = self._load_frame(frame_id, timestamp_us, self.rig.wrist_camera)
        return FrameSet(frames, wrist, timestamp_us)

    def __iter__(self):
        for frame_id, _ in self.frames:
            yield self.load_frameset(frame_id)
