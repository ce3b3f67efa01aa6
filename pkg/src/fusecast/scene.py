"""Synthetic tabletop scenes rendered to RGB-D framesets by ray casting.

Analytic primitives (boxes, vertical cylinders, horizontal rectangles)
are intersected per pixel against each camera, which yields depth with
known ground truth plus class and color images. A seeded noise model
adds Gaussian depth noise and sparse large-displacement outliers, the
kind the outlier-removal stage exists to suppress. Rendering is
deterministic per (scene, seed, frame id).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .filters import Aabb
from .geometry import Intrinsics, RgbdFrame, RigidTransform
from .pipeline import CameraRig, FrameSet, RigCamera

CLASS_TABLE = {
    0: "background",
    1: "robot",
    2: "gripper",
    3: "wrist_mount",
    4: "table",
}

FRAME_INTERVAL_US = 100_000  # nominal 10 Hz capture spacing
MIN_VALID_DEPTH_M = 0.05
RAY_EPS = 1e-6


@dataclass(frozen=True)
class Box:
    """Axis-aligned solid box."""

    min: tuple[float, float, float]
    max: tuple[float, float, float]
    color: tuple[int, int, int]
    class_id: int = 0

    def intersect(self, origin, dirs):
        entry = np.full(dirs.shape[:2], -np.inf)
        exit_ = np.full(dirs.shape[:2], np.inf)
        for axis in range(3):
            d = dirs[:, :, axis]
            lo = self.min[axis] - origin[axis]
            hi = self.max[axis] - origin[axis]
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = lo / d
                t2 = hi / d
            inside = (origin[axis] >= self.min[axis]) and (origin[axis] <= self.max[axis])
            tmin = np.where(d != 0, np.minimum(t1, t2), -np.inf if inside else np.inf)
            tmax = np.where(d != 0, np.maximum(t1, t2), np.inf if inside else -np.inf)
            entry = np.maximum(entry, tmin)
            exit_ = np.minimum(exit_, tmax)
        hit = (exit_ >= entry) & (entry > RAY_EPS)
        return np.where(hit, entry, np.inf)


@dataclass(frozen=True)
class Cylinder:
    """Open vertical tube (no end caps), a stand-in for cups and cans."""

    x: float
    y: float
    z0: float
    z1: float
    radius: float
    color: tuple[int, int, int]
    class_id: int = 0

    def intersect(self, origin, dirs):
        dx = dirs[:, :, 0]
        dy = dirs[:, :, 1]
        dz = dirs[:, :, 2]
        ox = origin[0] - self.x
        oy = origin[1] - self.y
        a = dx * dx + dy * dy
        b = 2.0 * (ox * dx + oy * dy)
        c = ox * ox + oy * oy - self.radius * self.radius
        disc = b * b - 4.0 * a * c
        hit_s = np.full(dirs.shape[:2], np.inf)
        valid = (disc >= 0) & (a > 0)
        sq = np.sqrt(np.where(valid, disc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            for sign in (-1.0, 1.0):
                s = np.where(valid, (-b + sign * sq) / (2.0 * a), np.inf)
                z = origin[2] + s * dz
                ok = valid & (s > RAY_EPS) & (z >= self.z0) & (z <= self.z1)
                hit_s = np.where(ok & (s < hit_s), s, hit_s)
        return hit_s


@dataclass(frozen=True)
class HorizontalRect:
    """Axis-aligned rectangle at fixed height, typically the tabletop."""

    z: float
    x0: float
    x1: float
    y0: float
    y1: float
    color: tuple[int, int, int]
    class_id: int = 4

    def intersect(self, origin, dirs):
        dz = dirs[:, :, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(dz != 0, (self.z - origin[2]) / dz, np.inf)
        x = origin[0] + s * dirs[:, :, 0]
        y = origin[1] + s * dirs[:, :, 1]
        ok = (s > RAY_EPS) & (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)
        return np.where(ok, s, np.inf)


@dataclass(frozen=True)
class NoiseModel:
    """Per-pixel depth perturbation applied after the clean render."""

    depth_std_m: float = 0.0
    outlier_prob: float = 0.0
    outlier_mag_m: float = 0.25

    def __post_init__(self):
        if self.depth_std_m < 0:
            raise ValueError("depth_std_m must be >= 0")
        if not 0.0 <= self.outlier_prob <= 1.0:
            raise ValueError("outlier_prob must be in [0, 1]")
        if self.outlier_mag_m < 0:
            raise ValueError("outlier_mag_m must be >= 0")


@dataclass
class SyntheticScene:
    primitives: list
    rig: CameraRig
    noise: NoiseModel = field(default_factory=NoiseModel)
    seed: int = 0


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera-to-base transform for a camera at `eye` looking at `target`.

    Camera convention: +z forward (optical axis), +x right, +y down.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise ValueError("eye and target coincide")
    z = forward / norm
    up = np.asarray(up, dtype=np.float64)
    if abs(np.dot(z, up)) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    down = -up
    x = np.cross(down, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return RigidTransform(np.column_stack([x, y, z]), eye)


def default_intrinsics(width: int = 640, height: int = 480) -> Intrinsics:
    return Intrinsics(
        fx=600.0,
        fy=600.0,
        cx=(width - 1) / 2.0,
        cy=(height - 1) / 2.0,
        width=width,
        height=height,
    )


def default_rig(width: int = 640, height: int = 480) -> CameraRig:
    """Three static cameras (left, right, upper) plus a wrist camera."""
    center = (0.55, 0.0, 0.05)
    intr = default_intrinsics(width, height)
    cameras = [
        RigCamera(0, intr, look_at((0.25, -0.85, 0.45), center)),
        RigCamera(1, intr, look_at((0.25, 0.85, 0.45), center)),
        RigCamera(2, intr, look_at((0.55, 0.0, 1.15), center)),
        RigCamera(3, intr, look_at((0.35, 0.08, 0.35), (0.58, 0.0, 0.02))),
    ]
    return CameraRig(cameras, wrist_camera_id=3)


def default_scene(seed: int = 0, noise: NoiseModel | None = None) -> SyntheticScene:
    """Cluttered tabletop: masked table and robot column, kept objects."""
    primitives = [
        HorizontalRect(0.0, 0.15, 1.0, -0.55, 0.55, (150, 140, 130), class_id=4),
        Box((-0.06, -0.06, 0.0), (0.06, 0.06, 0.5), (120, 120, 120), class_id=1),
        # gripper hovering over the workspace: masked out despite being
        # inside the crop box
        Box((0.52, -0.02, 0.18), (0.58, 0.06, 0.30), (90, 90, 95), class_id=2),
        Box((0.45, -0.22, 0.0), (0.53, -0.06, 0.24), (200, 60, 40)),
        Box((0.62, 0.10, 0.0), (0.70, 0.20, 0.14), (240, 220, 90)),
        Box((0.72, -0.05, 0.0), (0.78, 0.03, 0.05), (40, 180, 70)),
        Cylinder(0.50, 0.10, 0.0, 0.09, 0.035, (220, 40, 30)),
        Cylinder(0.63, -0.12, 0.0, 0.11, 0.04, (40, 80, 220)),
    ]
    if noise is None:
        noise = NoiseModel(depth_std_m=0.0015, outlier_prob=0.003, outlier_mag_m=0.25)
    return SyntheticScene(primitives, default_rig(), noise, seed)


DEFAULT_CROP = Aabb((0.2, -0.5, -0.05), (0.95, 0.5, 0.55))


class SceneRenderer:
    """Renders framesets from a scene, caching the static-geometry pass.

    The clean depth/class/color images per camera depend only on the
    scene, so they are ray cast once; each frame then applies its own
    seeded noise.
    """

    def __init__(self, scene: SyntheticScene):
        self.scene = scene
        self._clean = {
            cam.camera_id: self._render_camera(cam) for cam in scene.rig.cameras
        }

    def _render_camera(self, cam: RigCamera):
        intr = cam.intrinsics
        u = np.arange(intr.width, dtype=np.float64)
        v = np.arange(intr.height, dtype=np.float64)
        uu, vv = np.meshgrid(u, v)
        dirs_cam = np.stack(
            [(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu)], axis=2
        )
        r = cam.extrinsic.rotation
        dirs = dirs_cam @ r.T  # camera-frame dirs expressed in base frame
        origin = cam.extrinsic.translation

        depth = np.full((intr.height, intr.width), np.inf)
        cls = np.zeros((intr.height, intr.width), dtype=np.uint8)
        color = np.zeros((intr.height, intr.width, 3), dtype=np.uint8)
        for prim in self.scene.primitives:
            s = prim.intersect(origin, dirs)
            closer = s < depth
            depth = np.where(closer, s, depth)
            cls[closer] = prim.class_id
            color[closer] = np.asarray(prim.color, dtype=np.uint8)
        return depth, cls, color

    def _noisy_depth_raw(self, camera_id: int, frame_id: int, depth_m: np.ndarray):
        """Apply the noise model and quantize to raw u16 units.

        Returns (raw u16, outlier bool mask) where the mask marks pixels
        whose depth was displaced as an outlier.
        """
        noise = self.scene.noise
        valid = np.isfinite(depth_m)
        noisy = np.where(valid, depth_m, 0.0)
        outliers = np.zeros(depth_m.shape, dtype=bool)
        if noise.depth_std_m > 0 or noise.outlier_prob > 0:
            seq = np.random.SeedSequence(
                entropy=self.scene.seed, spawn_key=(int(camera_id), int(frame_id))
            )
            rng = np.random.default_rng(seq)
            if noise.depth_std_m > 0:
                noisy = noisy + np.where(valid, rng.normal(0.0, noise.depth_std_m, depth_m.shape), 0.0)
            if noise.outlier_prob > 0 and noise.outlier_mag_m > 0:
                # salt outliers fly toward the sensor (mixed-pixel style):
                # the shortened ray stays in free space, so the bogus
                # point is isolated rather than glued to another surface
                outliers = valid & (rng.random(depth_m.shape) < noise.outlier_prob)
                magnitude = rng.uniform(0.4, 1.0, depth_m.shape) * noise.outlier_mag_m
                noisy = noisy - np.where(outliers, magnitude, 0.0)
        depth_scale = self.scene.rig.camera(camera_id).intrinsics.depth_scale
        raw = np.where(
            valid & (noisy > MIN_VALID_DEPTH_M),
            np.clip(np.rint(noisy / depth_scale), 0, 65535),
            0,
        ).astype(np.uint16)
        outliers &= raw > 0
        return raw, outliers

    def render(self, frame_id: int) -> FrameSet:
        fs, _ = self.render_with_truth(frame_id)
        return fs

    def render_with_truth(self, frame_id: int):
        """Frameset plus per-camera boolean masks of injected outliers."""
        timestamp = frame_id * FRAME_INTERVAL_US
        frames = []
        wrist = None
        truth = {}
        for cam in self.scene.rig.cameras:
            depth_m, cls, color = self._clean[cam.camera_id]
            raw, outliers = self._noisy_depth_raw(cam.camera_id, frame_id, depth_m)
            frame = RgbdFrame(cam.camera_id, frame_id, timestamp, raw, color, cls)
            truth[cam.camera_id] = outliers
            if cam.camera_id == self.scene.rig.wrist_camera_id:
                wrist = frame
            else:
                frames.append(frame)
        return FrameSet(frames, wrist, timestamp), truth


def render_synthetic(scene: SyntheticScene, frame_id: int) -> FrameSet:
    """One-shot render; prefer SceneRenderer for multi-frame runs."""
    return SceneRenderer(scene).render(frame_id)


def scene_to_dict(scene: SyntheticScene) -> dict:
    prims = []
    for p in scene.primitives:
        if isinstance(p, Box):
            prims.append(
                {"kind": "box", "min": list(p.min), "max": list(p.max), "color": list(p.color), "class_id": p.class_id}
            )
        elif isinstance(p, Cylinder):
            prims.append(
                {
                    "kind": "cylinder",
                    "x": p.x,
                    "y": p.y,
                    "z0": p.z0,
                    "z1": p.z1,
                    "radius": p.radius,
                    "color": list(p.color),
                    "class_id": p.class_id,
                }
            )
        elif isinstance(p, HorizontalRect):
            prims.append(
                {
                    "kind": "rect",
                    "z": p.z,
                    "x0": p.x0,
                    "x1": p.x1,
                    "y0": p.y0,
                    "y1": p.y1,
                    "color": list(p.color),
                    "class_id": p.class_id,
                }
            )
        else:
            raise TypeError(f"unknown primitive {type(p).__name__}")
    cameras = []
    for cam in scene.rig.cameras:
        intr = cam.intrinsics
        cameras.append(
            {
                "camera_id": cam.camera_id,
                "width": intr.width,
                "height": intr.height,
                "fx": intr.fx,
                "fy": intr.fy,
                "cx": intr.cx,
                "cy": intr.cy,
                "depth_scale": intr.depth_scale,
                "rotation": cam.extrinsic.rotation.tolist(),
                "translation": cam.extrinsic.translation.tolist(),
                "wrist": cam.camera_id == scene.rig.wrist_camera_id,
            }
        )
    return {
        "seed": scene.seed,
        "noise": {
            "depth_std_m": scene.noise.depth_std_m,
            "outlier_prob": scene.noise.outlier_prob,
            "outlier_mag_m": scene.noise.outlier_mag_m,
        },
        "primitives": prims,
        "cameras": cameras,
    }


def scene_from_dict(data: dict) -> SyntheticScene:
    prims = []
    for p in data.get("primitives", []):
        kind = p.get("kind")
        color = tuple(p.get("color", (200, 200, 200)))
        class_id = int(p.get("class_id", 0))
        if kind == "box":
            prims.append(Box(tuple(p["min"]), tuple(p["max"]), color, class_id))
        elif kind == "cylinder":
            prims.append(
                Cylinder(p["x"], p["y"], p["z0"], p["z1"], p["radius"], color, class_id)
            )
        elif kind == "rect":
            prims.append(
                HorizontalRect(p["z"], p["x0"], p["x1"], p["y0"], p["y1"], color, class_id)
            )
        else:
            raise ValueError(f"unknown primitive kind {kind!r}")
    if "cameras" in data:
        cameras = []
        wrist_id = None
        for c in data["cameras"]:
            intr = Intrinsics(
                fx=c["fx"],
                fy=c["fy"],
                cx=c["cx"],
                cy=c["cy"],
                width=c["width"],
                height=c["height"],
                depth_scale=c.get("depth_scale", 0.001),
            )
            if "rotation" in c:
                ext = RigidTransform(np.asarray(c["rotation"]), np.asarray(c["translation"]))
            else:
                ext = look_at(c["eye"], c["look_at"])
            cameras.append(RigCamera(int(c["camera_id"]), intr, ext))
            if c.get("wrist"):
                wrist_id = int(c["camera_id"])
        rig = CameraRig(cameras, wrist_camera_id=wrist_id)
    else:
        rig = default_rig()
    noise_d = data.get("noise", {})
    noise = NoiseModel(
        depth_std_m=float(noise_d.get("depth_std_m", 0.0)),
        outlier_prob=float(noise_d.get("outlier_prob", 0.0)),
        outlier_mag_m=float(noise_d.get("outlier_mag_m", 0.25)),
    )
    return SyntheticScene(prims, rig, noise, int(data.get("seed", 0)))


def load_scene(path) -> SyntheticScene:
    with open(path, "r", encoding="utf-8") as fh:
        return scene_from_dict(json.load(fh))


def save_scene(scene: SyntheticScene, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2)
        fh.write("\n")
