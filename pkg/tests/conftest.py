"""Shared fixtures: small scenes, random clouds, acceptance reporting."""

from __future__ import annotations

import numpy as np
import pytest

from fusecast.filters import Aabb
from fusecast.geometry import Intrinsics, PointCloud
from fusecast.pipeline import CameraRig, PipelineConfig, RigCamera
from fusecast.scene import (
    Box,
    Cylinder,
    HorizontalRect,
    NoiseModel,
    SceneRenderer,
    SyntheticScene,
    look_at,
)


def random_cloud(rng, n, span=1.0, frame_id=0, timestamp_us=0) -> PointCloud:
    positions = rng.uniform(-span, span, (n, 3)).astype(np.float32)
    colors = rng.integers(0, 256, (n, 3), dtype=np.uint8)
    return PointCloud(positions, colors, frame_id, timestamp_us)


def tiny_intrinsics(width=160, height=120) -> Intrinsics:
    return Intrinsics(fx=150.0, fy=150.0, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                      width=width, height=height)


def tiny_rig(with_wrist=True) -> CameraRig:
    center = (0.55, 0.0, 0.05)
    intr = tiny_intrinsics()
    cameras = [
        RigCamera(0, intr, look_at((0.25, -0.85, 0.45), center)),
        RigCamera(1, intr, look_at((0.25, 0.85, 0.45), center)),
        RigCamera(2, intr, look_at((0.55, 0.0, 1.15), center)),
    ]
    wrist_id = None
    if with_wrist:
        cameras.append(RigCamera(3, intr, look_at((0.35, 0.08, 0.35), (0.58, 0.0, 0.02))))
        wrist_id = 3
    return CameraRig(cameras, wrist_camera_id=wrist_id)


def tiny_scene(seed=0, noise=None, with_wrist=True) -> SyntheticScene:
    primitives = [
        HorizontalRect(0.0, 0.15, 1.0, -0.55, 0.55, (150, 140, 130), class_id=4),
        Box((-0.06, -0.06, 0.0), (0.06, 0.06, 0.5), (120, 120, 120), class_id=1),
        Box((0.52, -0.02, 0.18), (0.58, 0.06, 0.30), (90, 90, 95), class_id=2),
        Box((0.45, -0.22, 0.0), (0.53, -0.06, 0.24), (200, 60, 40)),
        Box((0.62, 0.10, 0.0), (0.70, 0.20, 0.14), (240, 220, 90)),
        Cylinder(0.50, 0.10, 0.0, 0.09, 0.035, (220, 40, 30)),
    ]
    return SyntheticScene(primitives, tiny_rig(with_wrist), noise or NoiseModel(), seed)


def tiny_pipeline_config(seed=0, **overrides) -> PipelineConfig:
    from fusecast.filters import FilterParams

    defaults = dict(
        rig=tiny_rig(),
        crop=Aabb((0.2, -0.5, -0.05), (0.95, 0.5, 0.55)),
        filter=FilterParams(voxel_leaf=0.01),
    )
    defaults.update(overrides)
    return PipelineConfig(**defaults)


@pytest.fixture(scope="session")
def tiny_renderer() -> SceneRenderer:
    return SceneRenderer(tiny_scene())


def pytest_runtest_logreport(report):
    """Print one pass/fail line per acceptance criterion."""
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    outcome = "PASS" if report.passed else ("FAIL" if report.failed else "SKIP")
    print(f"\n[acceptance] {name}: {outcome}", flush=True)
