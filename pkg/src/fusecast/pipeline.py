"""Per-frame orchestration from synchronized framesets to wire messages.

:func:`process_frameset` runs the fixed chain
back-project -> transform -> merge -> crop -> voxel -> SOR -> budget
and reports per-stage timings. :func:`run_stream` adds rate control with
latest-wins dropping and hands encoded messages to a sink.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import protocol
from .clock import MonotonicClock
from .filters import Aabb, FilterParams, crop_aabb, enforce_budget, sor_filter, voxel_downsample
from .geometry import (
    Intrinsics,
    PointCloud,
    RgbdFrame,
    RigidTransform,
    back_project,
    merge,
    rotation_to_quat_wxyz,
    transform,
)

DEFAULT_KEEP_CLASSES = frozenset({0})


class FramesetError(ValueError):
    """Frameset cannot be processed against the configured rig."""


@dataclass(frozen=True)
class RigCamera:
    """One rig slot: id, intrinsics, and camera-to-base extrinsic."""

    camera_id: int
    intrinsics: Intrinsics
    extrinsic: RigidTransform


@dataclass
class CameraRig:
    """Static cameras plus an optional wrist camera."""

    cameras: list[RigCamera]
    wrist_camera_id: int | None = None

    def __post_init__(self):
        ids = [c.camera_id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise ValueError(f"camera ids must be unique, got {ids}")
        if self.wrist_camera_id is not None and self.wrist_camera_id not in ids:
            raise ValueError(f"wrist camera {self.wrist_camera_id} not in rig {ids}")
        if not self.static_cameras:
            raise ValueError("rig needs at least one static (fused) camera")

    @property
    def static_cameras(self) -> list[RigCamera]:
        """Fusion inputs, ordered by camera id."""
        return sorted(
            (c for c in self.cameras if c.camera_id != self.wrist_camera_id),
            key=lambda c: c.camera_id,
        )

    @property
    def wrist_camera(self) -> RigCamera | None:
        if self.wrist_camera_id is None:
            return None
        return next(c for c in self.cameras if c.camera_id == self.wrist_camera_id)

    def camera(self, camera_id: int) -> RigCamera:
        for cam in self.cameras:
            if cam.camera_id == camera_id:
                return cam
        raise KeyError(f"no camera {camera_id} in rig")


@dataclass
class PipelineConfig:
    """Everything the per-frame chain needs."""

    rig: CameraRig
    crop: Aabb
    filter: FilterParams = field(default_factory=FilterParams)
    target_rate_hz: float = 10.0
    keep_classes: frozenset[int] = DEFAULT_KEEP_CLASSES

    def __post_init__(self):
        if self.target_rate_hz <= 0:
            raise ValueError(f"target_rate_hz must be positive, got {self.target_rate_hz}")
        self.keep_classes = frozenset(int(c) for c in self.keep_classes)
        if not self.keep_classes:
            raise ValueError("keep_classes must not be empty")


@dataclass
class FrameSet:
    """Synchronized frames sharing one frame id, one per static camera."""

    frames: list[RgbdFrame]
    wrist: RgbdFrame | None = None
    capture_timestamp_us: int = 0

    def __post_init__(self):
        self.frames = sorted(self.frames, key=lambda f: f.camera_id)
        ids = {f.frame_id for f in self.frames}
        if self.wrist is not None:
            ids.add(self.wrist.frame_id)
        if len(ids) > 1:
            raise ValueError(f"member frame ids disagree: {sorted(ids)}")

    @property
    def frame_id(self) -> int:
        return self.frames[0].frame_id if self.frames else (self.wrist.frame_id if self.wrist else 0)


@dataclass
class StageTimings:
    """Microsecond durations per pipeline stage for one frameset."""

    backproject_us: int = 0
    transform_us: int = 0
    merge_us: int = 0
    crop_us: int = 0
    voxel_us: int = 0
    sor_us: int = 0
    budget_us: int = 0
    encode_us: int = 0
    total_us: int = 0
    output_point_count: int = 0

    STAGES = ("backproject", "transform", "merge", "crop", "voxel", "sor", "budget", "encode")

    def stage_sum_us(self) -> int:
        return sum(getattr(self, f"{name}_us") for name in self.STAGES)


def _check_frameset(fs: FrameSet, cfg: PipelineConfig):
    have = {f.camera_id for f in fs.frames}
    want = {c.camera_id for c in cfg.rig.static_cameras}
    if have != want:
        raise FramesetError(
            f"frameset {fs.frame_id}: cameras {sorted(have)} do not match rig {sorted(want)}"
        )
    if fs.wrist is not None and cfg.rig.wrist_camera_id is None:
        raise FramesetError(f"frameset {fs.frame_id}: wrist frame but rig has no wrist camera")


def process_frameset(fs: FrameSet, cfg: PipelineConfig) -> tuple[PointCloud, StageTimings]:
    """Run the full reduction chain on one frameset.

    Deterministic for fixed inputs: per-camera clouds are merged in
    camera id order, and every stage is order-preserving. The output
    never exceeds the configured point budget.
    """
    _check_frameset(fs, cfg)
    timings = StageTimings()
    t_start = time.perf_counter_ns()
    frames = {f.camera_id: f for f in fs.frames}

    t0 = time.perf_counter_ns()
    per_camera = [
        back_project(frames[cam.camera_id], cam.intrinsics, cfg.keep_classes)
        for cam in cfg.rig.static_cameras
    ]
    t1 = time.perf_counter_ns()
    timings.backproject_us = (t1 - t0) // 1000

    t0 = t1
    in_base = [
        transform(cloud, cam.extrinsic)
        for cloud, cam in zip(per_camera, cfg.rig.static_cameras)
    ]
    t1 = time.perf_counter_ns()
    timings.transform_us = (t1 - t0) // 1000

    t0 = t1
    fused = merge(in_base)
    t1 = time.perf_counter_ns()
    timings.merge_us = (t1 - t0) // 1000

    t0 = t1
    cropped = crop_aabb(fused, cfg.crop)
    t1 = time.perf_counter_ns()
    timings.crop_us = (t1 - t0) // 1000

    t0 = t1
    voxeled = voxel_downsample(cropped, cfg.filter.voxel_leaf)
    t1 = time.perf_counter_ns()
    timings.voxel_us = (t1 - t0) // 1000

    t0 = t1
    cleaned = sor_filter(voxeled, cfg.filter.sor_k, cfg.filter.sor_std_ratio)
    t1 = time.perf_counter_ns()
    timings.sor_us = (t1 - t0) // 1000

    t0 = t1
    budgeted = enforce_budget(cleaned, cfg.filter.point_budget)
    t1 = time.perf_counter_ns()
    timings.budget_us = (t1 - t0) // 1000

    timings.total_us = (t1 - t_start) // 1000
    timings.output_point_count = len(budgeted)
    assert timings.output_point_count <= cfg.filter.point_budget
    return budgeted, timings


def encode_frameset_output(
    cloud: PointCloud, fs: FrameSet, cfg: PipelineConfig, timings: StageTimings
) -> list[bytes]:
    """Encode the fused cloud plus the wrist side channel, timing it."""
    t0 = time.perf_counter_ns()
    messages = [protocol.encode_cloud(cloud)]
    wrist_cam = cfg.rig.wrist_camera
    if fs.wrist is not None and wrist_cam is not None:
        messages.append(protocol.encode_wrist(fs.wrist, wrist_pose(wrist_cam.extrinsic)))
    t1 = time.perf_counter_ns()
    timings.encode_us = (t1 - t0) // 1000
    timings.total_us += timings.encode_us
    return messages


def wrist_pose(extrinsic: RigidTransform) -> np.ndarray:
    """7-float pose (xyz + wxyz quaternion) from a rigid transform."""
    quat = rotation_to_quat_wxyz(extrinsic.rotation)
    return np.concatenate([extrinsic.translation, quat]).astype(np.float32)


@dataclass
class StageStats:
    """Mean / p50 / p95 microseconds for one stage across a run."""

    mean_us: float
    p50_us: float
    p95_us: float

    @classmethod
    def from_samples(cls, samples) -> "StageStats":
        arr = np.asarray(samples, dtype=np.float64)
        if arr.size == 0:
            return cls(0.0, 0.0, 0.0)
        return cls(
            float(arr.mean()),
            float(np.percentile(arr, 50)),
            float(np.percentile(arr, 95)),
        )


@dataclass
class StreamStats:
    """Outcome of one :func:`run_stream` session."""

    processed: int = 0
    dropped: int = 0
    skipped: int = 0
    sent_cloud_messages: int = 0
    sent_wrist_messages: int = 0
    sent_bytes: int = 0
    duration_s: float = 0.0
    error: str | None = None
    stage_stats: dict[str, StageStats] = field(default_factory=dict)
    timings: list[StageTimings] = field(default_factory=list)

    @property
    def achieved_hz(self) -> float:
        if self.duration_s <= 0:
            return 0.0
        return self.processed / self.duration_s

    def finalize(self):
        self.stage_stats = {
            name: StageStats.from_samples([getattr(t, f"{name}_us") for t in self.timings])
            for name in StageTimings.STAGES + ("total",)
        }


def run_stream(source, cfg: PipelineConfig, sink, *, clock=None, process=None) -> StreamStats:
    """Process timed framesets at the configured rate, newest first.

    `source` yields ``(arrival_time_s, FrameSet)`` in frame id order, on
    the source's own timeline; the first arrival is aligned with stream
    start. Framesets that arrive while an older one is still waiting
    replace it (the stale one is counted as dropped), so under overload
    the newest frame always wins. One point-cloud message is emitted per
    processed frameset, plus a wrist message when a wrist frame is
    present. A sink failure ends the stream with the error recorded in
    the statistics.
    """
    clock = clock or MonotonicClock()
    process = process or process_frameset
    interval = 1.0 / cfg.target_rate_hz
    stats = StreamStats()
    started = clock.now()
    last_emitted_frame_id = None

    pending: FrameSet | None = None
    next_arrival: tuple[float, FrameSet] | None = None
    it = iter(source)
    offset: float | None = None

    def pull():
        nonlocal next_arrival, offset
        try:
            arrival_time, fs = next(it)
        except StopIteration:
            next_arrival = None
            return
        if offset is None:
            offset = started - arrival_time
        next_arrival = (arrival_time + offset, fs)

    pull()
    next_emit: float | None = None
    try:
        while True:
            now = clock.now()
            while next_arrival is not None and next_arrival[0] <= now:
                if pending is not None:
                    stats.dropped += 1
                pending = next_arrival[1]
                pull()
            if pending is not None and (next_emit is None or now >= next_emit):
                fs = pending
                pending = None
                try:
                    cloud, timings = process(fs, cfg)
                except FramesetError:
                    stats.skipped += 1
                    continue
                messages = encode_frameset_output(cloud, fs, cfg, timings)
                if last_emitted_frame_id is not None:
                    assert fs.frame_id > last_emitted_frame_id
                last_emitted_frame_id = fs.frame_id
                try:
                    for message in messages:
                        sink.send(message)
                except Exception as exc:
                    stats.error = str(exc)
                    stats.processed += 1
                    stats.timings.append(timings)
                    break
                stats.processed += 1
                stats.timings.append(timings)
                stats.sent_cloud_messages += 1
                stats.sent_wrist_messages += len(messages) - 1
                stats.sent_bytes += sum(len(m) for m in messages)
                base = next_emit if next_emit is not None else now
                next_emit = base + interval
                if next_emit < clock.now():
                    # lagging behind realtime: reschedule from now
                    next_emit = clock.now()
                continue
            targets = []
            if next_arrival is not None:
                targets.append(next_arrival[0])
            if pending is not None and next_emit is not None:
                targets.append(next_emit)
            if not targets:
                break
            clock.sleep(max(0.0, min(targets) - now))
    except KeyboardInterrupt:
        # an interrupted session still reports its final statistics
        stats.error = "interrupted"

    stats.duration_s = clock.now() - started
    stats.finalize()
    return stats


def paced_source(framesets, rate_hz: float, start: float = 0.0):
    """Arrivals at a fixed rate, for replaying recordings as live data."""
    interval = 1.0 / rate_hz
    for i, fs in enumerate(framesets):
        yield start + i * interval, fs
