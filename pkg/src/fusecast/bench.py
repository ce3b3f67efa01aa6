"""Throughput benchmark for the frame pipeline, per kernel backend.

Measures process + encode time per frame (scene rendering is excluded:
it stands in for the sensors). Reports per-stage latency percentiles,
the achieved frame rate, output point counts, and the wire bandwidth the
stream would need at the configured rate. The achieved-rate check is a
release gate with a configurable threshold, not a unit test.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import kernels, protocol
from .pipeline import PipelineConfig, StageStats, StageTimings, encode_frameset_output, process_frameset


def bandwidth_bytes_per_s(rate_hz: float, point_count: int) -> float:
    """Wire bytes per second for point-cloud messages of n points at a rate."""
    return rate_hz * protocol.message_size(point_count)


@dataclass
class FrameRecord:
    frame_id: int
    point_count: int
    message_bytes: int
    timings: StageTimings


@dataclass
class BenchReport:
    backend: str
    target_rate_hz: float
    records: list[FrameRecord] = field(default_factory=list)

    @property
    def frame_count(self) -> int:
        return len(self.records)

    @property
    def achieved_hz(self) -> float:
        total_s = sum(r.timings.total_us for r in self.records) / 1e6
        if total_s <= 0:
            return 0.0
        return self.frame_count / total_s

    @property
    def mean_point_count(self) -> float:
        if not self.records:
            return 0.0
        return float(np.mean([r.point_count for r in self.records]))

    @property
    def max_point_count(self) -> int:
        return max((r.point_count for r in self.records), default=0)

    @property
    def mean_bandwidth_bytes_per_s(self) -> float:
        """Required bandwidth at the target rate for the measured frames."""
        if not self.records:
            return 0.0
        return float(
            np.mean([bandwidth_bytes_per_s(self.target_rate_hz, r.point_count) for r in self.records])
        )

    def stage_stats(self) -> dict[str, StageStats]:
        return {
            name: StageStats.from_samples(
                [getattr(r.timings, f"{name}_us") for r in self.records]
            )
            for name in StageTimings.STAGES + ("total",)
        }


def run_bench(framesets, cfg: PipelineConfig, backend: str = "auto") -> BenchReport:
    """Process the given framesets under one kernel backend."""
    previous = kernels.use_backend(backend)
    try:
        report = BenchReport(backend=kernels.active_backend(), target_rate_hz=cfg.target_rate_hz)
        for fs in framesets:
            cloud, timings = process_frameset(fs, cfg)
            messages = encode_frameset_output(cloud, fs, cfg, timings)
            report.records.append(
                FrameRecord(fs.frame_id, len(cloud), len(messages[0]), timings)
            )
        return report
    finally:
        kernels.use_backend(previous)


def compare_backends(frameset_factory, cfg: PipelineConfig) -> dict[str, BenchReport]:
    """Run the bench once per available backend on identical framesets.

    `frameset_factory` is called per backend and must yield identical
    framesets each time (renderers are deterministic, so re-rendering
    satisfies this).
    """
    return {
        name: run_bench(frameset_factory(), cfg, backend=name)
        for name in kernels.available_backends()
    }


CSV_COLUMNS = (
    "frame_id",
    "points",
    "message_bytes",
    *(f"{name}_us" for name in StageTimings.STAGES),
    "total_us",
)


def write_csv(report: BenchReport, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _write_csv_file(report, fh)


def csv_text(report: BenchReport) -> str:
    buf = io.StringIO()
    _write_csv_file(report, buf)
    return buf.getvalue()


def _write_csv_file(report: BenchReport, fh):
    writer = csv.writer(fh)
    writer.writerow(CSV_COLUMNS)
    for r in report.records:
        writer.writerow(
            [
                r.frame_id,
                r.point_count,
                r.message_bytes,
                *(getattr(r.timings, f"{name}_us") for name in StageTimings.STAGES),
                r.timings.total_us,
            ]
        )


def format_report(report: BenchReport) -> str:
    stats = report.stage_stats()
    lines = [
        f"backend: {report.backend}",
        f"frames:  {report.frame_count}",
        f"rate:    {report.achieved_hz:.2f} Hz achieved "
        f"(target {report.target_rate_hz:g} Hz)",
        f"points:  mean {report.mean_point_count:.0f}, max {report.max_point_count}",
        f"bandwidth at target rate: {report.mean_bandwidth_bytes_per_s:,.0f} B/s",
        "stage latencies (us):",
    ]
    for name in StageTimings.STAGES + ("total",):
        s = stats[name]
        lines.append(
            f"  {name:<12} mean {s.mean_us:10.1f}  p50 {s.p50_us:10.1f}  p95 {s.p95_us:10.1f}"
        )
    return "\n".join(lines)
