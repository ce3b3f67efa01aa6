"""Operator commands: replay, serve, recv, bench, export-ply, gen-scene.

Every subcommand is deterministic given fixed inputs, seeds, and clocks
(wall-clock timing fields in reports aside). Errors go to stderr and the
exit status is nonzero; data goes to files only.
"""

from __future__ import annotations

import argparse
import socket
import sys
from pathlib import Path

from . import bench as bench_mod
from . import kernels, protocol, transport
from .archive import ArchiveError, ArchiveReader, write_archive
from .config import ConfigError, build_pipeline_config, load_config_values
from .pipeline import PipelineConfig, paced_source, run_stream
from .plyio import write_ply
from .scene import SceneRenderer, default_scene, load_scene, save_scene


def _endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(f"endpoint must be HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, help="pipeline config JSON")
    parser.add_argument("--voxel-leaf", type=float, dest="voxel_leaf")
    parser.add_argument("--sor-k", type=int, dest="sor_k")
    parser.add_argument("--sor-std-ratio", type=float, dest="sor_std_ratio")
    parser.add_argument("--point-budget", type=int, dest="point_budget")
    parser.add_argument("--target-rate", type=float, dest="target_rate_hz")
    parser.add_argument(
        "--keep-classes",
        dest="keep_classes",
        help="comma-separated mask class ids to keep (default 0)",
    )


def _config_values(args) -> dict:
    """Parse the config file up front, before any data is touched."""
    return load_config_values(args.config) if getattr(args, "config", None) else {}


def _pipeline_config(args, rig, values: dict) -> PipelineConfig:
    keep = None
    if getattr(args, "keep_classes", None):
        keep = [int(c) for c in str(args.keep_classes).split(",") if c != ""]
    return build_pipeline_config(
        rig,
        values,
        voxel_leaf=getattr(args, "voxel_leaf", None),
        sor_k=getattr(args, "sor_k", None),
        sor_std_ratio=getattr(args, "sor_std_ratio", None),
        point_budget=getattr(args, "point_budget", None),
        target_rate_hz=getattr(args, "target_rate_hz", None),
        keep_classes=keep,
    )


def _load_framesets(args):
    """Frameset iterable plus rig from --archive or --scene/--synthetic."""
    if args.archive is not None:
        reader = ArchiveReader(args.archive)
        return iter(reader), reader.rig, len(reader)
    scene = load_scene(args.scene) if args.scene else default_scene(seed=args.seed)
    renderer = SceneRenderer(scene)
    frames = args.frames

    def generate():
        for frame_id in range(frames):
            yield renderer.render(frame_id)

    return generate(), scene.rig, frames


def cmd_gen_scene(args) -> int:
    scene = load_scene(args.scene) if args.scene else default_scene(seed=args.seed)
    if args.seed is not None:
        scene.seed = args.seed
    renderer = SceneRenderer(scene)
    out = Path(args.out)
    count = write_archive(out, scene.rig, (renderer.render(i) for i in range(args.frames)))
    if args.save_scene:
        save_scene(scene, args.save_scene)
    print(f"wrote {count} frames to {out}")
    return 0


def cmd_replay(args) -> int:
    values = _config_values(args)
    reader = ArchiveReader(args.archive)
    cfg = _pipeline_config(args, reader.rig, values)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .pipeline import process_frameset

    count = 0
    total_points = 0
    for fs in reader:
        cloud, _ = process_frameset(fs, cfg)
        write_ply(out / f"frame_{fs.frame_id:06d}.ply", cloud)
        count += 1
        total_points += len(cloud)
    mean = total_points / count if count else 0.0
    print(f"{count} frames replayed, mean {mean:.0f} points, output in {out}")
    return 0


def cmd_serve(args) -> int:
    values = _config_values(args)
    framesets, rig, _ = _load_framesets(args)
    cfg = _pipeline_config(args, rig, values)
    source = paced_source(framesets, cfg.target_rate_hz)
    max_bytes = protocol.message_size(cfg.filter.point_budget) + (1 << 12)

    if args.mode == "stream":
        listener = transport.open_stream_listener(*args.endpoint)
        try:
            listener.settimeout(args.accept_timeout)
            conn, peer = listener.accept()
        except socket.timeout:
            print("no client connected before timeout", file=sys.stderr)
            return 1
        finally:
            listener.close()
        print(f"client {peer[0]}:{peer[1]} connected")
        sink = transport.StreamSender(conn, max_bytes)
        try:
            stats = run_stream(source, cfg, sink)
        finally:
            conn.close()
    else:
        sock = transport.open_datagram_socket()
        sink = transport.DatagramSender(sock, args.endpoint, max_bytes)
        try:
            stats = run_stream(source, cfg, sink)
        finally:
            sock.close()

    print(
        f"processed {stats.processed}, dropped {stats.dropped}, skipped {stats.skipped}, "
        f"sent {stats.sent_cloud_messages} cloud + {stats.sent_wrist_messages} wrist messages "
        f"({stats.sent_bytes} bytes) in {stats.duration_s:.2f}s "
        f"({stats.achieved_hz:.2f} Hz)"
    )
    if stats.error:
        print(f"stream ended with error: {stats.error}", file=sys.stderr)
        return 1
    return 0


def cmd_recv(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state = transport.ReceiverState()
    max_bytes = protocol.message_size(args.max_points) + (1 << 12)
    snapshots = 0
    exposures = 0
    last_snapshot_frame = None
    error: str | None = None

    def snapshot_if_due():
        nonlocal snapshots, exposures, last_snapshot_frame
        latest = state.receive_latest(protocol.MSG_POINT_CLOUD)
        if latest is None or latest.frame_id == last_snapshot_frame:
            return
        last_snapshot_frame = latest.frame_id
        exposures += 1
        if args.snapshot_every > 0 and exposures % args.snapshot_every == 0:
            write_ply(out / f"recv_{latest.frame_id:06d}.ply", latest)
            snapshots += 1

    if args.mode == "stream":
        try:
            conn = transport.open_stream_connection(*args.endpoint, timeout=args.timeout)
        except OSError as exc:
            print(f"connect failed: {exc}", file=sys.stderr)
            return 1
        parser = transport.StreamParser(state, max_bytes)
        conn.settimeout(args.timeout)
        try:
            while True:
                try:
                    data = conn.recv(1 << 16)
                except socket.timeout:
                    break
                if not data:
                    break
                parser.feed(data)
                snapshot_if_due()
                if args.max_frames and exposures >= args.max_frames:
                    break
        except (OSError, transport.TransportError) as exc:
            error = str(exc)
        except KeyboardInterrupt:
            error = "interrupted"
        finally:
            parser.close()
            conn.close()
    else:
        sock = transport.open_datagram_socket(*args.endpoint)
        sock.settimeout(args.timeout)
        reassembler = transport.Reassembler(state, args.buffer_frames)
        try:
            while True:
                try:
                    datagram, _ = sock.recvfrom(1 << 16)
                except socket.timeout:
                    break
                reassembler.feed(datagram)
                snapshot_if_due()
                if args.max_frames and exposures >= args.max_frames:
                    break
        except OSError as exc:
            error = str(exc)
        except KeyboardInterrupt:
            error = "interrupted"
        finally:
            sock.close()

    c = state.counters
    print(
        f"received {c.received}, exposed {c.exposed}, stale {c.dropped_stale}, "
        f"corrupt {c.corrupt}, pending {c.pending}; wrote {snapshots} snapshots to {out}"
    )
    if error:
        print(f"receive ended with error: {error}", file=sys.stderr)
        return 1
    return 0


def cmd_bench(args) -> int:
    values = _config_values(args)
    framesets, rig, _ = _load_framesets(args)
    cfg = _pipeline_config(args, rig, values)
    framesets = list(framesets)

    if args.backend == "both":
        reports = {
            name: bench_mod.run_bench(framesets, cfg, backend=name)
            for name in kernels.available_backends()
        }
    else:
        reports = {args.backend: bench_mod.run_bench(framesets, cfg, backend=args.backend)}

    worst_rate = None
    for report in reports.values():
        print(bench_mod.format_report(report))
        print()
        worst_rate = report.achieved_hz if worst_rate is None else min(worst_rate, report.achieved_hz)
    if len(reports) == 2:
        fast, slow = (
            reports.get("native") or next(iter(reports.values())),
            reports["numpy"],
        )
        if fast.backend != slow.backend and slow.achieved_hz > 0:
            print(f"native/numpy speedup: {fast.achieved_hz / slow.achieved_hz:.2f}x")

    if args.csv:
        primary = reports.get("native") or next(iter(reports.values()))
        bench_mod.write_csv(primary, args.csv)
        print(f"per-frame CSV written to {args.csv}")

    if args.check_rate is not None:
        gated = reports.get(kernels.active_backend()) or next(iter(reports.values()))
        if gated.achieved_hz < args.check_rate:
            print(
                f"release gate FAILED: {gated.achieved_hz:.2f} Hz < {args.check_rate:g} Hz",
                file=sys.stderr,
            )
            return 1
        print(f"release gate passed: {gated.achieved_hz:.2f} Hz >= {args.check_rate:g} Hz")
    return 0


def cmd_export_ply(args) -> int:
    """Decode a capture of length-prefixed wire messages into PLY files."""
    data = Path(args.capture).read_bytes()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    offset = 0
    exported = 0
    skipped = 0
    while offset < len(data):
        if offset + transport.LENGTH_PREFIX.size > len(data):
            print("trailing bytes ignored (partial length prefix)", file=sys.stderr)
            break
        (length,) = transport.LENGTH_PREFIX.unpack_from(data, offset)
        offset += transport.LENGTH_PREFIX.size
        if offset + length > len(data):
            print("trailing bytes ignored (partial message)", file=sys.stderr)
            break
        try:
            message = protocol.decode(data[offset : offset + length])
        except protocol.WireDecodeError as exc:
            skipped += 1
            print(f"message at offset {offset} skipped: {exc}", file=sys.stderr)
        else:
            if isinstance(message, protocol.WristRgbMessage):
                skipped += 1
            else:
                write_ply(out / f"export_{message.frame_id:06d}.ply", message)
                exported += 1
        offset += length
    print(f"exported {exported} clouds, skipped {skipped} messages")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusecast",
        description="Multi-camera RGB-D fusion and point-cloud streaming toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="render a synthetic scene into a frameset archive")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--scene", type=Path, help="scene JSON (default: built-in tabletop)")
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--save-scene", type=Path, help="also write the scene JSON used")
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("replay", help="run the pipeline over an archive, write PLY per frame")
    p.add_argument("--archive", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_config_flags(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("serve", help="stream an archive or synthetic scene to an endpoint")
    p.add_argument("--archive", type=Path)
    p.add_argument("--scene", type=Path)
    p.add_argument("--frames", type=int, default=100, help="frame count for synthetic sources")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--endpoint", required=True, type=_endpoint)
    p.add_argument("--mode", choices=("stream", "datagram"), default="stream")
    p.add_argument("--accept-timeout", type=float, default=30.0)
    _add_config_flags(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("recv", help="receive a stream, keep latest, snapshot to PLY")
    p.add_argument("--endpoint", required=True, type=_endpoint)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--mode", choices=("stream", "datagram"), default="stream")
    p.add_argument("--snapshot-every", type=int, default=1, help="0 disables snapshots")
    p.add_argument("--max-frames", type=int, default=0, help="stop after N exposed frames")
    p.add_argument("--timeout", type=float, default=10.0)
    p.add_argument("--buffer-frames", type=int, default=2)
    p.add_argument("--max-points", type=int, default=75_000)
    p.set_defaults(func=cmd_recv)

    p = sub.add_parser("bench", help="benchmark the pipeline, optionally per backend")
    p.add_argument("--archive", type=Path)
    p.add_argument("--scene", type=Path)
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--backend",
        choices=("auto", "native", "numpy", "both"),
        default="auto",
        help="'both' compares every available backend",
    )
    p.add_argument("--csv", type=Path, help="write per-frame stage timings as CSV")
    p.add_argument("--check-rate", type=float, help="fail unless achieved rate >= HZ")
    _add_config_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export-ply", help="decode captured wire messages into PLY files")
    p.add_argument("--capture", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_export_ply)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ArchiveError, ConfigError, transport.TransportError, protocol.WireEncodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
