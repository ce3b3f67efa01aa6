"""Real-time multi-camera RGB-D fusion and point-cloud streaming.

Per-camera depth images are back-projected through their pinhole
intrinsics with semantic mask filtering, fused into the robot base frame
via extrinsic transforms, reduced (crop, voxel grid, statistical outlier
removal) under a hard point budget, serialized into a compact binary
wire format, and streamed at a controlled rate to a latest-frame-wins
receiver, with a wrist-camera RGB side channel.
"""

from .archive import ArchiveError, ArchiveReader, ArchiveWriter, write_archive
from .bench import BenchReport, bandwidth_bytes_per_s, compare_backends, run_bench
from .clock import MonotonicClock, SimulatedClock
from .config import ConfigError, build_pipeline_config, load_config_values
from .filters import (
    Aabb,
    FilterParams,
    PointIndex,
    crop_aabb,
    enforce_budget,
    sor_filter,
    voxel_downsample,
    voxel_downsample_with_map,
)
from .geometry import (
    FrameMismatchError,
    Intrinsics,
    PointCloud,
    RgbdFrame,
    RigidTransform,
    back_project,
    merge,
    transform,
)
from .kernels import active_backend, available_backends, use_backend
from .pipeline import (
    CameraRig,
    FrameSet,
    FramesetError,
    PipelineConfig,
    RigCamera,
    StageTimings,
    StreamStats,
    paced_source,
    process_frameset,
    run_stream,
)
from .plyio import write_ply
from .protocol import (
    DecodeErrorKind,
    WireDecodeError,
    WireEncodeError,
    WristRgbMessage,
    decode,
    encode_cloud,
    encode_wrist,
    message_size,
)
from .scene import (
    DEFAULT_CROP,
    Box,
    Cylinder,
    HorizontalRect,
    NoiseModel,
    SceneRenderer,
    SyntheticScene,
    default_rig,
    default_scene,
    load_scene,
    render_synthetic,
    save_scene,
)
from .transport import (
    DatagramSender,
    LossyLink,
    Reassembler,
    ReceiverState,
    StreamParser,
    StreamSender,
    TransportConfig,
    TransportError,
    fragment_message,
    simulate_link,
)

__version__ = "0.1.0"
