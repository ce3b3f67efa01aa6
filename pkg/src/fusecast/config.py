"""Pipeline configuration files: flat JSON, flags override file values.

Recognized keys (all optional, defaults shown):

    crop_min         [0.2, -0.5, -0.05]
    crop_max         [0.95, 0.5, 0.55]
    voxel_leaf       0.003
    sor_k            20
    sor_std_ratio    2.0
    point_budget     75000
    target_rate_hz   10.0
    keep_classes     [0]
"""

from __future__ import annotations

import json

from .filters import Aabb, FilterParams
from .pipeline import CameraRig, PipelineConfig
from .scene import DEFAULT_CROP

CONFIG_KEYS = {
    "crop_min",
    "crop_max",
    "voxel_leaf",
    "sor_k",
    "sor_std_ratio",
    "point_budget",
    "target_rate_hz",
    "keep_classes",
}


class ConfigError(ValueError):
    """Configuration file is malformed."""


def load_config_values(path) -> dict:
    """Parse and validate a config file into a flat dict."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    unknown = set(data) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return data


def build_pipeline_config(rig: CameraRig, values: dict | None = None, **overrides) -> PipelineConfig:
    """Merge defaults, config-file values, and explicit overrides.

    Overrides passed as keyword arguments (typically from CLI flags) win
    over the config file; None overrides are ignored.
    """
    merged = dict(values or {})
    for key, value in overrides.items():
        if value is not None:
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown config override {key!r}")
            merged[key] = value
    crop = Aabb(
        tuple(merged.get("crop_min", DEFAULT_CROP.min)),
        tuple(merged.get("crop_max", DEFAULT_CROP.max)),
    )
    params = FilterParams(
        voxel_leaf=float(merged.get("voxel_leaf", FilterParams.voxel_leaf)),
        sor_k=int(merged.get("sor_k", FilterParams.sor_k)),
        sor_std_ratio=float(merged.get("sor_std_ratio", FilterParams.sor_std_ratio)),
        point_budget=int(merged.get("point_budget", FilterParams.point_budget)),
    )
    return PipelineConfig(
        rig=rig,
        crop=crop,
        filter=params,
        target_rate_hz=float(merged.get("target_rate_hz", 10.0)),
        keep_classes=frozenset(int(c) for c in merged.get("keep_classes", (0,))),
    )
