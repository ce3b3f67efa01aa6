"""Backend selection for the per-frame hot kernels.

Two interchangeable backends implement the four kernels (back-projection,
voxel binning, SOR mean-kNN distance, exact kNN):

* ``native``: the Cython extension ``fusecast.kernels._native``,
* ``numpy``: the vectorized fallback ``fusecast.kernels.numpy_impl``.

The native backend is preferred when its extension imported successfully.
Set ``FUSECAST_BACKEND=numpy|native|auto`` to override, or call
:func:`use_backend` at runtime (the benchmark does this to compare both).
Backends are bitwise interchangeable; the parity test suite enforces it.
"""

from __future__ import annotations

import os

import numpy as np

from . import numpy_impl

_IMPLS = {"numpy": numpy_impl}
try:
    from . import _native

    _IMPLS["native"] = _native
except ImportError:
    _native = None

_active_name = "numpy"
_active = numpy_impl


def available_backends() -> tuple[str, ...]:
    """Names of the importable backends, preferred first."""
    return tuple(name for name in ("native", "numpy") if name in _IMPLS)


def active_backend() -> str:
    """Name of the backend currently answering kernel calls."""
    return _active_name


def use_backend(name: str) -> str:
    """Switch the active backend; returns the previously active name."""
    global _active, _active_name
    if name == "auto":
        name = "native" if "native" in _IMPLS else "numpy"
    if name not in _IMPLS:
        raise ValueError(f"backend {name!r} is not available (have {available_backends()})")
    previous = _active_name
    _active_name = name
    _active = _IMPLS[name]
    return previous


def get_impl(name: str):
    """Raw backend module, for parity tests and benchmarks."""
    if name not in _IMPLS:
        raise ValueError(f"backend {name!r} is not available (have {available_backends()})")
    return _IMPLS[name]


def backproject(depth, color, mask, keep, fx, fy, cx, cy, depth_scale):
    depth = np.ascontiguousarray(depth, dtype=np.uint16)
    color = np.ascontiguousarray(color, dtype=np.uint8)
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    keep = np.ascontiguousarray(keep, dtype=np.uint8)
    return _active.backproject(depth, color, mask, keep, fx, fy, cx, cy, depth_scale)


def voxel_bin(positions, colors, leaf):
    positions = np.ascontiguousarray(positions, dtype=np.float32)
    colors = np.ascontiguousarray(colors, dtype=np.uint8)
    return _active.voxel_bin(positions, colors, float(leaf))


def mean_knn_distance(positions, k):
    positions = np.ascontiguousarray(positions, dtype=np.float32)
    return _active.mean_knn_distance(positions, int(k))


def knn(positions, queries, k, exclude=None):
    positions = np.ascontiguousarray(positions, dtype=np.float32)
    queries = np.ascontiguousarray(queries, dtype=np.float32)
    if exclude is not None:
        exclude = np.ascontiguousarray(exclude, dtype=np.int64)
    return _active.knn(positions, queries, int(k), exclude)


use_backend(os.environ.get("FUSECAST_BACKEND", "auto"))
