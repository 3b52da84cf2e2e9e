"""Backend dispatch for the numeric kernels.

At import time the compiled extension is preferred; if it is missing (no
compiler at install time) or the environment variable ``FEATREG_BACKEND``
is set to ``numpy``, the pure-numpy implementations take over.  Both
backends implement identical clamping and tie-breaking rules, and each
one is deterministic run to run for any thread count; across backends
values agree to floating-point roundoff.
"""
from __future__ import annotations

import os

import numpy as np

from . import _numpy_kernels

_native = None
if os.environ.get("FEATREG_BACKEND", "").lower() != "numpy":
    try:
        from . import _native  # type: ignore[no-redef]
    except ImportError:
        _native = None

_num_threads = 1


def backend_name() -> str:
    """Return which implementation is active: "native" or "numpy"."""
    return "numpy" if _native is None else "native"


def set_num_threads(n: int) -> None:
    """Set the worker count used by the native backend (numpy ignores it)."""
    if n < 1:
        raise ValueError("thread count must be >= 1")
    global _num_threads
    _num_threads = int(n)


def get_num_threads() -> int:
    return _num_threads


def sample_points_linear(src: np.ndarray, pts: np.ndarray) -> np.ndarray:
    src = np.ascontiguousarray(src, dtype=np.float64)
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    if _native is not None:
        return _native.sample_points_linear(src, pts)
    return _numpy_kernels.sample_points_linear(src, pts)


def warp_linear(src: np.ndarray, disp: np.ndarray) -> np.ndarray:
    src = np.ascontiguousarray(src, dtype=np.float64)
    disp = np.ascontiguousarray(disp, dtype=np.float64)
    if _native is not None:
        return _native.warp_linear(src, disp, _num_threads)
    return _numpy_kernels.warp_linear(src, disp)


def mse_value_and_grad(f_fix: np.ndarray, f_mov: np.ndarray,
                       disp: np.ndarray) -> tuple[float, np.ndarray]:
    f_fix = np.ascontiguousarray(f_fix, dtype=np.float64)
    f_mov = np.ascontiguousarray(f_mov, dtype=np.float64)
    disp = np.ascontiguousarray(disp, dtype=np.float64)
    if _native is not None:
        return _native.mse_value_and_grad(f_fix, f_mov, disp, _num_threads)
    return _numpy_kernels.mse_value_and_grad(f_fix, f_mov, disp)


def cost_volume(f_fix: np.ndarray, f_mov: np.ndarray, offsets: np.ndarray,
                init: np.ndarray | None = None) -> np.ndarray:
    f_fix = np.ascontiguousarray(f_fix, dtype=np.float64)
    f_mov = np.ascontiguousarray(f_mov, dtype=np.float64)
    offsets = np.ascontiguousarray(offsets, dtype=np.float64)
    if init is not None:
        init = np.ascontiguousarray(init, dtype=np.float64)
    if _native is not None:
        return _native.cost_volume(f_fix, f_mov, offsets, init, _num_threads)
    return _numpy_kernels.cost_volume(f_fix, f_mov, offsets, init)


def coupled_argmin(cost: np.ndarray, offsets: np.ndarray,
                   target: np.ndarray | None = None,
                   theta: float = 0.0) -> np.ndarray:
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    offsets = np.ascontiguousarray(offsets, dtype=np.float64)
    if target is not None:
        target = np.ascontiguousarray(target, dtype=np.float64)
    if _native is not None:
        return _native.coupled_argmin(cost, offsets, target, theta, _num_threads)
    return _numpy_kernels.coupled_argmin(cost, offsets, target, theta)
