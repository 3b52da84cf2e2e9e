"""Voxel-grid types plus interpolation, warping and shape resampling.

Conventions used throughout the package:

* Volumes are (W, H, Z) arrays indexed ``[x, y, z]``; axial slices are the
  (W, H) planes at fixed z.
* Displacement fields are backward warps in voxel units of their own grid:
  ``output(x) = input(x + phi(x))``.
* Samplers clamp coordinates to ``[0, dim-1]`` per axis (border
  replication), which keeps every candidate displacement well-defined.
* Resampling is endpoint-aligned: output index ``i`` reads source
  coordinate ``i * (n_src - 1) / (n_dst - 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimsMismatch

Dims = tuple[int, int, int]


@dataclass(frozen=True)
class Spacing:
    """Physical voxel size in millimeters along x, y, z."""

    sx: float
    sy: float
    sz: float

    def __post_init__(self):
        for name, v in (("sx", self.sx), ("sy", self.sy), ("sz", self.sz)):
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"spacing {name}={v} must be finite and > 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.sx, self.sy, self.sz], dtype=np.float64)


def _check_grid(data: np.ndarray, ndim: int, name: str) -> np.ndarray:
    if data.ndim != ndim:
        raise ValueError(f"{name} expects a {ndim}D array, got shape {data.shape}")
    if any(n < 1 for n in data.shape[:3]):
        raise ValueError(f"{name} dims must be positive, got {data.shape}")
    return data


@dataclass
class Volume3D:
    """Scalar voxel grid with anisotropic spacing."""

    data: np.ndarray  # (W, H, Z) float64
    spacing: Spacing = field(default_factory=lambda: Spacing(1.0, 1.0, 1.0))

    def __post_init__(self):
        self.data = np.ascontiguousarray(
            _check_grid(np.asarray(self.data), 3, "Volume3D"), dtype=np.float64)
        if not np.isfinite(self.data).all():
            raise ValueError("Volume3D samples must all be finite")

    @property
    def dims(self) -> Dims:
        return self.data.shape  # type: ignore[return-value]


@dataclass
class LabelVolume:
    """Integer label grid; label 0 is reserved for background."""

    data: np.ndarray  # (W, H, Z) int64
    spacing: Spacing = field(default_factory=lambda: Spacing(1.0, 1.0, 1.0))

    def __post_init__(self):
        arr = _check_grid(np.asarray(self.data), 3, "LabelVolume")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"LabelVolume requires integer data, got {arr.dtype}")
        self.data = np.ascontiguousarray(arr, dtype=np.int64)
        if self.data.min(initial=0) < 0:
            raise ValueError("labels must be non-negative")

    @property
    def dims(self) -> Dims:
        return self.data.shape  # type: ignore[return-value]

    def labels(self) -> np.ndarray:
        """Sorted foreground labels present in the volume."""
        present = np.unique(self.data)
        return present[present > 0]


@dataclass
class DisplacementField:
    """Dense per-voxel 3-vector field, components in voxels of this grid."""

    vectors: np.ndarray  # (W, H, Z, 3) float64
    spacing: Spacing = field(default_factory=lambda: Spacing(1.0, 1.0, 1.0))

    def __post_init__(self):
        arr = np.asarray(self.vectors)
        if arr.ndim != 4 or arr.shape[3] != 3:
            raise ValueError(f"DisplacementField expects (W,H,Z,3), got {arr.shape}")
        self.vectors = np.ascontiguousarray(arr, dtype=np.float64)
        if not np.isfinite(self.vectors).all():
            raise ValueError("displacement components must all be finite")

    @property
    def dims(self) -> Dims:
        return self.vectors.shape[:3]  # type: ignore[return-value]

    @classmethod
    def zeros(cls, dims: Dims, spacing: Spacing | None = None) -> "DisplacementField":
        return cls(np.zeros(dims + (3,)), spacing or Spacing(1.0, 1.0, 1.0))


@dataclass
class FeatureVolume:
    """Multi-channel voxel grid holding reduced feature vectors."""

    data: np.ndarray  # (W, H, Z, C) float64
    spacing: Spacing = field(default_factory=lambda: Spacing(1.0, 1.0, 1.0))

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 4:
            raise ValueError(f"FeatureVolume expects (W,H,Z,C), got {arr.shape}")
        self.data = np.ascontiguousarray(arr, dtype=np.float64)
        if not np.isfinite(self.data).all():
            raise ValueError("feature samples must all be finite")

    @property
    def dims(self) -> Dims:
        return self.data.shape[:3]  # type: ignore[return-value]

    @property
    def channels(self) -> int:
        return self.data.shape[3]


GridValue = Volume3D | LabelVolume | FeatureVolume


def sample_linear(vol: Volume3D, p) -> float:
    """Trilinear sample at continuous voxel coordinate ``p``, clamped."""
    pts = np.asarray(p, dtype=np.float64).reshape(1, 3)
    src = vol.data[..., np.newaxis]
    return float(kernels.sample_points_linear(src, pts)[0, 0])


def sample_nearest(vol: LabelVolume, p) -> int:
    """Nearest-node label at ``p``; exact .5 ties round toward the larger index."""
    idx = _nearest_indices(np.asarray(p, dtype=np.float64).reshape(1, 3), vol.dims)
    return int(vol.data[idx[0, 0], idx[0, 1], idx[0, 2]])


def _nearest_indices(pts: np.ndarray, dims: Dims) -> np.ndarray:
    """Per-axis clamped round-half-up indices for an (N, 3) coordinate array."""
    out = np.empty(pts.shape, dtype=np.int64)
    for a in range(3):
        c = np.clip(pts[:, a], 0.0, dims[a] - 1.0)
        out[:, a] = np.minimum(np.floor(c + 0.5), dims[a] - 1).astype(np.int64)
    return out


def warp_volume(vol: GridValue, disp: DisplacementField, interp: str = "linear") -> GridValue:
    """Backward-warp ``vol`` by ``disp``: output(x) = vol(x + phi(x)).

    The output lives on the input grid. FeatureVolumes warp all channels
    with the same field; LabelVolumes only support nearest interpolation.
    """
    if disp.dims != vol.dims:
        raise DimsMismatch(f"field dims {disp.dims} != volume dims {vol.dims}")
    if interp not in ("linear", "nearest"):
        raise ValueError(f"unknown interpolation '{interp}'")

    if isinstance(vol, LabelVolume):
        if interp != "nearest":
            raise ValueError("LabelVolume warping requires nearest interpolation")
        warped = _warp_nearest(vol.data, disp.vectors)
        return LabelVolume(warped, vol.spacing)

    src = vol.data if isinstance(vol, FeatureVolume) else vol.data[..., np.newaxis]
    if interp == "linear":
        out = kernels.warp_linear(src, disp.vectors)
    else:
        out = _warp_nearest(src, disp.vectors)
    if isinstance(vol, FeatureVolume):
        return FeatureVolume(out, vol.spacing)
    return Volume3D(out[..., 0], vol.spacing)


def _warp_nearest(src: np.ndarray, disp: np.ndarray) -> np.ndarray:
    """Nearest-neighbor backward warp; works for any dtype (single gather)."""
    dims = src.shape[:3]
    base = np.stack(np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims),
                                indexing="ij"), axis=-1)
    pts = (base + disp).reshape(-1, 3)
    idx = _nearest_indices(pts, dims)
    out = src[idx[:, 0], idx[:, 1], idx[:, 2]]
    return np.ascontiguousarray(out.reshape(src.shape))


def _axis_coords(n_src: int, n_dst: int) -> np.ndarray:
    """Endpoint-aligned source coordinates for one axis."""
    if n_dst == 1:
        return np.array([(n_src - 1) / 2.0])
    return np.arange(n_dst, dtype=np.float64) * (n_src - 1) / (n_dst - 1)


def _rescaled_spacing(spacing: Spacing, old: Dims, new: Dims) -> Spacing:
    """Preserve the endpoint-aligned physical extent (n-1)*s per axis."""
    vals = []
    for s, n_src, n_dst in zip(spacing.as_array(), old, new):
        if n_src > 1 and n_dst > 1:
            vals.append(s * (n_src - 1) / (n_dst - 1))
        else:
            # degenerate axis: keep the per-voxel extent n*s instead
            vals.append(s * n_src / n_dst)
    return Spacing(*vals)


def _resample_axis_linear(arr: np.ndarray, axis: int, n_dst: int) -> np.ndarray:
    n_src = arr.shape[axis]
    if n_dst == n_src:
        return arr
    c = _axis_coords(n_src, n_dst)
    i0 = np.minimum(np.floor(c).astype(np.int64), max(n_src - 2, 0))
    f = c - i0
    i1 = np.minimum(i0 + 1, n_src - 1)
    lo = np.take(arr, i0, axis=axis)
    hi = np.take(arr, i1, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = n_dst
    f = f.reshape(shape)
    return lo * (1.0 - f) + hi * f


def _resample_axis_nearest(arr: np.ndarray, axis: int, n_dst: int) -> np.ndarray:
    n_src = arr.shape[axis]
    if n_dst == n_src:
        return arr
    c = _axis_coords(n_src, n_dst)
    idx = np.minimum(np.floor(c + 0.5), n_src - 1).astype(np.int64)
    return np.take(arr, idx, axis=axis)


def resample_to_shape(vol: GridValue, new_dims: Dims, interp: str = "linear") -> GridValue:
    """Resample to ``new_dims`` on an endpoint-aligned grid.

    Trilinear resampling is separable, so each axis is interpolated in
    turn; labels always use nearest lookups. Spacing is rescaled so the
    physical extent is preserved.
    """
    new_dims = tuple(int(n) for n in new_dims)
    if len(new_dims) != 3 or any(n < 1 for n in new_dims):
        raise ValueError(f"new_dims must be three positive integers, got {new_dims}")

    spacing = _rescaled_spacing(vol.spacing, vol.dims, new_dims)
    if new_dims == tuple(vol.dims):
        spacing = vol.spacing  # identity: keep spacing bit-for-bit

    if isinstance(vol, LabelVolume):
        out = vol.data
        for axis, n in enumerate(new_dims):
            out = _resample_axis_nearest(out, axis, n)
        return LabelVolume(np.ascontiguousarray(out), spacing)

    if interp not in ("linear", "nearest"):
        raise ValueError(f"unknown interpolation '{interp}'")
    step = _resample_axis_linear if interp == "linear" else _resample_axis_nearest
    out = vol.data
    for axis, n in enumerate(new_dims):
        out = step(out, axis, n)
    out = np.ascontiguousarray(out)
    if isinstance(vol, FeatureVolume):
        return FeatureVolume(out, spacing)
    return Volume3D(out, spacing)


def resample_field(disp: DisplacementField, new_dims: Dims,
                   scale_vectors: bool = True) -> DisplacementField:
    """Resample a displacement field to a new grid.

    Component values are rescaled per axis by the endpoint-aligned grid
    ratio so they stay expressed in voxels of the *output* grid.
    """
    new_dims = tuple(int(n) for n in new_dims)
    out = disp.vectors
    for axis, n in enumerate(new_dims):
        out = _resample_axis_linear(out, axis, n)
    # copy so the in-place component rescale below never touches the input
    out = np.array(out, dtype=np.float64)
    if scale_vectors:
        for a in range(3):
            n_src, n_dst = disp.dims[a], new_dims[a]
            if n_src > 1:
                out[..., a] *= (n_dst - 1) / (n_src - 1)
    spacing = _rescaled_spacing(disp.spacing, disp.dims, new_dims)
    if new_dims == tuple(disp.dims):
        spacing = disp.spacing
    return DisplacementField(out, spacing)
