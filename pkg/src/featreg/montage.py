"""Binary PGM renderings of the mid-axial slice for quick visual checks.

Three modes: a 16-voxel checkerboard of two volumes (jointly normalized
so tiles are comparable), an absolute-difference map anchored at zero,
and a log-Jacobian map of a displacement field (borders take J = 1).
"""
from __future__ import annotations

import numpy as np

from .errors import DimsMismatch
from .volcore import DisplacementField, Volume3D

TILE = 16
_LOG_CLAMP = 1e-6


def write_pgm(path: str, img: np.ndarray) -> None:
    """Write a 2D uint8 array as binary PGM (P5); rows run along y."""
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("write_pgm expects a 2D uint8 array")
    w, h = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img.T).tobytes())


def _mid_slice(vol: Volume3D) -> np.ndarray:
    return vol.data[:, :, vol.dims[2] // 2]


def _to_uint8(img: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi <= lo:
        return np.zeros(img.shape, dtype=np.uint8)
    scaled = (img - lo) / (hi - lo) * 255.0
    return np.clip(np.round(scaled), 0, 255).astype(np.uint8)


def montage_checker(a: Volume3D, b: Volume3D) -> np.ndarray:
    """Alternate 16-voxel tiles of both mid slices, jointly normalized."""
    if a.dims != b.dims:
        raise DimsMismatch(f"volume dims differ: {a.dims} vs {b.dims}")
    sa, sb = _mid_slice(a), _mid_slice(b)
    x, y = np.meshgrid(np.arange(sa.shape[0]), np.arange(sa.shape[1]),
                       indexing="ij")
    use_b = ((x // TILE) + (y // TILE)) % 2 == 1
    mix = np.where(use_b, sb, sa)
    lo = float(min(sa.min(), sb.min()))
    hi = float(max(sa.max(), sb.max()))
    return _to_uint8(mix, lo, hi)


def montage_diff(a: Volume3D, b: Volume3D) -> np.ndarray:
    """Absolute mid-slice difference; zero maps to black, peak to white."""
    if a.dims != b.dims:
        raise DimsMismatch(f"volume dims differ: {a.dims} vs {b.dims}")
    d = np.abs(_mid_slice(a) - _mid_slice(b))
    return _to_uint8(d, 0.0, float(d.max()))


def _jacobian_map(disp: DisplacementField) -> np.ndarray:
    """det(I + grad phi) on the full grid; border voxels carry 1.0."""
    dims = disp.dims
    det = np.ones(dims)
    if min(dims) < 3:
        return det
    vec = disp.vectors
    jac = np.empty(tuple(n - 2 for n in dims) + (3, 3))
    for a in range(3):
        hi = tuple(slice(2, None) if i == a else slice(1, -1) for i in range(3))
        lo = tuple(slice(None, -2) if i == a else slice(1, -1) for i in range(3))
        jac[..., :, a] = 0.5 * (vec[hi] - vec[lo])
    for c in range(3):
        jac[..., c, c] += 1.0
    det[1:-1, 1:-1, 1:-1] = np.linalg.det(jac)
    return det


def montage_logj(a: Volume3D, disp: DisplacementField) -> np.ndarray:
    """Mid-slice log |J| of the field, min-max rescaled; constant maps to 128."""
    if a.dims != disp.dims:
        raise DimsMismatch(f"volume dims {a.dims} != field dims {disp.dims}")
    det = _jacobian_map(disp)
    logj = np.log(np.maximum(np.abs(det), _LOG_CLAMP))
    sl = logj[:, :, disp.dims[2] // 2]
    lo, hi = float(sl.min()), float(sl.max())
    if hi <= lo:
        return np.full(sl.shape, 128, dtype=np.uint8)
    return _to_uint8(sl, lo, hi)
