"""Synthetic registration cases with exact ground-truth fields.

A base volume of Gaussian blobs (distinct labels, non-overlapping) over
a faint smooth texture plays the moving image; the fixed image is the
base backward-warped by a smooth random displacement field.  With that
construction the truth field is exactly the displacement that registers
moving onto fixed, and warping the moving labels by it reproduces the
fixed labels bitwise, so recovered-versus-truth comparisons are
well-posed.

Fields are drawn by rejection until the minimum interior Jacobian
determinant exceeds 0.1, so the truth warp is always fold-free.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import RejectionExhausted
from .volcore import DisplacementField, LabelVolume, Spacing, Volume3D, warp_volume

MIN_JACOBIAN = 0.1
MAX_DRAWS = 100
TEXTURE_SIGMA = 3.0
TEXTURE_AMP = 0.1


@dataclass
class SynthCase:
    fix: Volume3D
    mov: Volume3D
    fix_labels: LabelVolume
    mov_labels: LabelVolume
    truth: DisplacementField


def _min_interior_jacobian(vec: np.ndarray) -> float:
    """Smallest det(I + grad u) over interior voxels, central differences."""
    jac = np.empty(tuple(n - 2 for n in vec.shape[:3]) + (3, 3))
    for a in range(3):
        hi = tuple(slice(2, None) if i == a else slice(1, -1) for i in range(3))
        lo = tuple(slice(None, -2) if i == a else slice(1, -1) for i in range(3))
        jac[..., :, a] = 0.5 * (vec[hi] - vec[lo])
    for c in range(3):
        jac[..., c, c] += 1.0
    return float(np.linalg.det(jac).min())


def _draw_field(rng: np.random.Generator, dims, amplitude: float,
                smoothness: float) -> np.ndarray:
    """One smooth random field scaled to the requested peak amplitude.

    Periodic smoothing keeps the field statistics homogeneous; with
    replicated borders the peak always sits in a border artifact and the
    normalization starves the interior of motion.
    """
    vec = np.empty(dims + (3,))
    for c in range(3):
        vec[..., c] = gaussian_filter(rng.standard_normal(dims),
                                      sigma=smoothness, mode="wrap")
    peak = float(np.abs(vec).max())
    if peak > 0:
        vec *= amplitude / peak
    return vec


def smooth_random_field(rng: np.random.Generator, dims, amplitude: float,
                        smoothness: float) -> np.ndarray:
    """Fold-free smooth field (min interior Jacobian > 0.1) by rejection."""
    if amplitude == 0.0:
        return np.zeros(dims + (3,))
    for _ in range(MAX_DRAWS):
        vec = _draw_field(rng, dims, amplitude, smoothness)
        if _min_interior_jacobian(vec) > MIN_JACOBIAN:
            return vec
    raise RejectionExhausted(
        f"no field with min Jacobian > {MIN_JACOBIAN} in {MAX_DRAWS} draws "
        f"(amplitude {amplitude}, smoothness {smoothness})")


def _place_blobs(rng: np.random.Generator, dims, n_blobs: int):
    """Non-overlapping blob centers and radii, kept clear of the borders.

    Radii span [5, 9] voxels on 64-cubes and shrink proportionally on
    smaller grids so a handful of blobs always fits.
    """
    r_hi = min(9.0, min(dims) / 7.0)
    r_lo = max(2.0, r_hi - 4.0)
    placed: list[tuple[np.ndarray, float]] = []
    for _ in range(n_blobs):
        for _attempt in range(200):
            radius = float(rng.uniform(r_lo, r_hi))
            margin = radius + 3.0
            if any(2 * margin >= n for n in dims):
                raise RejectionExhausted(
                    f"volume {dims} too small for blob radius {radius:.1f}")
            center = np.array([rng.uniform(margin, n - 1 - margin) for n in dims])
            if all(np.linalg.norm(center - c) > radius + r + 2.0
                   for c, r in placed):
                placed.append((center, radius))
                break
        else:
            raise RejectionExhausted(
                f"could not place {n_blobs} non-overlapping blobs in {dims}")
    return placed


def generate_case(seed: int, dims=(64, 64, 64), n_blobs: int = 5,
                  warp_amplitude: float = 4.0, warp_smoothness: float = 8.0,
                  spacing: Spacing | None = None) -> SynthCase:
    """Build one seeded case: blobs, truth field, and the warped pair."""
    dims = tuple(int(n) for n in dims)
    if any(n < 16 for n in dims):
        raise ValueError(f"dims must be at least 16 per axis, got {dims}")
    if n_blobs < 1:
        raise ValueError("n_blobs must be >= 1")
    spacing = spacing or Spacing(1.0, 1.0, 1.0)
    rng = np.random.Generator(np.random.PCG64(seed))

    texture = gaussian_filter(rng.standard_normal(dims), sigma=TEXTURE_SIGMA,
                              mode="nearest")
    peak = float(np.abs(texture).max())
    base = TEXTURE_AMP * texture / peak if peak > 0 else texture
    labels = np.zeros(dims, dtype=np.int64)

    coords = np.stack(np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims),
                                  indexing="ij"), axis=-1)
    for i, (center, radius) in enumerate(_place_blobs(rng, dims, n_blobs), start=1):
        amp = float(rng.uniform(0.5, 1.0))
        d2 = np.sum((coords - center) ** 2, axis=-1)
        base = base + amp * np.exp(-d2 / (2.0 * (radius / 2.0) ** 2))
        labels[d2 <= radius * radius] = i

    truth_vec = smooth_random_field(rng, dims, warp_amplitude, warp_smoothness)

    mov = Volume3D(base, spacing)
    mov_labels = LabelVolume(labels, spacing)
    truth = DisplacementField(truth_vec, spacing)
    fix = warp_volume(mov, truth, interp="linear")
    fix_labels = warp_volume(mov_labels, truth, interp="nearest")
    return SynthCase(fix, mov, fix_labels, mov_labels, truth)
