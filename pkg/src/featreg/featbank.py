"""Joint feature bank, shared PCA projection, and feature-volume assembly.

Tokens from the directly-encoded slices of both volumes are stacked into
one bank; a single PCA basis is fitted on that bank and then applied to
every slice of both stacks (interpolated ones included), so fixed and
moving features live in the same reduced space.  Reduced token grids are
finally reshaped onto the patch grid and trilinearly resampled to the
native voxel grid of the image they describe.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import SliceFeatureStack, TokenGrid
from .errors import ChannelMismatch, IncompleteStack, RankDeficient
from .volcore import FeatureVolume, Volume3D, resample_to_shape


@dataclass
class FeatureBank:
    """Stacked token rows: all encoded tokens of the fixed stack first,
    then all encoded tokens of the moving stack, in slice-then-token order."""

    rows: np.ndarray  # (R, D) float64
    n_fix: int        # leading rows that came from the fixed stack

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise ValueError(f"bank rows must be 2D, got shape {self.rows.shape}")
        if not 0 <= self.n_fix <= self.rows.shape[0]:
            raise ValueError("n_fix out of range")

    @property
    def D(self) -> int:
        return self.rows.shape[1]


@dataclass
class ProjectionModel:
    """Affine reduction t -> (t - mean) @ basis shared by both volumes."""

    mean: np.ndarray                # (D,)
    basis: np.ndarray               # (D, d), orthonormal columns
    explained_variance: np.ndarray  # (d,), non-increasing

    def __post_init__(self):
        self.mean = np.ascontiguousarray(self.mean, dtype=np.float64)
        self.basis = np.ascontiguousarray(self.basis, dtype=np.float64)
        self.explained_variance = np.ascontiguousarray(
            self.explained_variance, dtype=np.float64)
        if self.basis.ndim != 2 or self.mean.shape != (self.basis.shape[0],):
            raise ValueError("mean/basis shapes inconsistent")
        if self.explained_variance.shape != (self.basis.shape[1],):
            raise ValueError("explained_variance length must equal d")

    @property
    def D(self) -> int:
        return self.basis.shape[0]

    @property
    def d(self) -> int:
        return self.basis.shape[1]


def build_feature_bank(stack_fix: SliceFeatureStack,
                       stack_mov: SliceFeatureStack) -> FeatureBank:
    """Collect tokens of directly-encoded slices only, fixed then moving.

    Interpolated slices are convex combinations of encoded ones and add
    nothing to the bank; they are still projected later.
    """
    if stack_fix.D != stack_mov.D:
        raise ChannelMismatch(
            f"channel dims differ: fixed D={stack_fix.D}, moving D={stack_mov.D}")

    def encoded_rows(stack: SliceFeatureStack) -> np.ndarray:
        grids = [stack.slices[z].tokens for z in np.flatnonzero(stack.encoded_mask)]
        return np.concatenate(grids, axis=0)

    fix_rows = encoded_rows(stack_fix)
    mov_rows = encoded_rows(stack_mov)
    return FeatureBank(np.concatenate([fix_rows, mov_rows], axis=0),
                       n_fix=fix_rows.shape[0])


def fit_pca(bank: FeatureBank, d: int) -> ProjectionModel:
    """Fit the shared d-dimensional PCA basis of the centered bank.

    The basis columns are the top-d right singular vectors ordered by
    decreasing singular value, with a deterministic sign: the entry of
    largest absolute value in each column is made positive (ties keep
    the lowest index).  When the data rank is below d the tail columns
    complete an orthonormal set and carry zero variance.
    """
    rows = bank.rows
    R, D = rows.shape
    if R < 2:
        raise RankDeficient(f"need at least 2 rows to fit a basis, got {R}")
    if not 1 <= d <= min(D, R):
        raise ValueError(f"d={d} must satisfy 1 <= d <= min(D={D}, rows={R})")

    mean = rows.mean(axis=0)
    centered = rows - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    basis = vt[:d].T.copy()
    for j in range(d):
        col = basis[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            basis[:, j] = -col
    explained = (s[:d] ** 2) / (R - 1)
    return ProjectionModel(mean, basis, explained)


def project_rows(rows: np.ndarray, model: ProjectionModel) -> np.ndarray:
    return (rows - model.mean) @ model.basis


def project_stack(stack: SliceFeatureStack, model: ProjectionModel) -> SliceFeatureStack:
    """Apply the shared projection slice-wise; grid shape is unchanged."""
    if stack.D != model.D:
        raise ChannelMismatch(
            f"stack channel dim {stack.D} != projection input dim {model.D}")
    out = [TokenGrid(g.grid_w, g.grid_h, model.d, project_rows(g.tokens, model))
           for g in stack.slices]
    return SliceFeatureStack(stack.Z, out, stack.encoded_mask.copy(),
                             stack.stride_k, stack.encoder_id)


def assemble_feature_volume(reduced_stack: SliceFeatureStack,
                            target: Volume3D) -> FeatureVolume:
    """Reshape tokens onto the patch grid and resample to target's voxel grid.

    Slice z contributes a (grid_w, grid_h, d) plane; planes stack along z
    and the result is trilinearly resampled (per channel) to target.dims
    with endpoint-aligned coordinates.  The output inherits the target's
    spacing.
    """
    if not reduced_stack.encoded_mask.all():
        raise IncompleteStack(
            "stack still has missing slices; interpolate before assembling")
    gw, gh, d = reduced_stack.grid_w, reduced_stack.grid_h, reduced_stack.D
    planes = [g.tokens.reshape(gh, gw, d).transpose(1, 0, 2)
              for g in reduced_stack.slices]
    grid = np.ascontiguousarray(np.stack(planes, axis=2))  # (gw, gh, Z, d)
    fv = FeatureVolume(grid, target.spacing)
    out = resample_to_shape(fv, target.dims, interp="linear")
    return FeatureVolume(out.data, target.spacing)
