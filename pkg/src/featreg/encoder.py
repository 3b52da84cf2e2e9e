"""Per-slice patch-token encoding with stride-k skipping.

A volume is decomposed into axial (W, H) slices.  Every k-th slice (and
always the last one) is passed through a slice encoder that summarizes
each non-overlapping patch as a fixed-length descriptor; skipped slices
are filled in afterwards by linear interpolation of the token grids
along z.

The built-in "desk" encoder needs no external model: each patch becomes
a 20-channel descriptor of its normalized intensities (a 4x4 adaptive
average pool), plus patch mean, population std and mean absolute x/y
forward differences.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MissingBoundarySlice, SliceTooSmall
from .volcore import Volume3D

DESK_ENCODER_ID = "desk-v1"
DESK_CHANNELS = 20


@dataclass
class TokenGrid:
    """Patch-token matrix of one slice: N = grid_w * grid_h rows of dim D.

    Token n corresponds to patch (gx, gy) with n = gy * grid_w + gx, so
    tokens walk the patch grid row-major with gx fastest.
    """

    grid_w: int
    grid_h: int
    D: int
    tokens: np.ndarray  # (N, D) float64

    def __post_init__(self):
        if self.grid_w < 1 or self.grid_h < 1 or self.D < 1:
            raise ValueError("TokenGrid dims must be positive")
        self.tokens = np.ascontiguousarray(self.tokens, dtype=np.float64)
        want = (self.grid_w * self.grid_h, self.D)
        if self.tokens.shape != want:
            raise ValueError(
                f"token matrix shape {self.tokens.shape} != expected {want}")
        if not np.isfinite(self.tokens).all():
            raise ValueError("token entries must all be finite")


@dataclass
class EncoderConfig:
    stride_k: int = 1
    patch_size: int = 4
    encoder_id: str = DESK_ENCODER_ID

    def __post_init__(self):
        if self.stride_k < 1:
            raise ValueError(f"stride_k must be >= 1, got {self.stride_k}")
        if self.patch_size < 1:
            raise ValueError(f"patch_size must be >= 1, got {self.patch_size}")


@dataclass
class SliceFeatureStack:
    """All per-slice token grids of one volume plus the encoded/missing mask."""

    Z: int
    slices: list
    encoded_mask: np.ndarray  # (Z,) bool
    stride_k: int
    encoder_id: str = DESK_ENCODER_ID

    def __post_init__(self):
        if self.Z < 1:
            raise ValueError("stack needs at least one slice")
        if len(self.slices) != self.Z:
            raise ValueError(f"expected {self.Z} slices, got {len(self.slices)}")
        self.encoded_mask = np.asarray(self.encoded_mask, dtype=bool).reshape(self.Z)
        first = self.slices[0]
        for g in self.slices[1:]:
            if (g.grid_w, g.grid_h, g.D) != (first.grid_w, first.grid_h, first.D):
                raise ValueError("all slices must share grid shape and channel dim")
        if self.stride_k < 1:
            raise ValueError("stride_k must be >= 1")

    @property
    def grid_w(self) -> int:
        return self.slices[0].grid_w

    @property
    def grid_h(self) -> int:
        return self.slices[0].grid_h

    @property
    def D(self) -> int:
        return self.slices[0].D

    @property
    def n_encoded(self) -> int:
        return int(self.encoded_mask.sum())

    def tokens_array(self) -> np.ndarray:
        """All token grids stacked as (Z, N, D)."""
        return np.stack([g.tokens for g in self.slices], axis=0)


def desk_encode(slice_2d: np.ndarray, patch_size: int) -> TokenGrid:
    """Deterministic patch descriptors for one (W, H) slice; D = 20.

    The slice is min-max normalized to [0, 1] (a constant slice maps to
    all zeros), cut into non-overlapping patch_size^2 patches (remainder
    rows/cols truncated), and each patch is summarized as:

    * channels 0..15: adaptive 4x4 average pool of the patch, cell
      (cx, cy) at index cy * 4 + cx covering pixel range
      floor(c*P/4) .. ceil((c+1)*P/4) per axis;
    * channel 16: patch mean; channel 17: population std;
    * channels 18/19: mean absolute forward difference along x / y
      (0.0 when the patch has no pairs along that axis).
    """
    arr = np.asarray(slice_2d, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D slice, got shape {arr.shape}")
    P = int(patch_size)
    w, h = arr.shape
    if w < P or h < P:
        raise SliceTooSmall(f"slice {w}x{h} smaller than patch size {P}")

    lo = float(arr.min())
    hi = float(arr.max())
    norm = (arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr)

    gw, gh = w // P, h // P
    # blocks[gx, px, gy, py]: pixel (gx*P + px, gy*P + py)
    blocks = norm[:gw * P, :gh * P].reshape(gw, P, gh, P)

    desc = np.empty((gw, gh, DESK_CHANNELS), dtype=np.float64)
    for cy in range(4):
        for cx in range(4):
            x0, x1 = (cx * P) // 4, -((-(cx + 1) * P) // 4)
            y0, y1 = (cy * P) // 4, -((-(cy + 1) * P) // 4)
            desc[:, :, cy * 4 + cx] = blocks[:, x0:x1, :, y0:y1].mean(axis=(1, 3))
    desc[:, :, 16] = blocks.mean(axis=(1, 3))
    desc[:, :, 17] = blocks.std(axis=(1, 3))
    if P > 1:
        dx = np.abs(blocks[:, 1:] - blocks[:, :-1])
        dy = np.abs(blocks[:, :, :, 1:] - blocks[:, :, :, :-1])
        desc[:, :, 18] = dx.mean(axis=(1, 3))
        desc[:, :, 19] = dy.mean(axis=(1, 3))
    else:
        desc[:, :, 18] = 0.0
        desc[:, :, 19] = 0.0

    tokens = desc.transpose(1, 0, 2).reshape(gw * gh, DESK_CHANNELS)
    return TokenGrid(gw, gh, DESK_CHANNELS, tokens)


def encode_slice(slice_2d: np.ndarray, cfg: EncoderConfig) -> TokenGrid:
    """Slice-encoder entry point; dispatches on cfg.encoder_id.

    Only the built-in desk encoder runs in-process.  External encoders
    contribute features through FVB1 files instead.
    """
    if cfg.encoder_id != DESK_ENCODER_ID:
        raise ValueError(
            f"no in-process encoder named '{cfg.encoder_id}'; "
            "external features must be supplied as FVB1 files")
    return desk_encode(slice_2d, cfg.patch_size)


def encoded_indices(Z: int, stride_k: int) -> list[int]:
    """Slice indices passed to the encoder: every k-th plus the last."""
    idx = list(range(0, Z, stride_k))
    if idx[-1] != Z - 1:
        idx.append(Z - 1)
    return idx


def encode_volume(vol: Volume3D, cfg: EncoderConfig, encode=encode_slice) -> SliceFeatureStack:
    """Encode every k-th axial slice of ``vol`` (plus the last slice).

    Skipped slices get zero-filled placeholder grids and a False entry
    in encoded_mask; interpolate_missing_slices fills them in.
    """
    W, H, Z = vol.dims
    chosen = encoded_indices(Z, cfg.stride_k)
    mask = np.zeros(Z, dtype=bool)
    mask[chosen] = True

    grids: dict[int, TokenGrid] = {z: encode(vol.data[:, :, z], cfg) for z in chosen}
    ref = grids[chosen[0]]
    hole = TokenGrid(ref.grid_w, ref.grid_h, ref.D,
                     np.zeros((ref.grid_w * ref.grid_h, ref.D)))
    slices = [grids.get(z, hole) for z in range(Z)]
    return SliceFeatureStack(Z, slices, mask, cfg.stride_k, cfg.encoder_id)


def interpolate_missing_slices(stack: SliceFeatureStack) -> SliceFeatureStack:
    """Fill skipped slices by linear interpolation between their nearest
    encoded neighbors along z; encoded slices pass through unchanged."""
    mask = stack.encoded_mask
    if not (mask[0] and mask[-1]):
        raise MissingBoundarySlice(
            "first and last slices must be encoded before interpolation")
    if mask.all():
        return SliceFeatureStack(stack.Z, list(stack.slices), mask.copy(),
                                 stack.stride_k, stack.encoder_id)

    enc = np.flatnonzero(mask)
    out = list(stack.slices)
    for a, b in zip(enc[:-1], enc[1:]):
        fa = stack.slices[a].tokens
        fb = stack.slices[b].tokens
        for z in range(a + 1, b):
            wa = (b - z) / (b - a)
            wb = (z - a) / (b - a)
            g = stack.slices[a]
            out[z] = TokenGrid(g.grid_w, g.grid_h, g.D, wa * fa + wb * fb)
    return SliceFeatureStack(stack.Z, out, np.ones(stack.Z, dtype=bool),
                             stack.stride_k, stack.encoder_id)
