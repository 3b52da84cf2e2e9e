"""Displacement estimation on reduced feature volumes.

Two phases minimize ``sim + lambda * reg``: a coarse-to-fine discrete
search with coupled-convex smoothing produces a robust integer-step
field phi0, then moment-adaptive first-order refinement polishes it to
sub-voxel precision.  Both phases run at the feature-volume grid; the
caller upsamples the result to image resolution.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.ndimage import uniform_filter

from . import kernels
from .encoder import EncoderConfig, encode_slice, encode_volume, interpolate_missing_slices
from .errors import DimsMismatch, NonFiniteLoss
from .featbank import assemble_feature_volume, build_feature_bank, fit_pca, project_stack
from .volcore import (
    DisplacementField,
    FeatureVolume,
    Volume3D,
    resample_field,
    resample_to_shape,
    warp_volume,
)

DEFAULT_PCA_DIM = 24


@dataclass
class RegistrationConfig:
    lambda_: float = 1.0
    levels: int = 3
    capture_radius: list = dc_field(default_factory=lambda: [8, 4, 2])
    quant_step: list = dc_field(default_factory=lambda: [2, 2, 1])
    cc_iters: int = 3
    smooth_radius: int = 2
    refine_iters: int = 100
    step_size: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lambda_ < 0:
            raise ValueError("lambda must be non-negative")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        self.capture_radius = [int(r) for r in self.capture_radius]
        self.quant_step = [int(q) for q in self.quant_step]
        if len(self.capture_radius) != self.levels or len(self.quant_step) != self.levels:
            raise ValueError("capture_radius and quant_step need one entry per level")
        if any(r < 1 for r in self.capture_radius):
            raise ValueError("capture radii must be positive")
        if any(q < 1 for q in self.quant_step):
            raise ValueError("quantization steps must be positive")
        if self.cc_iters < 0 or self.refine_iters < 0 or self.smooth_radius < 0:
            raise ValueError("iteration counts and smooth radius must be >= 0")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1/beta2 must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class LossBreakdown:
    sim: float
    reg: float
    total: float

    def as_dict(self) -> dict:
        return {"sim": self.sim, "reg": self.reg, "total": self.total}


def _check_pair(f_fix: FeatureVolume, f_mov: FeatureVolume) -> None:
    if f_fix.dims != f_mov.dims or f_fix.channels != f_mov.channels:
        raise DimsMismatch(
            f"feature volumes differ: {f_fix.dims}x{f_fix.channels} vs "
            f"{f_mov.dims}x{f_mov.channels}")


def similarity_mse(f_fix: FeatureVolume, f_mov_warped: FeatureVolume) -> float:
    """Mean squared feature difference over all voxels and channels."""
    _check_pair(f_fix, f_mov_warped)
    d = f_fix.data - f_mov_warped.data
    return float(np.mean(d * d))


def regularizer(disp: DisplacementField) -> float:
    """Mean squared Frobenius norm of the forward-difference field Jacobian.

    The difference at the far boundary of each axis is taken as zero
    (replicated edge), so constant translations cost nothing.
    """
    vec = disp.vectors
    V = vec.shape[0] * vec.shape[1] * vec.shape[2]
    total = 0.0
    for a in range(3):
        d = np.diff(vec, axis=a)
        total += float(np.sum(d * d))
    return total / V


def _reg_value_and_grad(vec: np.ndarray) -> tuple[float, np.ndarray]:
    """Regularizer value plus its exact gradient w.r.t. every component."""
    V = vec.shape[0] * vec.shape[1] * vec.shape[2]
    total = 0.0
    grad = np.zeros_like(vec)
    for a in range(3):
        d = np.diff(vec, axis=a)
        total += float(np.sum(d * d))
        hi = tuple(slice(1, None) if i == a else slice(None) for i in range(3))
        lo = tuple(slice(None, -1) if i == a else slice(None) for i in range(3))
        grad[hi] += d
        grad[lo] -= d
    grad *= 2.0 / V
    return total / V, grad


def loss(f_fix: FeatureVolume, f_mov: FeatureVolume, disp: DisplacementField,
         cfg: RegistrationConfig) -> LossBreakdown:
    """Full objective: sim(warped moving, fixed) + lambda * reg(field)."""
    _check_pair(f_fix, f_mov)
    if disp.dims != f_fix.dims:
        raise DimsMismatch(f"field dims {disp.dims} != feature dims {f_fix.dims}")
    warped = warp_volume(f_mov, disp, interp="linear")
    sim = similarity_mse(f_fix, warped)
    reg = regularizer(disp)
    return LossBreakdown(sim, reg, sim + cfg.lambda_ * reg)


def loss_gradient(f_fix: FeatureVolume, f_mov: FeatureVolume,
                  disp: DisplacementField, cfg: RegistrationConfig) -> np.ndarray:
    """Analytic d(total)/d(phi): trilinear backprop plus the smoothness term."""
    _check_pair(f_fix, f_mov)
    if disp.dims != f_fix.dims:
        raise DimsMismatch(f"field dims {disp.dims} != feature dims {f_fix.dims}")
    _, sim_grad = kernels.mse_value_and_grad(f_fix.data, f_mov.data, disp.vectors)
    _, reg_grad = _reg_value_and_grad(disp.vectors)
    return sim_grad + cfg.lambda_ * reg_grad


def candidate_offsets(radius: int, step: int) -> np.ndarray:
    """Cube of displacement candidates [-R, R]^3 sampled every ``step``.

    Sorted by squared norm then lexicographically, so the zero offset is
    first and per-voxel argmin ties resolve toward smaller displacements.
    """
    m = radius // step
    vals = np.arange(-m, m + 1, dtype=np.float64) * step
    g = np.stack(np.meshgrid(vals, vals, vals, indexing="ij"),
                 axis=-1).reshape(-1, 3)
    order = np.lexsort((g[:, 2], g[:, 1], g[:, 0], np.sum(g * g, axis=1)))
    return np.ascontiguousarray(g[order])


def _box_smooth(vec: np.ndarray, radius: int) -> np.ndarray:
    if radius < 1:
        return vec.copy()
    out = np.empty_like(vec)
    size = 2 * radius + 1
    for c in range(3):
        out[..., c] = uniform_filter(vec[..., c], size=size, mode="nearest")
    return out


def _level_dims(dims, factor: int):
    return tuple(max(1, -(-n // factor)) for n in dims)


def discrete_convex_search(f_fix: FeatureVolume, f_mov: FeatureVolume,
                           cfg: RegistrationConfig) -> DisplacementField:
    """Coarse-to-fine discrete candidate search with coupled-convex smoothing.

    Per level (coarsest first): build the per-voxel SSD cost over all
    candidate offsets around the upsampled previous field, take the pure
    per-voxel argmin, then alternate cc_iters times between box-filter
    smoothing of the field and a coupled argmin with weight theta
    doubling from 1.  The field is upsampled x2 (vectors scaled x2)
    between levels and returned at the feature grid.
    """
    _check_pair(f_fix, f_mov)
    dims = f_fix.dims
    total: np.ndarray | None = None
    for lvl in range(cfg.levels):
        factor = 2 ** (cfg.levels - 1 - lvl)
        ldims = _level_dims(dims, factor)
        if factor == 1:
            ffix, fmov = f_fix, f_mov
        else:
            ffix = resample_to_shape(f_fix, ldims, interp="linear")
            fmov = resample_to_shape(f_mov, ldims, interp="linear")

        if total is None:
            init = None
        else:
            up = resample_field(
                DisplacementField(total), ldims, scale_vectors=False)
            init = np.ascontiguousarray(up.vectors * 2.0)

        offsets = candidate_offsets(cfg.capture_radius[lvl], cfg.quant_step[lvl])
        cost = kernels.cost_volume(ffix.data, fmov.data, offsets, init)
        residual = kernels.coupled_argmin(cost, offsets)
        base = init if init is not None else 0.0
        for i in range(cfg.cc_iters):
            theta = float(2 ** i)
            smoothed = _box_smooth(base + residual, cfg.smooth_radius)
            target = np.ascontiguousarray(smoothed - base)
            residual = kernels.coupled_argmin(cost, offsets, target, theta)
        total = np.ascontiguousarray(base + residual)
    return DisplacementField(total, f_fix.spacing)


def continuous_refine(f_fix: FeatureVolume, f_mov: FeatureVolume,
                      phi0: DisplacementField, cfg: RegistrationConfig
                      ) -> tuple[DisplacementField, list[LossBreakdown]]:
    """First-order refinement of phi0 with bias-corrected moment estimates.

    Returns the final field plus the loss trace; trace[0] is the loss at
    phi0 and one entry follows per refinement step.  A non-finite total
    aborts with NonFiniteLoss carrying the iteration index.
    """
    _check_pair(f_fix, f_mov)
    if phi0.dims != f_fix.dims:
        raise DimsMismatch(f"phi0 dims {phi0.dims} != feature dims {f_fix.dims}")
    lam = cfg.lambda_
    phi = phi0.vectors.copy()
    m = np.zeros_like(phi)
    v = np.zeros_like(phi)
    trace: list[LossBreakdown] = []

    def measure(it: int) -> tuple[np.ndarray, np.ndarray]:
        sim, sim_grad = kernels.mse_value_and_grad(f_fix.data, f_mov.data, phi)
        reg, reg_grad = _reg_value_and_grad(phi)
        total = sim + lam * reg
        if not np.isfinite(total):
            raise NonFiniteLoss(it)
        trace.append(LossBreakdown(sim, reg, total))
        return sim_grad, reg_grad

    sim_grad, reg_grad = measure(0)
    for it in range(1, cfg.refine_iters + 1):
        g = sim_grad + lam * reg_grad
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * (g * g)
        m_hat = m / (1.0 - cfg.beta1 ** it)
        v_hat = v / (1.0 - cfg.beta2 ** it)
        phi = phi - cfg.step_size * m_hat / (np.sqrt(v_hat) + cfg.eps)
        sim_grad, reg_grad = measure(it)
    return DisplacementField(phi, phi0.spacing), trace


def register(fix: Volume3D, mov: Volume3D, encoder=encode_slice,
             enc_cfg: EncoderConfig | None = None,
             reg_cfg: RegistrationConfig | None = None,
             pca_dim: int | None = None,
             stack_fix=None, stack_mov=None
             ) -> tuple[DisplacementField, list[LossBreakdown]]:
    """Full pipeline: encode, reduce jointly, search, refine, upsample.

    ``stack_fix``/``stack_mov`` may carry precomputed token stacks (for
    externally exported features); otherwise both volumes are encoded
    with ``encoder``.  ``pca_dim`` defaults to min(24, D, bank rows).
    The returned field lives on the fixed image grid with components in
    image voxels.
    """
    if fix.dims != mov.dims:
        raise DimsMismatch(f"fixed dims {fix.dims} != moving dims {mov.dims}")
    enc_cfg = enc_cfg if enc_cfg is not None else EncoderConfig()
    reg_cfg = reg_cfg if reg_cfg is not None else RegistrationConfig()

    if stack_fix is None:
        stack_fix = encode_volume(fix, enc_cfg, encoder)
    if stack_mov is None:
        stack_mov = encode_volume(mov, enc_cfg, encoder)

    # the bank sees directly-encoded tokens only, so build it before the
    # interpolation pass marks every slice as present
    bank = build_feature_bank(stack_fix, stack_mov)
    if pca_dim is None:
        pca_dim = min(DEFAULT_PCA_DIM, bank.D, bank.rows.shape[0])
    model = fit_pca(bank, pca_dim)

    full_fix = interpolate_missing_slices(stack_fix)
    full_mov = interpolate_missing_slices(stack_mov)
    f_fix = assemble_feature_volume(project_stack(full_fix, model), fix)
    f_mov = assemble_feature_volume(project_stack(full_mov, model), mov)

    phi0 = discrete_convex_search(f_fix, f_mov, reg_cfg)
    phi, trace = continuous_refine(f_fix, f_mov, phi0, reg_cfg)

    phi_img = resample_field(phi, fix.dims, scale_vectors=True)
    return DisplacementField(phi_img.vectors, fix.spacing), trace
