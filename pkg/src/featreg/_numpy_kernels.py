"""NumPy fallback implementations of the hot kernels.

Selected at import time when the compiled extension is unavailable (or
when FEATREG_BACKEND=numpy is set). Semantics match ``_native`` exactly:
clamped trilinear sampling, first-candidate-wins argmin ties, and
similarity gradients that vanish on axes clamped out of range.
"""
from __future__ import annotations

import numpy as np

_CHUNK = 16  # z-slices per block; bounds transient corner-gather memory


def _axis_cell(p: np.ndarray, n: int):
    """Clamped cell index, fraction and out-of-range mask for one axis."""
    oob = (p < 0.0) | (p > n - 1.0)
    pc = np.clip(p, 0.0, n - 1.0)
    if n == 1:
        i0 = np.zeros(p.shape, dtype=np.int64)
        return i0, i0, np.zeros_like(pc), oob
    i0 = np.minimum(np.floor(pc).astype(np.int64), n - 2)
    return i0, i0 + 1, pc - i0, oob


def _gather(src: np.ndarray, ix, iy, iz) -> np.ndarray:
    return src[ix, iy, iz]


def sample_points_linear(src: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Trilinear samples of an (W,H,Z,C) array at (N,3) points."""
    W, H, Z, _ = src.shape
    x0, x1, fx, _ = _axis_cell(pts[:, 0], W)
    y0, y1, fy, _ = _axis_cell(pts[:, 1], H)
    z0, z1, fz, _ = _axis_cell(pts[:, 2], Z)
    fx, fy, fz = (f[:, None] for f in (fx, fy, fz))
    out = np.zeros((pts.shape[0], src.shape[3]), dtype=np.float64)
    for ix, wx in ((x0, 1.0 - fx), (x1, fx)):
        for iy, wy in ((y0, 1.0 - fy), (y1, fy)):
            for iz, wz in ((z0, 1.0 - fz), (z1, fz)):
                out += wx * wy * wz * _gather(src, ix, iy, iz)
    return out


def _grid_points(dims, disp: np.ndarray) -> np.ndarray:
    base = np.stack(np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims),
                                indexing="ij"), axis=-1)
    return base + disp


def warp_linear(src: np.ndarray, disp: np.ndarray) -> np.ndarray:
    W, H, Z, C = src.shape
    pts = _grid_points((W, H, Z), disp).reshape(-1, 3)
    out = np.empty((W * H * Z, C), dtype=np.float64)
    step = _CHUNK * W * H
    for start in range(0, pts.shape[0], step):
        out[start:start + step] = sample_points_linear(src, pts[start:start + step])
    return np.ascontiguousarray(out.reshape(W, H, Z, C))


def mse_value_and_grad(f_fix: np.ndarray, f_mov: np.ndarray,
                       disp: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean-squared feature error of the warped moving volume plus its
    analytic gradient with respect to every displacement component."""
    W, H, Z, C = f_fix.shape
    pts = _grid_points((W, H, Z), disp).reshape(-1, 3)
    fix_flat = f_fix.reshape(-1, C)
    grad = np.zeros((W * H * Z, 3), dtype=np.float64)
    sq_sum = 0.0
    scale = 2.0 / (W * H * Z * C)

    step = _CHUNK * W * H
    for start in range(0, pts.shape[0], step):
        p = pts[start:start + step]
        x0, x1, fx, ox = _axis_cell(p[:, 0], W)
        y0, y1, fy, oy = _axis_cell(p[:, 1], H)
        z0, z1, fz, oz = _axis_cell(p[:, 2], Z)
        fxc, fyc, fzc = (f[:, None] for f in (fx, fy, fz))
        val = np.zeros((p.shape[0], C), dtype=np.float64)
        dsx = np.zeros_like(val)
        dsy = np.zeros_like(val)
        dsz = np.zeros_like(val)
        for ix, wx, dwx in ((x0, 1.0 - fxc, -1.0), (x1, fxc, 1.0)):
            for iy, wy, dwy in ((y0, 1.0 - fyc, -1.0), (y1, fyc, 1.0)):
                for iz, wz, dwz in ((z0, 1.0 - fzc, -1.0), (z1, fzc, 1.0)):
                    v = _gather(f_mov, ix, iy, iz)
                    val += wx * wy * wz * v
                    dsx += dwx * wy * wz * v
                    dsy += wx * dwy * wz * v
                    dsz += wx * wy * dwz * v
        # clamped axes contribute no motion
        dsx[ox | (W == 1)] = 0.0
        dsy[oy | (H == 1)] = 0.0
        dsz[oz | (Z == 1)] = 0.0
        r = val - fix_flat[start:start + step]
        sq_sum += float(np.sum(r * r))
        g = grad[start:start + step]
        g[:, 0] = scale * np.sum(r * dsx, axis=1)
        g[:, 1] = scale * np.sum(r * dsy, axis=1)
        g[:, 2] = scale * np.sum(r * dsz, axis=1)

    sim = sq_sum / (W * H * Z * C)
    return sim, grad.reshape(W, H, Z, 3)


def cost_volume(f_fix: np.ndarray, f_mov: np.ndarray, offsets: np.ndarray,
                init: np.ndarray | None) -> np.ndarray:
    """Per-voxel SSD data cost for every candidate offset.

    cost[k, x] = sum_c (f_fix[x, c] - f_mov[x + init(x) + u_k, c])^2
    """
    W, H, Z, C = f_fix.shape
    K = offsets.shape[0]
    cost = np.empty((K, W, H, Z), dtype=np.float64)
    integral = init is None and np.all(offsets == np.round(offsets))
    if integral:
        for k in range(K):
            ox, oy, oz = (int(round(v)) for v in offsets[k])
            ix = np.clip(np.arange(W) + ox, 0, W - 1)
            iy = np.clip(np.arange(H) + oy, 0, H - 1)
            iz = np.clip(np.arange(Z) + oz, 0, Z - 1)
            shifted = f_mov[np.ix_(ix, iy, iz)]
            d = shifted - f_fix
            cost[k] = np.sum(d * d, axis=3)
        return cost

    base = _grid_points((W, H, Z), init if init is not None
                        else np.zeros((W, H, Z, 3)))
    for k in range(K):
        pts = (base + offsets[k]).reshape(-1, 3)
        warped = np.empty((W * H * Z, C), dtype=np.float64)
        step = _CHUNK * W * H
        for start in range(0, pts.shape[0], step):
            warped[start:start + step] = sample_points_linear(src=f_mov,
                                                              pts=pts[start:start + step])
        d = warped.reshape(W, H, Z, C) - f_fix
        cost[k] = np.sum(d * d, axis=3)
    return cost


def coupled_argmin(cost: np.ndarray, offsets: np.ndarray,
                   target: np.ndarray | None, theta: float) -> np.ndarray:
    """Per-voxel argmin of ``cost(u) + theta * ||u - target||^2``.

    Ties keep the earliest candidate in enumeration order (strict-less
    comparison), so results are deterministic for any offset ordering.
    """
    K, W, H, Z = cost.shape
    best_val = np.full((W, H, Z), np.inf)
    best_idx = np.zeros((W, H, Z), dtype=np.int64)
    for k in range(K):
        val = cost[k]
        if theta != 0.0 and target is not None:
            d = target - offsets[k]
            val = val + theta * np.sum(d * d, axis=3)
        better = val < best_val
        best_val = np.where(better, val, best_val)
        best_idx[better] = k
    return offsets[best_idx.reshape(-1)].reshape(W, H, Z, 3).copy()
