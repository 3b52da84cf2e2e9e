# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for warping, similarity gradients and discrete search.

Semantics are shared with ``_numpy_kernels``; keep both in sync. All loops
write per-voxel independent results, and scalar reductions are accumulated
per x-slab and summed in fixed order, so outputs are bitwise reproducible
for any thread count.
"""
import numpy as np

cimport cython
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport floor

cnp.import_array()


cdef inline void _cell(double p, Py_ssize_t n, Py_ssize_t* i0, Py_ssize_t* i1,
                       double* f, bint* oob) noexcept nogil:
    cdef double pc = p
    cdef Py_ssize_t i
    oob[0] = p < 0.0 or p > n - 1.0
    if pc < 0.0:
        pc = 0.0
    if pc > n - 1.0:
        pc = n - 1.0
    if n == 1:
        i0[0] = 0
        i1[0] = 0
        f[0] = 0.0
        return
    i = <Py_ssize_t>floor(pc)
    if i > n - 2:
        i = n - 2
    i0[0] = i
    i1[0] = i + 1
    f[0] = pc - i


cdef inline Py_ssize_t _clampi(Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    if i < 0:
        return 0
    if i > n - 1:
        return n - 1
    return i


def sample_points_linear(double[:, :, :, ::1] src, double[:, ::1] pts):
    """Clamped trilinear samples of (W,H,Z,C) at (N,3) points -> (N,C)."""
    cdef Py_ssize_t W = src.shape[0], H = src.shape[1], Z = src.shape[2], C = src.shape[3]
    cdef Py_ssize_t N = pts.shape[0]
    out_arr = np.empty((N, C), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t n, c, x0, x1, y0, y1, z0, z1
    cdef double fx, fy, fz, w000, w001, w010, w011, w100, w101, w110, w111
    cdef bint ox, oy, oz
    with nogil:
        for n in range(N):
            _cell(pts[n, 0], W, &x0, &x1, &fx, &ox)
            _cell(pts[n, 1], H, &y0, &y1, &fy, &oy)
            _cell(pts[n, 2], Z, &z0, &z1, &fz, &oz)
            w000 = (1 - fx) * (1 - fy) * (1 - fz)
            w001 = (1 - fx) * (1 - fy) * fz
            w010 = (1 - fx) * fy * (1 - fz)
            w011 = (1 - fx) * fy * fz
            w100 = fx * (1 - fy) * (1 - fz)
            w101 = fx * (1 - fy) * fz
            w110 = fx * fy * (1 - fz)
            w111 = fx * fy * fz
            for c in range(C):
                out[n, c] = (w000 * src[x0, y0, z0, c] + w001 * src[x0, y0, z1, c]
                             + w010 * src[x0, y1, z0, c] + w011 * src[x0, y1, z1, c]
                             + w100 * src[x1, y0, z0, c] + w101 * src[x1, y0, z1, c]
                             + w110 * src[x1, y1, z0, c] + w111 * src[x1, y1, z1, c])
    return out_arr


def warp_linear(double[:, :, :, ::1] src, double[:, :, :, ::1] disp, int num_threads=0):
    """Backward warp of all channels: out(x) = src(x + disp(x))."""
    cdef Py_ssize_t W = src.shape[0], H = src.shape[1], Z = src.shape[2], C = src.shape[3]
    out_arr = np.empty((W, H, Z, C), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t x, y, z, c, x0, x1, y0, y1, z0, z1
    cdef double fx, fy, fz, w000, w001, w010, w011, w100, w101, w110, w111
    cdef bint ox, oy, oz
    cdef int nt = num_threads if num_threads > 0 else 0
    for x in prange(W, nogil=True, schedule="static", num_threads=nt if nt > 0 else 1):
        for y in range(H):
            for z in range(Z):
                _cell(x + disp[x, y, z, 0], W, &x0, &x1, &fx, &ox)
                _cell(y + disp[x, y, z, 1], H, &y0, &y1, &fy, &oy)
                _cell(z + disp[x, y, z, 2], Z, &z0, &z1, &fz, &oz)
                w000 = (1 - fx) * (1 - fy) * (1 - fz)
                w001 = (1 - fx) * (1 - fy) * fz
                w010 = (1 - fx) * fy * (1 - fz)
                w011 = (1 - fx) * fy * fz
                w100 = fx * (1 - fy) * (1 - fz)
                w101 = fx * (1 - fy) * fz
                w110 = fx * fy * (1 - fz)
                w111 = fx * fy * fz
                for c in range(C):
                    out[x, y, z, c] = (
                        w000 * src[x0, y0, z0, c] + w001 * src[x0, y0, z1, c]
                        + w010 * src[x0, y1, z0, c] + w011 * src[x0, y1, z1, c]
                        + w100 * src[x1, y0, z0, c] + w101 * src[x1, y0, z1, c]
                        + w110 * src[x1, y1, z0, c] + w111 * src[x1, y1, z1, c])
    return out_arr


def mse_value_and_grad(double[:, :, :, ::1] f_fix, double[:, :, :, ::1] f_mov,
                       double[:, :, :, ::1] disp, int num_threads=0):
    """Fused MSE similarity value and its gradient w.r.t. the field."""
    cdef Py_ssize_t W = f_fix.shape[0], H = f_fix.shape[1]
    cdef Py_ssize_t Z = f_fix.shape[2], C = f_fix.shape[3]
    grad_arr = np.empty((W, H, Z, 3), dtype=np.float64)
    xsum_arr = np.zeros(W, dtype=np.float64)
    cdef double[:, :, :, ::1] grad = grad_arr
    cdef double[::1] xsum = xsum_arr
    cdef double scale = 2.0 / (<double>(W * H * Z) * C)
    cdef Py_ssize_t x, y, z, c, x0, x1, y0, y1, z0, z1
    cdef double fx, fy, fz, v, r, val, dsx, dsy, dsz, acc, gx, gy, gz
    cdef double wx0, wx1, wy0, wy1, wz0, wz1
    cdef bint ox, oy, oz
    cdef int nt = num_threads if num_threads > 0 else 0
    for x in prange(W, nogil=True, schedule="static", num_threads=nt if nt > 0 else 1):
        acc = 0.0
        for y in range(H):
            for z in range(Z):
                _cell(x + disp[x, y, z, 0], W, &x0, &x1, &fx, &ox)
                _cell(y + disp[x, y, z, 1], H, &y0, &y1, &fy, &oy)
                _cell(z + disp[x, y, z, 2], Z, &z0, &z1, &fz, &oz)
                wx0 = 1 - fx
                wx1 = fx
                wy0 = 1 - fy
                wy1 = fy
                wz0 = 1 - fz
                wz1 = fz
                gx = 0.0
                gy = 0.0
                gz = 0.0
                for c in range(C):
                    val = (wx0 * wy0 * wz0 * f_mov[x0, y0, z0, c]
                           + wx0 * wy0 * wz1 * f_mov[x0, y0, z1, c]
                           + wx0 * wy1 * wz0 * f_mov[x0, y1, z0, c]
                           + wx0 * wy1 * wz1 * f_mov[x0, y1, z1, c]
                           + wx1 * wy0 * wz0 * f_mov[x1, y0, z0, c]
                           + wx1 * wy0 * wz1 * f_mov[x1, y0, z1, c]
                           + wx1 * wy1 * wz0 * f_mov[x1, y1, z0, c]
                           + wx1 * wy1 * wz1 * f_mov[x1, y1, z1, c])
                    dsx = (-wy0 * wz0 * f_mov[x0, y0, z0, c] - wy0 * wz1 * f_mov[x0, y0, z1, c]
                           - wy1 * wz0 * f_mov[x0, y1, z0, c] - wy1 * wz1 * f_mov[x0, y1, z1, c]
                           + wy0 * wz0 * f_mov[x1, y0, z0, c] + wy0 * wz1 * f_mov[x1, y0, z1, c]
                           + wy1 * wz0 * f_mov[x1, y1, z0, c] + wy1 * wz1 * f_mov[x1, y1, z1, c])
                    dsy = (-wx0 * wz0 * f_mov[x0, y0, z0, c] - wx0 * wz1 * f_mov[x0, y0, z1, c]
                           + wx0 * wz0 * f_mov[x0, y1, z0, c] + wx0 * wz1 * f_mov[x0, y1, z1, c]
                           - wx1 * wz0 * f_mov[x1, y0, z0, c] - wx1 * wz1 * f_mov[x1, y0, z1, c]
                           + wx1 * wz0 * f_mov[x1, y1, z0, c] + wx1 * wz1 * f_mov[x1, y1, z1, c])
                    dsz = (-wx0 * wy0 * f_mov[x0, y0, z0, c] + wx0 * wy0 * f_mov[x0, y0, z1, c]
                           - wx0 * wy1 * f_mov[x0, y1, z0, c] + wx0 * wy1 * f_mov[x0, y1, z1, c]
                           - wx1 * wy0 * f_mov[x1, y0, z0, c] + wx1 * wy0 * f_mov[x1, y0, z1, c]
                           - wx1 * wy1 * f_mov[x1, y1, z0, c] + wx1 * wy1 * f_mov[x1, y1, z1, c])
                    r = val - f_fix[x, y, z, c]
                    acc = acc + r * r
                    gx = gx + r * dsx
                    gy = gy + r * dsy
                    gz = gz + r * dsz
                if ox or W == 1:
                    gx = 0.0
                if oy or H == 1:
                    gy = 0.0
                if oz or Z == 1:
                    gz = 0.0
                grad[x, y, z, 0] = scale * gx
                grad[x, y, z, 1] = scale * gy
                grad[x, y, z, 2] = scale * gz
        xsum[x] += acc
    sim = float(np.sum(xsum_arr)) / (W * H * Z * C)
    return sim, grad_arr


def cost_volume(double[:, :, :, ::1] f_fix, double[:, :, :, ::1] f_mov,
                double[:, ::1] offsets, init=None, int num_threads=0):
    """SSD data cost per voxel for every candidate offset -> (K,W,H,Z)."""
    cdef Py_ssize_t W = f_fix.shape[0], H = f_fix.shape[1]
    cdef Py_ssize_t Z = f_fix.shape[2], C = f_fix.shape[3]
    cdef Py_ssize_t K = offsets.shape[0]
    cost_arr = np.empty((K, W, H, Z), dtype=np.float64)
    cdef double[:, :, :, ::1] cost = cost_arr
    cdef double[:, :, :, ::1] base
    cdef Py_ssize_t k, x, y, z, c, sx, sy, sz, x0, x1, y0, y1, z0, z1
    cdef double d, acc, fx, fy, fz
    cdef double w000, w001, w010, w011, w100, w101, w110, w111
    cdef bint ox, oy, oz
    cdef bint integral = init is None
    cdef int nt = num_threads if num_threads > 0 else 0
    if integral:
        for k in range(K):
            if offsets[k, 0] != floor(offsets[k, 0]) or \
               offsets[k, 1] != floor(offsets[k, 1]) or \
               offsets[k, 2] != floor(offsets[k, 2]):
                integral = False
                break
    if integral:
        for k in range(K):
            for x in prange(W, nogil=True, schedule="static",
                            num_threads=nt if nt > 0 else 1):
                sx = _clampi(x + <Py_ssize_t>offsets[k, 0], W)
                for y in range(H):
                    sy = _clampi(y + <Py_ssize_t>offsets[k, 1], H)
                    for z in range(Z):
                        sz = _clampi(z + <Py_ssize_t>offsets[k, 2], Z)
                        acc = 0.0
                        for c in range(C):
                            d = f_mov[sx, sy, sz, c] - f_fix[x, y, z, c]
                            acc = acc + d * d
                        cost[k, x, y, z] = acc
        return cost_arr

    if init is None:
        base = np.zeros((W, H, Z, 3), dtype=np.float64)
    else:
        base = init
    for k in range(K):
        for x in prange(W, nogil=True, schedule="static",
                        num_threads=nt if nt > 0 else 1):
            for y in range(H):
                for z in range(Z):
                    _cell(x + base[x, y, z, 0] + offsets[k, 0], W, &x0, &x1, &fx, &ox)
                    _cell(y + base[x, y, z, 1] + offsets[k, 1], H, &y0, &y1, &fy, &oy)
                    _cell(z + base[x, y, z, 2] + offsets[k, 2], Z, &z0, &z1, &fz, &oz)
                    w000 = (1 - fx) * (1 - fy) * (1 - fz)
                    w001 = (1 - fx) * (1 - fy) * fz
                    w010 = (1 - fx) * fy * (1 - fz)
                    w011 = (1 - fx) * fy * fz
                    w100 = fx * (1 - fy) * (1 - fz)
                    w101 = fx * (1 - fy) * fz
                    w110 = fx * fy * (1 - fz)
                    w111 = fx * fy * fz
                    acc = 0.0
                    for c in range(C):
                        d = (w000 * f_mov[x0, y0, z0, c] + w001 * f_mov[x0, y0, z1, c]
                             + w010 * f_mov[x0, y1, z0, c] + w011 * f_mov[x0, y1, z1, c]
                             + w100 * f_mov[x1, y0, z0, c] + w101 * f_mov[x1, y0, z1, c]
                             + w110 * f_mov[x1, y1, z0, c] + w111 * f_mov[x1, y1, z1, c]
                             - f_fix[x, y, z, c])
                        acc = acc + d * d
                    cost[k, x, y, z] = acc
    return cost_arr


def coupled_argmin(double[:, :, :, ::1] cost, double[:, ::1] offsets,
                   target=None, double theta=0.0, int num_threads=0):
    """Per-voxel argmin of cost(u) + theta * ||u - target||^2; ties keep
    the earliest candidate (strict-less comparison)."""
    cdef Py_ssize_t K = cost.shape[0], W = cost.shape[1]
    cdef Py_ssize_t H = cost.shape[2], Z = cost.shape[3]
    out_arr = np.empty((W, H, Z, 3), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef double[:, :, :, ::1] tgt
    cdef bint coupled = target is not None and theta != 0.0
    cdef Py_ssize_t x, y, z, k, best_k
    cdef double best, val, dx, dy, dz
    cdef int nt = num_threads if num_threads > 0 else 0
    if target is None:
        tgt = np.zeros((W, H, Z, 3), dtype=np.float64)
    else:
        tgt = target
    for x in prange(W, nogil=True, schedule="static", num_threads=nt if nt > 0 else 1):
        for y in range(H):
            for z in range(Z):
                best = 0.0
                best_k = 0
                for k in range(K):
                    val = cost[k, x, y, z]
                    if coupled:
                        dx = offsets[k, 0] - tgt[x, y, z, 0]
                        dy = offsets[k, 1] - tgt[x, y, z, 1]
                        dz = offsets[k, 2] - tgt[x, y, z, 2]
                        val = val + theta * (dx * dx + dy * dy + dz * dz)
                    if k == 0 or val < best:
                        best = val
                        best_k = k
                out[x, y, z, 0] = offsets[best_k, 0]
                out[x, y, z, 1] = offsets[best_k, 1]
                out[x, y, z, 2] = offsets[best_k, 2]
    return out_arr
