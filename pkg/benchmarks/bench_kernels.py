"""Time the compiled kernels against the pure-numpy fallback.

Calls both implementations directly (bypassing the dispatch layer) so a
single process can compare them, and checks agreement on each shape
before trusting the timings.

    python benchmarks/bench_kernels.py --dims 48 --channels 8 --repeat 5
"""
import argparse
import time

import numpy as np

from featreg import _numpy_kernels
from featreg.registration import candidate_offsets

try:
    from featreg import _native
except ImportError:
    _native = None


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dims", type=int, default=48, help="cube edge length")
    ap.add_argument("--channels", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=5, help="best-of timing")
    ap.add_argument("--threads", type=int, default=1,
                    help="worker count for the native backend")
    ap.add_argument("--radius", type=int, default=2,
                    help="search radius for the cost-volume case")
    args = ap.parse_args()

    if _native is None:
        print("native backend not built; showing numpy timings only")

    n, C = args.dims, args.channels
    rng = np.random.default_rng(0)
    f_fix = rng.normal(size=(n, n, n, C))
    f_mov = rng.normal(size=(n, n, n, C))
    disp = rng.uniform(-1.5, 1.5, size=(n, n, n, 3))
    offsets = candidate_offsets(args.radius, 1)
    pts = rng.uniform(-2, n + 1, size=(n * n * 16, 3))
    cost = _numpy_kernels.cost_volume(f_fix, f_mov, offsets, None)
    target = rng.uniform(-2, 2, size=(n, n, n, 3))

    cases = [
        ("sample_points_linear",
         lambda: _numpy_kernels.sample_points_linear(f_fix, pts),
         lambda: _native.sample_points_linear(f_fix, pts)),
        ("warp_linear",
         lambda: _numpy_kernels.warp_linear(f_mov, disp),
         lambda: _native.warp_linear(f_mov, disp, args.threads)),
        ("mse_value_and_grad",
         lambda: _numpy_kernels.mse_value_and_grad(f_fix, f_mov, disp),
         lambda: _native.mse_value_and_grad(f_fix, f_mov, disp, args.threads)),
        ("cost_volume (integer path)",
         lambda: _numpy_kernels.cost_volume(f_fix, f_mov, offsets, None),
         lambda: _native.cost_volume(f_fix, f_mov, offsets, None, args.threads)),
        ("cost_volume (general path)",
         lambda: _numpy_kernels.cost_volume(f_fix, f_mov, offsets, target),
         lambda: _native.cost_volume(f_fix, f_mov, offsets, target, args.threads)),
        ("coupled_argmin",
         lambda: _numpy_kernels.coupled_argmin(cost, offsets, target, 2.0),
         lambda: _native.coupled_argmin(cost, offsets, target, 2.0, args.threads)),
    ]

    print(f"dims {n}^3, {C} channels, {offsets.shape[0]} candidates, "
          f"best of {args.repeat}, native threads {args.threads}")
    print(f"{'kernel':<28} {'numpy':>10} {'native':>10} {'speedup':>8}")
    for name, np_fn, nat_fn in cases:
        t_np = timeit(np_fn, args.repeat)
        if _native is None:
            print(f"{name:<28} {t_np * 1e3:9.1f}ms {'-':>10} {'-':>8}")
            continue
        a, b = np_fn(), nat_fn()
        if isinstance(a, tuple):
            ok = np.isclose(a[0], b[0], rtol=1e-10) and \
                np.allclose(a[1], b[1], rtol=1e-10, atol=1e-12)
        else:
            ok = np.allclose(a, b, rtol=1e-12, atol=1e-13)
        if not ok:
            raise SystemExit(f"backend mismatch in {name}")
        t_nat = timeit(nat_fn, args.repeat)
        print(f"{name:<28} {t_np * 1e3:9.1f}ms {t_nat * 1e3:9.1f}ms "
              f"{t_np / t_nat:7.1f}x")


if __name__ == "__main__":
    main()
