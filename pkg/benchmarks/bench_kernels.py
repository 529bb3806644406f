"""Benchmark the compiled kernels against the NumPy fallback.

Run:  python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from mmpcqa.kernels import reference

try:
    from mmpcqa.kernels import _ckernels
except ImportError:
    _ckernels = None


def timeit(fn, *args, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(name, ref_call, c_call):
    t_ref = timeit(*ref_call)
    if _ckernels is None:
        print(f"{name:34s} numpy {t_ref * 1e3:9.3f} ms   compiled -")
        return
    t_c = timeit(*c_call)
    print(f"{name:34s} numpy {t_ref * 1e3:9.3f} ms   "
          f"compiled {t_c * 1e3:9.3f} ms   speedup {t_ref / t_c:6.1f}x")


def main():
    rng = np.random.default_rng(0)
    if _ckernels is None:
        print("compiled kernels not built; showing NumPy fallback only\n")

    for n, k in ((4096, 17), (20000, 64)):
        pts = rng.standard_normal((n, 3))
        bench_case(f"fps        n={n:<6} k={k}",
                   (reference.fps, pts, k, 0),
                   (_ckernels.fps, pts, k, 0) if _ckernels else None)

    for n, (na, k) in ((4096, (17, 256)), (20000, (10, 2048))):
        pts = rng.standard_normal((n, 3))
        anchors = rng.choice(n, size=na, replace=False).astype(np.int64)
        bench_case(f"knn_batch  n={n:<6} anchors={na} k={k}",
                   (reference.knn_batch, pts, anchors, k),
                   (_ckernels.knn_batch, pts, anchors, k) if _ckernels else None)

    for n, (w, h, r) in ((4096, (128, 128, 0)), (100000, (1920, 1080, 1))):
        u = rng.uniform(0, w, n)
        v = rng.uniform(0, h, n)
        z = rng.uniform(1, 5, n)
        colors = rng.uniform(0, 1, (n, 3))
        bg = np.array([1.0, 1.0, 1.0])
        bench_case(f"splat      n={n:<6} {w}x{h} r={r}",
                   (reference.splat, u, v, z, colors, h, w, r, bg),
                   (_ckernels.splat, u, v, z, colors, h, w, r, bg)
                   if _ckernels else None)


if __name__ == "__main__":
    main()
