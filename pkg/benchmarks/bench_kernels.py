"""Benchmark the Cython kernels against the NumPy fallback.

Run: python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from usgan.kernels import pykernels

try:
    from usgan.kernels import _fastkernels
except ImportError:
    _fastkernels = None

CASES = [
    # (B, C, H, W, k, stride, pad)
    (16, 1, 32, 32, 4, 2, 1),
    (16, 64, 16, 16, 4, 2, 1),
    (16, 128, 8, 8, 4, 2, 1),
    (16, 32, 64, 64, 3, 1, 1),
]


def bench(fn, *args, reps=20):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(reps):
        fn(*args)
    return (time.perf_counter() - t0) / reps * 1e3


def main():
    backends = [("python", pykernels)]
    if _fastkernels is not None:
        backends.append(("cython", _fastkernels))
    rng = np.random.default_rng(0)
    print(f"{'case':<28}{'op':<8}" + "".join(f"{n:>12}" for n, _ in backends))
    for b, c, h, w, k, s, p in CASES:
        x = rng.standard_normal((b, c, h, w)).astype(np.float32)
        cols = pykernels.im2col(x, k, k, s, p)
        label = f"{b}x{c}x{h}x{w} k{k}s{s}p{p}"
        times = [bench(impl.im2col, x, k, k, s, p) for _, impl in backends]
        print(f"{label:<28}{'im2col':<8}" + "".join(f"{t:>10.2f}ms" for t in times))
        times = [bench(impl.col2im, cols, x.shape, k, k, s, p) for _, impl in backends]
        print(f"{label:<28}{'col2im':<8}" + "".join(f"{t:>10.2f}ms" for t in times))


if __name__ == "__main__":
    main()
