"""Benchmark the compiled kernel backend against the numpy fallback.

Run: python benchmarks/bench_kernels.py [--quick]

Typical outcome: the compiled backend wins on pooling and small/thin
convolutions (no im2col materialization, no BLAS dispatch overhead), while
the numpy backend wins on large convolutions where im2col turns the work
into one big BLAS matmul. Set FUNDUSDL_BACKEND=python|compiled to force a
choice for a training run.
"""

import argparse
import time

import numpy as np

from fundusdl import kernels


def timeit(fn, reps):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - start) / reps


def bench_conv(impl, n, h, w, cin, cout, k, reps):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((n, h, w, cin)).astype(np.float32)
    wt = rng.standard_normal((k, k, cin, cout)).astype(np.float32)
    b = np.zeros(cout, dtype=np.float32)
    pads = (k // 2, k // 2, k // 2, k // 2)
    fwd = timeit(lambda: impl.conv2d_forward(x, wt, b, (1, 1), pads), reps)
    dy = rng.standard_normal(impl.conv2d_forward(x, wt, b, (1, 1), pads).shape).astype(np.float32)
    bwd = timeit(lambda: impl.conv2d_backward(x, wt, (1, 1), pads, dy), max(1, reps // 2))
    return fwd, bwd


def bench_pool(impl, n, h, w, c, reps):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((n, h, w, c)).astype(np.float32)
    y, arg = impl.maxpool2d_forward(x, (2, 2), (2, 2))
    dy = rng.standard_normal(y.shape).astype(np.float32)
    fwd = timeit(lambda: impl.maxpool2d_forward(x, (2, 2), (2, 2)), reps)
    bwd = timeit(lambda: impl.maxpool2d_backward(x.shape, arg, (2, 2), (2, 2), dy), reps)
    return fwd, bwd


def fmt(seconds):
    if seconds < 1e-3:
        return f"{seconds * 1e6:8.1f}us"
    if seconds < 1.0:
        return f"{seconds * 1e3:8.2f}ms"
    return f"{seconds:8.2f}s "


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true", help="fewer reps, smaller shapes")
    args = parser.parse_args()

    try:
        compiled = kernels.get_backend("compiled")
    except ImportError:
        print("compiled backend not built; nothing to compare")
        return
    python = kernels.get_backend("python")

    reps = 3 if args.quick else 10
    conv_cases = [
        ("conv 1x8x8x8 -> 16 (3x3)", (1, 8, 8, 8, 16, 3), reps * 20),
        ("conv 16x64x64x16 -> 32 (3x3)", (16, 64, 64, 16, 32, 3), reps),
        ("conv 1x224x224x3 -> 64 (3x3)", (1, 224, 224, 3, 64, 3), reps),
    ]
    if not args.quick:
        conv_cases.append(("conv 1x112x112x64 -> 128 (3x3)", (1, 112, 112, 64, 128, 3), 3))

    print(f"{'case':38s} {'compiled':>10s} {'python':>10s}   winner")
    for label, shape, r in conv_cases:
        n, h, w, cin, cout, k = shape
        cf, cb = bench_conv(compiled, n, h, w, cin, cout, k, r)
        pf, pb = bench_conv(python, n, h, w, cin, cout, k, r)
        for suffix, c, p in (("fwd", cf, pf), ("bwd", cb, pb)):
            win = "compiled" if c < p else "python"
            ratio = max(c, p) / min(c, p)
            print(f"{label + ' ' + suffix:38s} {fmt(c)} {fmt(p)}   {win} ({ratio:.1f}x)")

    pool_cases = [
        ("pool 16x64x64x64 (2x2/2)", (16, 64, 64, 64)),
        ("pool 1x224x224x64 (2x2/2)", (1, 224, 224, 64)),
    ]
    for label, (n, h, w, c) in pool_cases:
        cf, cb = bench_pool(compiled, n, h, w, c, reps)
        pf, pb = bench_pool(python, n, h, w, c, reps)
        for suffix, cv, pv in (("fwd", cf, pf), ("bwd", cb, pb)):
            win = "compiled" if cv < pv else "python"
            ratio = max(cv, pv) / min(cv, pv)
            print(f"{label + ' ' + suffix:38s} {fmt(cv)} {fmt(pv)}   {win} ({ratio:.1f}x)")


if __name__ == "__main__":
    main()
