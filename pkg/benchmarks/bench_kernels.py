"""Compare the numpy and numba kernel backends on training-shaped workloads.

Each case times one forward call and one fused backward call per backend,
taking the best of ``--repeats`` runs after a warmup call (the warmup also
absorbs numba's JIT compilation). Shapes mirror the micro-batches the
default training configuration actually produces.

Run from the repository root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --repeats 5 --cases stem,lateral
"""

import argparse
import sys
import time

import numpy as np

from tripath import kernels

CONV_CASES = {
    # name: (input shape, weight shape, stride)
    "stem_fast": ((4, 1, 64, 64, 64), (2, 1, 5, 7, 7), (1, 2, 2)),
    "stem_slow": ((4, 1, 16, 64, 64), (16, 1, 1, 7, 7), (1, 2, 2)),
    "stage_3x3x3": ((4, 16, 16, 16, 16), (16, 16, 3, 3, 3), (1, 1, 1)),
    "stage_down": ((4, 16, 16, 16, 16), (32, 16, 3, 3, 3), (1, 2, 2)),
    "pointwise": ((4, 32, 16, 8, 8), (64, 32, 1, 1, 1), (1, 1, 1)),
    "lateral": ((4, 2, 64, 16, 16), (4, 2, 5, 1, 1), (4, 1, 1)),
}

POOL_CASES = {
    "maxpool": ((4, 16, 64, 32, 32), (1, 3, 3), (1, 2, 2)),
}


def best_of(fn, repeats):
    fn()  # warmup; compiles the jit twin on its first call
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def time_conv(name, spec, backend, repeats):
    x_shape, w_shape, stride = spec
    rng = np.random.default_rng(0)
    x = rng.normal(size=x_shape).astype(np.float32)
    w = rng.normal(size=w_shape).astype(np.float32)
    with kernels.use_backend(backend):
        y = kernels.conv3d_forward(x, w, stride)
        gy = np.ones_like(y)
        fwd = best_of(lambda: kernels.conv3d_forward(x, w, stride), repeats)
        bwd = best_of(lambda: kernels.conv3d_backward(gy, x, w, stride, x.shape), repeats)
    return fwd, bwd


def time_pool(name, spec, backend, repeats):
    x_shape, window, stride = spec
    x = np.random.default_rng(0).normal(size=x_shape).astype(np.float32)
    with kernels.use_backend(backend):
        y, argmax = kernels.maxpool3d_forward(x, window, stride)
        gy = np.ones_like(y)
        fwd = best_of(lambda: kernels.maxpool3d_forward(x, window, stride), repeats)
        bwd = best_of(lambda: kernels.maxpool3d_backward(gy, argmax, x.shape), repeats)
    return fwd, bwd


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=3, help="timed runs per case (best wins)")
    parser.add_argument("--cases", help="comma-separated case names (default: all)")
    args = parser.parse_args(argv)

    if "numba" not in kernels.available_backends():
        print("numba is not installed; nothing to compare", file=sys.stderr)
        return 1

    wanted = set(args.cases.split(",")) if args.cases else None
    all_cases = [(n, s, time_conv) for n, s in CONV_CASES.items()]
    all_cases += [(n, s, time_pool) for n, s in POOL_CASES.items()]

    header = (f"{'case':<12} {'numpy fwd':>10} {'numba fwd':>10} {'ratio':>6}  "
              f"{'numpy bwd':>10} {'numba bwd':>10} {'ratio':>6}")
    print(header)
    print("-" * len(header))
    for name, spec, timer in all_cases:
        if wanted and name not in wanted:
            continue
        np_fwd, np_bwd = timer(name, spec, "numpy", args.repeats)
        nb_fwd, nb_bwd = timer(name, spec, "numba", args.repeats)
        print(f"{name:<12} {np_fwd * 1e3:>8.1f}ms {nb_fwd * 1e3:>8.1f}ms "
              f"{nb_fwd / np_fwd:>5.1f}x  {np_bwd * 1e3:>8.1f}ms "
              f"{nb_bwd * 1e3:>8.1f}ms {nb_bwd / np_bwd:>5.1f}x")
    print("\nratio > 1 means the numba twin is slower than the numpy kernel")
    return 0


if __name__ == "__main__":
    sys.exit(main())
