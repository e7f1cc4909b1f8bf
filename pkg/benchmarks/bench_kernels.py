"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--batch 64]

Shapes follow the default CIFAR-10 CNN (3x32x32 input, 16 then 32 channels).
The first numba call is a warm-up so compile time is excluded.
"""

import argparse
import time

import numpy as np

from optg import kernels
from optg._accel import HAS_NUMBA


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(batch, rng):
    x1 = rng.standard_normal((batch, 3, 32, 32))
    x2 = rng.standard_normal((batch, 16, 16, 16))
    cols1 = kernels.im2col_np(x1, 3, 3, 1, 1)
    cols2 = kernels.im2col_np(x2, 3, 3, 1, 1)
    p1 = rng.standard_normal((batch, 16, 32, 32))
    out, arg = kernels.maxpool_forward_np(p1, 2, 2)
    g = rng.standard_normal(out.shape)
    return {
        "im2col 3x32x32 k3": lambda nb: kernels.im2col(x1, 3, 3, 1, 1, use_numba=nb),
        "im2col 16x16x16 k3": lambda nb: kernels.im2col(x2, 3, 3, 1, 1, use_numba=nb),
        "col2im 3x32x32 k3": lambda nb: kernels.col2im(cols1, x1.shape, 3, 3, 1, 1, use_numba=nb),
        "col2im 16x16x16 k3": lambda nb: kernels.col2im(cols2, x2.shape, 3, 3, 1, 1, use_numba=nb),
        "maxpool fwd 16x32x32": lambda nb: kernels.maxpool_forward(p1, 2, 2, use_numba=nb),
        "maxpool bwd 16x32x32": lambda nb: kernels.maxpool_backward(g, arg, p1.shape, 2, 2, use_numba=nb),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<24}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, fn in cases(args.batch, rng).items():
        ref, fast = fn(False), fn(True)   # warm-up doubles as an agreement check
        for a, b in zip(ref if isinstance(ref, tuple) else (ref,), fast if isinstance(fast, tuple) else (fast,)):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
        t_np = best_of(lambda: fn(False), args.repeat)
        t_nb = best_of(lambda: fn(True), args.repeat)
        print(f"{name:<24}{1e3 * t_np:>10.2f}{1e3 * t_nb:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
