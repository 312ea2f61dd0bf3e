"""Compare the numba kernels against the pure-numpy fallback.

Times the conv2d forward/backward and maxpool kernels on attack-sized
workloads under both backends and prints a speedup table. The numba
numbers exclude the one-off JIT compilation (a warm-up call runs first).

Usage:
    python benchmarks/benchmark_kernels.py [--repeats 20] [--batch 30]
"""

import argparse
import time

import numpy as np

from fmattack import kernels
from fmattack.backend import get_backend, set_backend


def _pad(x, p):
    return np.ascontiguousarray(np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))))


def make_cases(batch, seed):
    rng = np.random.default_rng(seed)
    cases = []
    for ci, co, hw in ((1, 8, 16), (8, 16, 8), (16, 32, 8)):
        x = rng.normal(size=(batch, ci, hw, hw)).astype(np.float32)
        k = rng.normal(size=(co, ci, 3, 3)).astype(np.float32)
        xp = _pad(x, 1)
        gy = rng.normal(size=(batch, co, hw, hw)).astype(np.float32)
        cases.append((f"conv {ci}->{co} {hw}x{hw}", xp, k, gy))
    return cases


def time_call(fn, repeats):
    fn()  # warm-up (JIT compile under numba)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def run(backend, cases, pool_x, repeats):
    set_backend(backend)
    out = {}
    for label, xp, k, gy in cases:
        out[f"{label} fwd"] = time_call(lambda: kernels.conv2d_forward(xp, k, 1), repeats)
        out[f"{label} bwd"] = time_call(
            lambda: kernels.conv2d_backward(xp, k, gy, 1), repeats)
    _, idx = kernels.maxpool_forward(pool_x, 2, 2)
    g = np.ones((pool_x.shape[0], pool_x.shape[1],
                 pool_x.shape[2] // 2, pool_x.shape[3] // 2), dtype=np.float32)
    out["maxpool fwd"] = time_call(lambda: kernels.maxpool_forward(pool_x, 2, 2), repeats)
    out["maxpool bwd"] = time_call(
        lambda: kernels.maxpool_backward(g, idx, pool_x.shape[2], pool_x.shape[3]), repeats)
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--batch", type=int, default=30,
                        help="batch size (default matches the attack's variant count)")
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    cases = make_cases(args.batch, args.seed)
    pool_x = np.random.default_rng(args.seed + 1).normal(
        size=(args.batch, 8, 16, 16)).astype(np.float32)

    original = get_backend()
    try:
        numpy_times = run("numpy", cases, pool_x, args.repeats)
        try:
            numba_times = run("numba", cases, pool_x, args.repeats)
        except ImportError:
            print("numba is not available; numpy timings only")
            numba_times = None
    finally:
        set_backend(original)

    width = max(len(k) for k in numpy_times)
    header = f"{'kernel':<{width}}  {'numpy (ms)':>11}"
    if numba_times:
        header += f"  {'numba (ms)':>11}  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for key, t_np in numpy_times.items():
        line = f"{key:<{width}}  {t_np * 1e3:>11.3f}"
        if numba_times:
            t_nb = numba_times[key]
            line += f"  {t_nb * 1e3:>11.3f}  {t_np / t_nb:>7.1f}x"
        print(line)


if __name__ == "__main__":
    main()
