"""Time the BFS distance kernel: numba vs numpy frontier dilation.

    python3 benchmarks/bench_kernels.py [--sizes 16 64 256] [--repeat 20]
"""

import argparse
import time

import numpy as np

from sharedint import _kernels


def grid(n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    g = rng.random((n, n)) > 0.25
    g[0, 0] = True
    return g


def bench(fn, g, src, repeat):
    fn(g, src)  # warm-up (jit compile)
    t = time.perf_counter()
    for _ in range(repeat):
        out = fn(g, src)
    return (time.perf_counter() - t) / repeat, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[9, 32, 128, 256])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    print(f"{'size':>6} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for n in args.sizes:
        g = grid(n)
        src = np.array([[0, 0]], dtype=np.int64)
        t_np, a = bench(_kernels.bfs_distances_numpy, g, src, args.repeat)
        if _kernels.HAVE_NUMBA:
            t_nb, b = bench(_kernels.bfs_distances_numba, g, src, args.repeat)
            assert np.array_equal(a, b)
            print(f"{n:>6} {t_np * 1e3:>10.3f} {t_nb * 1e3:>10.3f} {t_np / t_nb:>8.1f}")
        else:
            print(f"{n:>6} {t_np * 1e3:>10.3f} {'n/a':>10} {'':>8}")


if __name__ == "__main__":
    main()
