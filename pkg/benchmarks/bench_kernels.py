"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Numba compile time is excluded (one warm-up call per kernel).
"""
import argparse
import timeit

import numpy as np

from gblab import _kernels as K


def _sprites(rng, n):
    return np.column_stack([
        rng.integers(0, 3, n), rng.uniform(0, 64, n), rng.uniform(0, 64, n),
        rng.uniform(12, 28, n), rng.uniform(0.5, 1, n), rng.uniform(0, 2 * np.pi, n),
    ]).astype(np.float64)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        raise SystemExit("numba unavailable (or GBLAB_DISABLE_NUMBA set); nothing to compare")

    rng = np.random.default_rng(0)
    a = rng.integers(0, 5, 64 * 64)
    b = rng.integers(0, 5, 64 * 64)
    sprites = _sprites(rng, 4)
    cases = {
        "contingency 64x64, 5x5 labels": (
            lambda: K.contingency_table_numba(a, b, 5, 5),
            lambda: K.contingency_table_numpy(a, b, 5, 5),
        ),
        "rasterize 4 sprites, 64x64": (
            lambda: K.rasterize_numba(sprites, 64),
            lambda: K.rasterize_numpy(sprites, 64),
        ),
    }
    print(f"{'kernel':<32} {'numba us':>10} {'numpy us':>10} {'speedup':>8}")
    for name, (fast, slow) in cases.items():
        assert np.array_equal(fast(), slow())  # also warms the JIT
        t_fast = min(timeit.repeat(fast, number=args.repeat, repeat=3)) / args.repeat * 1e6
        t_slow = min(timeit.repeat(slow, number=args.repeat, repeat=3)) / args.repeat * 1e6
        print(f"{name:<32} {t_fast:>10.1f} {t_slow:>10.1f} {t_slow / t_fast:>7.1f}x")


if __name__ == "__main__":
    main()
