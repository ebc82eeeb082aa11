#!/usr/bin/env python3
"""Time the numba kernels against their numpy fallbacks.

Usage:
    python benchmarks/bench_kernels.py [--repeat N] [--samples S] [--json]
"""

import argparse
import json
import time
import warnings

import numpy as np

from regprune import kernels

NB, NP = kernels.numba_impl, kernels.numpy_impl

warnings.filterwarnings("ignore", message="The TBB threading layer")


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(n_samples, rng):
    sizes = rng.integers(50, 577, size=n_samples)
    offsets = np.zeros(n_samples + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(sizes)
    flat = rng.exponential(size=offsets[-1])
    refs = rng.uniform(0.1, 2.0, size=n_samples)
    grid = np.linspace(0.0, 5.0, 2_000)
    acts = rng.normal(size=(576, 1024))
    return {
        "splitmix64_block (1e6 draws)": lambda m: m.splitmix64_block(np.uint64(7), 1_000_000),
        "peak_to_mean_abs (576x1024)": lambda m: m.peak_to_mean_abs(acts, 1e-8),
        f"count_retained ({n_samples} samples)": lambda m: m.count_retained(flat, offsets, refs, 1.0),
        f"count_retained_grid (2000 lambdas)": lambda m: m.count_retained_grid(flat, offsets, refs, grid),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--samples", type=int, default=100)
    ap.add_argument("--json", action="store_true", help="emit JSON instead of a table")
    args = ap.parse_args()
    if not kernels.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rows = []
    for name, fn in cases(args.samples, np.random.default_rng(0)).items():
        t_np = best_of(lambda: fn(NP), args.repeat)
        t_nb = best_of(lambda: fn(NB), args.repeat)
        rows.append({"kernel": name, "numpy_s": t_np, "numba_s": t_nb, "speedup": t_np / t_nb})

    if args.json:
        print(json.dumps(rows, indent=2))
        return
    print(f"{'kernel':<38} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for r in rows:
        print(f"{r['kernel']:<38} {r['numpy_s'] * 1e3:>10.3f} {r['numba_s'] * 1e3:>10.3f} {r['speedup']:>7.1f}x")


if __name__ == "__main__":
    main()
