"""Micro-benchmark: numba kernels against the pure-numpy fallback.

Run: python benchmarks/bench_kernels.py [--bins 2048 --candidates 64 ...]
The same workloads run on both backends (outputs are asserted equal), so
the table shows exactly what SWARMSIM_KERNELS=numpy costs.
"""

import argparse
import random
import time

import numpy as np

from swarmsim import kernels


def build_coverage_case(rng, requests, bins):
    starts = np.array([rng.uniform(0, bins * 0.9) for _ in range(requests)])
    ends = starts + np.array([rng.uniform(0.1, bins * 0.3) for _ in range(requests)])
    return starts, ends


def build_greedy_case(rng, candidates, bins):
    base = np.array([rng.randint(0, 2) for _ in range(bins)], dtype=np.int64)
    cands = np.array(
        [[rng.randint(0, 1) for _ in range(bins)] for _ in range(candidates)],
        dtype=np.int64,
    )
    keys = np.column_stack(
        [
            np.array([rng.randint(0, 3) for _ in range(candidates)], dtype=np.int64),
            np.arange(candidates, dtype=np.int64),
        ]
    )
    return base, cands, keys


def timed(fn, repeats):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1000.0, out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--bins", type=int, default=2048)
    parser.add_argument("--candidates", type=int, default=64)
    parser.add_argument("--requests", type=int, default=100_000)
    parser.add_argument("--max-size", type=int, default=32)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if not kernels.NUMBA_AVAILABLE:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = random.Random(0)
    starts, ends = build_coverage_case(rng, args.requests, args.bins)
    base, cands, keys = build_greedy_case(rng, args.candidates, args.bins)

    # Warm the JIT outside the timed region.
    kernels.set_backend("numba")
    kernels.coverage_counts(starts[:8], ends[:8], 1.0, args.bins)
    kernels.greedy_select(base, cands[:2], keys[:2], 1)

    rows = []
    for name, fn in [
        (
            "coverage_counts",
            lambda: kernels.coverage_counts(starts, ends, 1.0, args.bins),
        ),
        (
            f"greedy_select (C={args.candidates}, S={args.max_size})",
            lambda: kernels.greedy_select(base, cands, keys, args.max_size),
        ),
    ]:
        kernels.set_backend("numba")
        t_nb, out_nb = timed(fn, args.repeats)
        kernels.set_backend("numpy")
        t_np, out_np = timed(fn, args.repeats)
        if isinstance(out_nb, tuple):
            for a, b in zip(out_nb, out_np):
                assert np.array_equal(a, b), "backends disagree"
        else:
            assert np.array_equal(out_nb, out_np), "backends disagree"
        rows.append((name, t_nb, t_np))

    kernels.set_backend("numba")
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numba ms':>10}  {'numpy ms':>10}  {'speedup':>8}")
    for name, t_nb, t_np in rows:
        print(f"{name:<{width}}  {t_nb:>10.3f}  {t_np:>10.3f}  {t_np / t_nb:>7.2f}x")


if __name__ == "__main__":
    main()
