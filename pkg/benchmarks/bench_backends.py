"""Compiled core vs numpy fallback on the two hot loops.

    python3 benchmarks/bench_backends.py [--n 200000] [--repeat 3]

Prints one line per (kernel, backend, threads) with the best wall time and
the largest deviation from the numpy result.
"""

import argparse
import time

import numpy as np

from sbfr import _backend
from sbfr.kernels import CellGrid


def best_of(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--d", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    r = np.random.default_rng(0)
    pts = r.uniform(0, 1, (args.n, args.d))
    vals = np.ascontiguousarray(r.uniform(0.5, 2.0, (args.n, 2)))
    queries = r.uniform(0, 1, (4096, args.d))
    h = args.n ** (-2.0 / (4.0 + args.d))
    grid = CellGrid(pts, h)
    idx = np.arange(args.n, dtype=np.int64)
    sorted_vals = np.ascontiguousarray(vals[grid.order])

    ref = {}
    for mod in reversed(_backend.available()):
        for threads in ((1,) if mod is _backend.fallback else (1, 4)):
            jobs = {
                "philox_normals": lambda: mod.philox_normals(7, 2, idx, 0, 4),
                "grid_kernel_sums": lambda: mod.grid_kernel_sums(
                    grid.points, sorted_vals, grid.cell_ids, grid.offsets, grid.dims,
                    grid.origin, grid.cell, queries, h, threads),
            }
            for name, fn in jobs.items():
                if name == "philox_normals" and threads > 1:
                    continue
                t, out = best_of(fn, args.repeat)
                ref.setdefault(name, out)
                dev = float(np.max(np.abs(out - ref[name])))
                print(f"{name:18s} {mod.NAME:8s} threads={threads}  {1000 * t:9.1f} ms  "
                      f"max|diff| {dev:.1e}")


if __name__ == "__main__":
    main()
