#!/usr/bin/env python3
"""Benchmark the compiled grid kernels against the pure-numpy fallback.

Runs the two hot per-scene kernels (scale-map rasterization and background
pooling) on full-scale grids and reports per-call time and speedup.
"""

import time

import numpy as np

from satkit._kernels import gridcore_py

try:
    from satkit._kernels import _gridcore
except ImportError:
    _gridcore = None

ROWS, COLS = 52, 92  # grid of a 1288x728 frame at patch size 14
CELL = 28.0
REPEATS = 300


def make_workload(seed=0, persons=8):
    rng = np.random.default_rng(seed)
    boxes = np.empty((persons, 4))
    for i in range(persons):
        x0, y0 = rng.uniform(0, 2200), rng.uniform(0, 1200)
        boxes[i] = (x0, y0, x0 + rng.uniform(30, 700), y0 + rng.uniform(60, 1000))
    depths = rng.uniform(1, 30, persons)
    scales = rng.random(persons)
    mask = (rng.random((ROWS, COLS)) < 0.7).astype(np.uint8)
    return boxes, depths, scales, mask


def timeit(fn, repeats=REPEATS):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def main():
    boxes, depths, scales, mask = make_workload()
    rows = []
    backends = [("python", gridcore_py)]
    if _gridcore is not None:
        backends.append(("compiled", _gridcore))

    for name, mod in backends:
        t_rast = timeit(lambda: mod.rasterize_scale_map(
            ROWS, COLS, CELL, boxes, depths, scales))
        t_pool = timeit(lambda: mod.pool_background_mask(mask))
        rows.append((name, t_rast, t_pool))

    print(f"grid {ROWS}x{COLS} ({ROWS * COLS} cells), "
          f"{boxes.shape[0]} persons, {REPEATS} repeats\n")
    print(f"{'backend':10s} {'rasterize (us)':>16s} {'pool (us)':>12s}")
    for name, t_rast, t_pool in rows:
        print(f"{name:10s} {t_rast * 1e6:16.1f} {t_pool * 1e6:12.1f}")
    if len(rows) == 2:
        py, cy = rows[0], rows[1]
        print(f"\nspeedup: rasterize {py[1] / cy[1]:.1f}x, "
              f"pool {py[2] / cy[2]:.1f}x")

    # Cross-check: identical outputs.
    if _gridcore is not None:
        a = gridcore_py.rasterize_scale_map(ROWS, COLS, CELL, boxes, depths,
                                            scales)
        b = _gridcore.rasterize_scale_map(ROWS, COLS, CELL, boxes, depths,
                                          scales)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        pa = gridcore_py.pool_background_mask(mask)
        pb = _gridcore.pool_background_mask(mask)
        assert all(np.array_equal(x, y) for x, y in zip(pa, pb))
        print("outputs bit-equal across backends")


if __name__ == "__main__":
    main()
