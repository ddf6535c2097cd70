"""Shared generators and independent oracles for the test suite.

Oracles here are deliberately naive (nested loops, factorial enumeration,
grid search) and never call the code paths they check.
"""

import itertools
import math

import numpy as np

from satkit.geometry import BBox
from satkit.scene import PersonAnnotation


def random_bbox(rng, width, height, min_side=2.0):
    x0 = rng.uniform(0, width - min_side)
    y0 = rng.uniform(0, height - min_side)
    x1 = rng.uniform(x0 + min_side, width)
    y1 = rng.uniform(y0 + min_side, height)
    return BBox(x0, y0, x1, y1)


def random_annotations(rng, width_hr, height_hr, max_persons=8):
    persons = []
    for _ in range(int(rng.integers(0, max_persons + 1))):
        persons.append(PersonAnnotation(
            bbox=random_bbox(rng, width_hr, height_hr),
            root_depth=float(rng.uniform(0.5, 30.0))))
    return persons


def oracle_scale_map(rows, cols, patch_size, persons, longest_hr):
    """Naive per-(patch, person) rasterization with min-depth selection."""
    cell = 2.0 * patch_size
    conf = np.zeros((rows, cols))
    scale = np.zeros((rows, cols))
    for i in range(rows):
        for j in range(cols):
            best = None
            for p in persons:
                b = p.bbox
                ox = min(b.x_max, (j + 1) * cell) - max(b.x_min, j * cell)
                oy = min(b.y_max, (i + 1) * cell) - max(b.y_min, i * cell)
                if ox > 0 and oy > 0:
                    s = min(math.hypot(b.x_max - b.x_min,
                                       b.y_max - b.y_min) / longest_hr, 1.0)
                    key = (p.root_depth, -s)
                    if best is None or key < best:
                        best = key
            if best is not None:
                conf[i, j] = 1.0
                scale[i, j] = -best[1]
    return conf, scale


def oracle_pool(background):
    """Enumerate aligned 2x2 blocks directly."""
    rows, cols = background.shape
    pooled = []
    absorbed = set()
    for r in range(0, rows - 1, 2):
        for c in range(0, cols - 1, 2):
            cells = [(r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)]
            if all(background[i, j] for i, j in cells):
                pooled.append((r, c))
                absorbed.update(cells)
    remainder = [(r, c) for r in range(rows) for c in range(cols)
                 if background[r, c] and (r, c) not in absorbed]
    return pooled, remainder


def oracle_assignment(cost):
    """Factorial enumeration of injective assignments; returns (cost, map)."""
    n, m = cost.shape
    best_total, best_perm = None, None
    for perm in itertools.permutations(range(n), m):
        total = sum(cost[perm[g], g] for g in range(m))
        if best_total is None or total < best_total:
            best_total, best_perm = total, perm
    return best_total, best_perm


def oracle_similarity_sse(pred, gt, grid_n=10, iters=5):
    """Best similarity-transform SSE by Euler-angle grid search + refinement.

    Scale and translation are closed-form given the rotation, so only the
    rotation is searched.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mu_p, mu_g = pred.mean(axis=0), gt.mean(axis=0)
    pc, gc = pred - mu_p, gt - mu_g
    var_p = np.sum(pc ** 2)

    def euler(a, b, c):
        ca, sa = np.cos(a), np.sin(a)
        cb, sb = np.cos(b), np.sin(b)
        cc, sc = np.cos(c), np.sin(c)
        rz = np.array([[ca, -sa, 0], [sa, ca, 0], [0, 0, 1]])
        ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
        rx = np.array([[1, 0, 0], [0, cc, -sc], [0, sc, cc]])
        return rz @ ry @ rx

    def sse_for(rot):
        rp = pc @ rot.T
        # Scale constrained non-negative: the search stays over proper
        # similarities (no reflections).
        s = max(np.sum(gc * rp) / var_p, 0.0)
        return float(np.sum((gc - s * rp) ** 2))

    center = np.zeros(3)
    span = np.pi
    best = (np.inf, None)
    for _ in range(iters):
        axes = [np.linspace(center[k] - span, center[k] + span, grid_n)
                for k in range(3)]
        for a in axes[0]:
            for b in axes[1]:
                for c in axes[2]:
                    val = sse_for(euler(a, b, c))
                    if val < best[0]:
                        best = (val, (a, b, c))
        center = np.array(best[1])
        span = span * 2.5 / grid_n
    return best[0]


def random_class_grid(rng, max_rows=46, max_cols=26):
    rows = int(rng.integers(1, max_rows + 1))
    cols = int(rng.integers(1, max_cols + 1))
    return rng.integers(0, 3, size=(rows, cols)).astype(np.uint8)
