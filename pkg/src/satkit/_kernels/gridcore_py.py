"""Pure-numpy fallback for the compiled grid kernels.

Must stay semantically identical to ``_gridcore.pyx``: same formulas, same
person order, same tie-breaks, so both backends produce bit-equal outputs.
"""

from __future__ import annotations

import math

import numpy as np


def rasterize_scale_map(rows: int, cols: int, cell_px: float,
                        boxes: np.ndarray, depths: np.ndarray,
                        scales: np.ndarray):
    """Per-patch coverage and scale from person boxes.

    ``boxes`` are (m, 4) corner boxes in the frame where one grid cell spans
    ``cell_px`` pixels. A cell is covered when it has positive-area overlap
    with a box; among covering persons the smallest depth wins, with the
    larger scale breaking exact depth ties.

    Returns ``(conf, scale)`` float64 grids of shape (rows, cols).
    """
    conf = np.zeros((rows, cols), dtype=np.float64)
    scale = np.zeros((rows, cols), dtype=np.float64)
    best_depth = np.full((rows, cols), np.inf, dtype=np.float64)

    for p in range(boxes.shape[0]):
        x0, y0, x1, y1 = boxes[p]
        if x1 <= x0 or y1 <= y0:
            continue
        j0 = max(int(math.floor(x0 / cell_px)), 0)
        j1 = min(int(math.ceil(x1 / cell_px)) - 1, cols - 1)
        i0 = max(int(math.floor(y0 / cell_px)), 0)
        i1 = min(int(math.ceil(y1 / cell_px)) - 1, rows - 1)
        if j1 < j0 or i1 < i0:
            continue
        jj = np.arange(j0, j1 + 1)
        ii = np.arange(i0, i1 + 1)
        ox = np.minimum(x1, (jj + 1) * cell_px) - np.maximum(x0, jj * cell_px)
        oy = np.minimum(y1, (ii + 1) * cell_px) - np.maximum(y0, ii * cell_px)
        covered = (oy[:, None] > 0.0) & (ox[None, :] > 0.0)

        sub = (slice(i0, i1 + 1), slice(j0, j1 + 1))
        d, s = depths[p], scales[p]
        better = covered & ((d < best_depth[sub]) |
                            ((d == best_depth[sub]) & (s > scale[sub])))
        conf[sub][better] = 1.0
        scale[sub][better] = s
        best_depth[sub][better] = d

    return conf, scale


def pool_background_mask(background: np.ndarray):
    """Aligned 2x2 pooling of a background mask.

    Blocks are anchored at even (row, col); a block pools only when all four
    cells are background. Returns ``(anchors, remainder)`` int64 arrays of
    shape (q, 2) and (r, 2): pooled block anchors in row-major order, then
    background cells not absorbed by any pooled block, also row-major.
    """
    bg = np.ascontiguousarray(background, dtype=np.uint8)
    rows, cols = bg.shape
    er, ec = rows // 2, cols // 2

    if er > 0 and ec > 0:
        blocks = bg[:2 * er, :2 * ec].reshape(er, 2, ec, 2)
        pooled = blocks.all(axis=(1, 3))
    else:
        pooled = np.zeros((er, ec), dtype=bool)
    anchors = np.argwhere(pooled).astype(np.int64) * 2

    absorbed = np.zeros_like(bg, dtype=bool)
    for r, c in anchors:
        absorbed[r:r + 2, c:c + 2] = True
    remainder = np.argwhere((bg != 0) & ~absorbed).astype(np.int64)

    return anchors, remainder
