# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled grid kernels: scale-map rasterization and background pooling.

Semantics must stay identical to ``gridcore_py`` (same formulas, same person
order, same tie-breaks) so that both backends produce bit-equal outputs.
"""

from libc.math cimport floor, ceil, INFINITY

import numpy as np


def rasterize_scale_map(int rows, int cols, double cell_px,
                        double[:, ::1] boxes, double[::1] depths,
                        double[::1] scales):
    """See ``gridcore_py.rasterize_scale_map``."""
    conf_arr = np.zeros((rows, cols), dtype=np.float64)
    scale_arr = np.zeros((rows, cols), dtype=np.float64)
    depth_arr = np.full((rows, cols), np.inf, dtype=np.float64)
    cdef double[:, ::1] conf = conf_arr
    cdef double[:, ::1] scale = scale_arr
    cdef double[:, ::1] best_depth = depth_arr

    cdef Py_ssize_t p, i, j
    cdef int i0, i1, j0, j1
    cdef double x0, y0, x1, y1, d, s, lo, hi

    for p in range(boxes.shape[0]):
        x0 = boxes[p, 0]
        y0 = boxes[p, 1]
        x1 = boxes[p, 2]
        y1 = boxes[p, 3]
        if x1 <= x0 or y1 <= y0:
            continue
        j0 = <int>floor(x0 / cell_px)
        if j0 < 0:
            j0 = 0
        j1 = <int>ceil(x1 / cell_px) - 1
        if j1 > cols - 1:
            j1 = cols - 1
        i0 = <int>floor(y0 / cell_px)
        if i0 < 0:
            i0 = 0
        i1 = <int>ceil(y1 / cell_px) - 1
        if i1 > rows - 1:
            i1 = rows - 1
        if j1 < j0 or i1 < i0:
            continue
        d = depths[p]
        s = scales[p]
        for i in range(i0, i1 + 1):
            lo = y0 if y0 > i * cell_px else i * cell_px
            hi = y1 if y1 < (i + 1) * cell_px else (i + 1) * cell_px
            if hi - lo <= 0.0:
                continue
            for j in range(j0, j1 + 1):
                lo = x0 if x0 > j * cell_px else j * cell_px
                hi = x1 if x1 < (j + 1) * cell_px else (j + 1) * cell_px
                if hi - lo <= 0.0:
                    continue
                if d < best_depth[i, j] or (d == best_depth[i, j]
                                            and s > scale[i, j]):
                    conf[i, j] = 1.0
                    scale[i, j] = s
                    best_depth[i, j] = d

    return conf_arr, scale_arr


def pool_background_mask(background):
    """See ``gridcore_py.pool_background_mask``."""
    bg_arr = np.ascontiguousarray(background, dtype=np.uint8)
    cdef unsigned char[:, ::1] bg = bg_arr
    cdef Py_ssize_t rows = bg.shape[0]
    cdef Py_ssize_t cols = bg.shape[1]

    absorbed_arr = np.zeros((rows, cols), dtype=np.uint8)
    cdef unsigned char[:, ::1] absorbed = absorbed_arr

    anchors_arr = np.empty(((rows // 2) * (cols // 2), 2), dtype=np.int64)
    cdef long long[:, ::1] anchors = anchors_arr
    cdef Py_ssize_t n_anchor = 0
    cdef Py_ssize_t r, c

    for r in range(0, rows - 1, 2):
        for c in range(0, cols - 1, 2):
            if bg[r, c] and bg[r, c + 1] and bg[r + 1, c] and bg[r + 1, c + 1]:
                anchors[n_anchor, 0] = r
                anchors[n_anchor, 1] = c
                n_anchor += 1
                absorbed[r, c] = 1
                absorbed[r, c + 1] = 1
                absorbed[r + 1, c] = 1
                absorbed[r + 1, c + 1] = 1

    remainder_arr = np.empty((rows * cols, 2), dtype=np.int64)
    cdef long long[:, ::1] remainder = remainder_arr
    cdef Py_ssize_t n_rem = 0

    for r in range(rows):
        for c in range(cols):
            if bg[r, c] and not absorbed[r, c]:
                remainder[n_rem, 0] = r
                remainder[n_rem, 1] = c
                n_rem += 1

    return anchors_arr[:n_anchor].copy(), remainder_arr[:n_rem].copy()
