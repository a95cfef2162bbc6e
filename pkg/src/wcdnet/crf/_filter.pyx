# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled truncated-window message passing kernel.

Same contract as ``_filter_py.truncated_filter``. The spatial kernel is
separable, so it runs as two 1-D passes; the bilateral kernel is symmetric,
so every weight is evaluated once per pixel pair.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


cdef void _spatial(
    double[:, :, ::1] qv, double[:, :, ::1] tmp, double[:, :, ::1] ov, double[::1] g, int radius
) noexcept nogil:
    cdef Py_ssize_t c = qv.shape[0], h = qv.shape[1], w = qv.shape[2]
    cdef Py_ssize_t k, y, x, lo, hi, i
    cdef double s, ny, nx
    # vertical pass
    for k in range(c):
        for y in range(h):
            lo = y - radius if y >= radius else 0
            hi = y + radius if y + radius < h else h - 1
            for x in range(w):
                s = 0.0
                for i in range(lo, hi + 1):
                    s = s + g[i - y + radius] * qv[k, i, x]
                tmp[k, y, x] = s
    # horizontal pass, then drop the centre pixel and normalise
    for y in range(h):
        lo = y - radius if y >= radius else 0
        hi = y + radius if y + radius < h else h - 1
        ny = 0.0
        for i in range(lo, hi + 1):
            ny = ny + g[i - y + radius]
        for x in range(w):
            lo = x - radius if x >= radius else 0
            hi = x + radius if x + radius < w else w - 1
            nx = 0.0
            for i in range(lo, hi + 1):
                nx = nx + g[i - x + radius]
            if ny * nx - 1.0 <= 0.0:
                continue
            for k in range(c):
                s = 0.0
                for i in range(lo, hi + 1):
                    s = s + g[i - x + radius] * tmp[k, y, i]
                ov[k, y, x] = (s - qv[k, y, x]) / (ny * nx - 1.0)


cdef void _bilateral(
    double[:, :, ::1] qv, double[:, :, ::1] gv, double[:, ::1] norm, double[:, :, ::1] ov,
    double inv_s, double inv_c, int radius
) noexcept nogil:
    cdef Py_ssize_t c = qv.shape[0], h = qv.shape[1], w = qv.shape[2]
    cdef Py_ssize_t y, x, yy, xx, k, y1, x0, x1
    cdef int dy, dx
    cdef double ws, wgt, d0, d1, d2
    # half of the offsets; each pair (p, p + d) updates both pixels
    for dy in range(0, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx <= 0:
                continue
            ws = (dy * dy + dx * dx) * inv_s
            y1 = h - dy
            x0 = -dx if dx < 0 else 0
            x1 = w - dx if dx > 0 else w
            for y in range(y1):
                yy = y + dy
                for x in range(x0, x1):
                    xx = x + dx
                    d0 = gv[0, y, x] - gv[0, yy, xx]
                    d1 = gv[1, y, x] - gv[1, yy, xx]
                    d2 = gv[2, y, x] - gv[2, yy, xx]
                    wgt = exp(-ws - (d0 * d0 + d1 * d1 + d2 * d2) * inv_c)
                    norm[y, x] += wgt
                    norm[yy, xx] += wgt
                    for k in range(c):
                        ov[k, y, x] += wgt * qv[k, yy, xx]
                        ov[k, yy, xx] += wgt * qv[k, y, x]
    for y in range(h):
        for x in range(w):
            if norm[y, x] > 0:
                for k in range(c):
                    ov[k, y, x] = ov[k, y, x] / norm[y, x]


def truncated_filter(q, guide, double sigma_space, double sigma_color, int radius):
    cdef double[:, :, ::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef double[:, :, ::1] gv = np.ascontiguousarray(guide, dtype=np.float64)
    shape = (qv.shape[0], qv.shape[1], qv.shape[2])
    out = np.zeros(shape, dtype=np.float64)
    cdef double[:, :, ::1] ov = out
    cdef double[:, :, ::1] tmp
    cdef double[:, ::1] norm
    cdef double inv_s = 1.0 / (2.0 * sigma_space * sigma_space)
    cdef double[::1] g
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if sigma_color > 0:
        norm = np.zeros(shape[1:], dtype=np.float64)
        with nogil:
            _bilateral(qv, gv, norm, ov, inv_s, 1.0 / (2.0 * sigma_color * sigma_color), radius)
    else:
        g = np.exp(-np.arange(-radius, radius + 1, dtype=np.float64) ** 2 * inv_s)
        tmp = np.empty(shape, dtype=np.float64)
        with nogil:
            _spatial(qv, tmp, ov, g, radius)
    return out
