# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels (see reference.py for the contract).

Compiled with -ffp-contract=off so results stay bit-identical with NumPy.
"""

from libc.math cimport floor, INFINITY
from libc.stdlib cimport malloc, free

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline bint _less(double da, long ia, double db, long ib) noexcept nogil:
    # lexicographic (distance, index); ties break toward the lower index
    if da != db:
        return da < db
    return ia < ib


cdef void _sift_down(double* hd, long* hi, long pos, long size) noexcept nogil:
    cdef long child
    cdef double dv = hd[pos]
    cdef long iv = hi[pos]
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        if child + 1 < size and _less(hd[child], hi[child],
                                      hd[child + 1], hi[child + 1]):
            child += 1
        if _less(dv, iv, hd[child], hi[child]):
            hd[pos] = hd[child]
            hi[pos] = hi[child]
            pos = child
        else:
            break
    hd[pos] = dv
    hi[pos] = iv


def fps(cnp.ndarray[cnp.float64_t, ndim=2] points, long k, long start=0):
    cdef long n = points.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(k, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] best = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] p = np.ascontiguousarray(points)
    cdef double[::1] b = best
    cdef long i, j, nxt
    cdef double dx, dy, dz, d, bv

    out[0] = start
    if k == 1:
        return out
    for j in range(n):
        dx = p[j, 0] - p[start, 0]
        dy = p[j, 1] - p[start, 1]
        dz = p[j, 2] - p[start, 2]
        b[j] = (dx * dx + dy * dy) + dz * dz
    for i in range(1, k):
        nxt = 0
        bv = b[0]
        for j in range(1, n):
            if b[j] > bv:
                bv = b[j]
                nxt = j
        out[i] = nxt
        for j in range(n):
            dx = p[j, 0] - p[nxt, 0]
            dy = p[j, 1] - p[nxt, 1]
            dz = p[j, 2] - p[nxt, 2]
            d = (dx * dx + dy * dy) + dz * dz
            if d < b[j]:
                b[j] = d
    return out


def knn_batch(cnp.ndarray[cnp.float64_t, ndim=2] points,
              cnp.ndarray[cnp.int64_t, ndim=1] anchors, long k):
    cdef long n = points.shape[0]
    cdef long na = anchors.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out = np.empty((na, k), dtype=np.int64)
    cdef double[:, ::1] p = np.ascontiguousarray(points)
    cdef long[:, ::1] o = out
    # heap-select: max-heap of the k best (distance, index) pairs
    cdef double* d2 = <double*> malloc(n * sizeof(double))
    cdef double* hd = <double*> malloc(k * sizeof(double))
    cdef long* hi = <long*> malloc(k * sizeof(long))
    if d2 == NULL or hd == NULL or hi == NULL:
        free(d2); free(hd); free(hi)
        raise MemoryError()
    cdef long row, j, a, end
    cdef double dx, dy, dz, tv
    cdef long ti
    try:
        for row in range(na):
            a = anchors[row]
            for j in range(n):
                dx = p[j, 0] - p[a, 0]
                dy = p[j, 1] - p[a, 1]
                dz = p[j, 2] - p[a, 2]
                d2[j] = (dx * dx + dy * dy) + dz * dz
            for j in range(k):
                hd[j] = d2[j]
                hi[j] = j
            for j in range(k // 2 - 1, -1, -1):
                _sift_down(hd, hi, j, k)
            for j in range(k, n):
                if _less(d2[j], j, hd[0], hi[0]):
                    hd[0] = d2[j]
                    hi[0] = j
                    _sift_down(hd, hi, 0, k)
            # heapsort the survivors into ascending (distance, index) order
            for end in range(k - 1, 0, -1):
                tv = hd[0]; ti = hi[0]
                hd[0] = hd[end]; hi[0] = hi[end]
                hd[end] = tv; hi[end] = ti
                _sift_down(hd, hi, 0, end)
            for j in range(k):
                o[row, j] = hi[j]
    finally:
        free(d2); free(hd); free(hi)
    return out


def splat(cnp.ndarray[cnp.float64_t, ndim=1] u,
          cnp.ndarray[cnp.float64_t, ndim=1] v,
          cnp.ndarray[cnp.float64_t, ndim=1] z,
          cnp.ndarray[cnp.float64_t, ndim=2] colors,
          long height, long width, long radius, background):
    cdef cnp.ndarray[cnp.float64_t, ndim=3] img = np.empty((height, width, 3), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] depth = np.full((height, width), np.inf, dtype=np.float64)
    cdef double[:, :, ::1] im = img
    cdef double[:, ::1] dp = depth
    cdef double[:, ::1] col = np.ascontiguousarray(colors)
    cdef double bg0, bg1, bg2
    bg0, bg1, bg2 = float(background[0]), float(background[1]), float(background[2])

    cdef long y, x
    for y in range(height):
        for x in range(width):
            im[y, x, 0] = bg0
            im[y, x, 1] = bg1
            im[y, x, 2] = bg2

    cdef long n = u.shape[0]
    cdef long i, px, py, xs, ys, dx, dy
    cdef double zi
    for i in range(n):
        px = <long> floor(u[i] + 0.5)
        py = <long> floor(v[i] + 0.5)
        zi = z[i]
        for dy in range(-radius, radius + 1):
            ys = py + dy
            if ys < 0 or ys >= height:
                continue
            for dx in range(-radius, radius + 1):
                xs = px + dx
                if xs < 0 or xs >= width:
                    continue
                if zi < dp[ys, xs]:
                    dp[ys, xs] = zi
                    im[ys, xs, 0] = col[i, 0]
                    im[ys, xs, 1] = col[i, 1]
                    im[ys, xs, 2] = col[i, 2]
    return img, depth
