# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled Hausdorff kernels over packed bag storage (see bmiml.hausdorff)."""

from libc.math cimport sqrt, INFINITY

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef double _directed_sq(const double[:, ::1] x, Py_ssize_t x0, Py_ssize_t x1,
                         const double[:, ::1] y, Py_ssize_t y0, Py_ssize_t y1) noexcept nogil:
    """max over rows of x of min over rows of y of squared Euclidean distance."""
    cdef Py_ssize_t i, j, k, d = x.shape[1]
    cdef double worst = 0.0, best, acc, diff
    for i in range(x0, x1):
        best = INFINITY
        for j in range(y0, y1):
            acc = 0.0
            for k in range(d):
                diff = x[i, k] - y[j, k]
                acc += diff * diff
                if acc >= best:
                    # partial sums only grow; this candidate cannot win
                    break
            if acc < best:
                best = acc
                if best == 0.0:
                    break
        if best > worst:
            worst = best
    return worst


cdef double _hausdorff_sq(const double[:, ::1] a_pts, Py_ssize_t a0, Py_ssize_t a1,
                          const double[:, ::1] b_pts, Py_ssize_t b0, Py_ssize_t b1) noexcept nogil:
    cdef double fwd = _directed_sq(a_pts, a0, a1, b_pts, b0, b1)
    cdef double bwd = _directed_sq(b_pts, b0, b1, a_pts, a0, a1)
    return fwd if fwd > bwd else bwd


def hausdorff(const double[:, ::1] a, const double[:, ::1] b):
    """Hausdorff distance between two (n, D) instance matrices."""
    cdef double h
    with nogil:
        h = _hausdorff_sq(a, 0, a.shape[0], b, 0, b.shape[0])
    return sqrt(h)


def pairwise(const double[:, ::1] packed, const cnp.int64_t[::1] offsets):
    """Symmetric Hausdorff matrix over packed bags."""
    cdef Py_ssize_t n = offsets.shape[0] - 1
    out = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    cdef double h
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                h = sqrt(_hausdorff_sq(packed, offsets[i], offsets[i + 1],
                                       packed, offsets[j], offsets[j + 1]))
                o[i, j] = h
                o[j, i] = h
    return out


def cross(const double[:, ::1] packed_a, const cnp.int64_t[::1] offsets_a,
          const double[:, ::1] packed_b, const cnp.int64_t[::1] offsets_b):
    """Na x Nb Hausdorff matrix between two packed bag collections."""
    cdef Py_ssize_t na = offsets_a.shape[0] - 1
    cdef Py_ssize_t nb = offsets_b.shape[0] - 1
    out = np.zeros((na, nb), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(na):
            for j in range(nb):
                o[i, j] = sqrt(_hausdorff_sq(packed_a, offsets_a[i], offsets_a[i + 1],
                                             packed_b, offsets_b[j], offsets_b[j + 1]))
    return out
