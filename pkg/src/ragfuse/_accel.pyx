# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled scoring kernels: projected dot products and fused top-k selection.

The hot loop of every retrieval pass is ``score all N records, keep k``.
These kernels accumulate f32 embedding entries against an f64 projected
query in double precision, matching the NumPy fallback to within last-bit
rounding. Tie-breaking is identical to the fallback: equal scores keep the
lower row index.
"""

import numpy as np

cimport numpy as cnp


def projected_scores(const float[:, ::1] embs, const double[::1] v, double offset):
    """Scores for every row: embs[i] . v + offset, accumulated in f64."""
    cdef Py_ssize_t n = embs.shape[0]
    cdef Py_ssize_t d = embs.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        acc = offset
        for j in range(d):
            acc += embs[i, j] * v[j]
        out[i] = acc
    return out_arr


def topk_select(const double[::1] scores, Py_ssize_t k):
    """Indices of the k largest scores, descending; ties keep lower index."""
    cdef Py_ssize_t n = scores.shape[0]
    if k > n:
        k = n
    idx_arr = np.empty(k, dtype=np.int64)
    sc = np.empty(k, dtype=np.float64)
    cdef long long[::1] bidx = idx_arr
    cdef double[::1] bsc = sc
    cdef Py_ssize_t i, pos, filled = 0
    cdef double s
    for i in range(n):
        s = scores[i]
        if filled < k:
            pos = filled
            while pos > 0 and bsc[pos - 1] < s:
                bsc[pos] = bsc[pos - 1]
                bidx[pos] = bidx[pos - 1]
                pos -= 1
            bsc[pos] = s
            bidx[pos] = i
            filled += 1
        elif s > bsc[k - 1]:
            pos = k - 1
            while pos > 0 and bsc[pos - 1] < s:
                bsc[pos] = bsc[pos - 1]
                bidx[pos] = bidx[pos - 1]
                pos -= 1
            bsc[pos] = s
            bidx[pos] = i
    return idx_arr


def projected_topk(const float[:, ::1] embs, const double[::1] v, double offset,
                   Py_ssize_t k):
    """Fused score-and-select pass; returns (indices, scores) descending.

    Avoids materializing the full score vector: each row's score is computed
    once and inserted into a k-slot sorted buffer. Equal scores keep the
    earlier row, and a later row never displaces an equal-scored incumbent,
    which reproduces the fallback's lexicographic (-score, index) order.
    """
    cdef Py_ssize_t n = embs.shape[0]
    cdef Py_ssize_t d = embs.shape[1]
    if k > n:
        k = n
    idx_arr = np.empty(k, dtype=np.int64)
    sc_arr = np.empty(k, dtype=np.float64)
    cdef long long[::1] bidx = idx_arr
    cdef double[::1] bsc = sc_arr
    cdef Py_ssize_t i, j, pos, filled = 0
    cdef double s
    for i in range(n):
        s = offset
        for j in range(d):
            s += embs[i, j] * v[j]
        if filled < k:
            pos = filled
            while pos > 0 and bsc[pos - 1] < s:
                bsc[pos] = bsc[pos - 1]
                bidx[pos] = bidx[pos - 1]
                pos -= 1
            bsc[pos] = s
            bidx[pos] = i
            filled += 1
        elif s > bsc[k - 1]:
            pos = k - 1
            while pos > 0 and bsc[pos - 1] < s:
                bsc[pos] = bsc[pos - 1]
                bidx[pos] = bidx[pos - 1]
                pos -= 1
            bsc[pos] = s
            bidx[pos] = i
    return idx_arr, sc_arr
