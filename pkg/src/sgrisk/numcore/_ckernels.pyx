# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def scatter_add_rows(double[:, ::1] out, const cnp.int64_t[::1] idx, const double[:, ::1] src):
    cdef Py_ssize_t i, j, r
    cdef Py_ssize_t m = idx.shape[0]
    cdef Py_ssize_t d = out.shape[1]
    for i in range(m):
        r = idx[i]
        for j in range(d):
            out[r, j] += src[i, j]


def segment_max(const double[:, ::1] x, const cnp.int64_t[::1] seg, Py_ssize_t n_seg):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    vals_arr = np.full((n_seg, d), -np.inf)
    arg_arr = np.full((n_seg, d), -1, dtype=np.int64)
    cdef double[:, ::1] vals = vals_arr
    cdef cnp.int64_t[:, ::1] arg = arg_arr
    cdef Py_ssize_t i, j, s
    for i in range(n):
        s = seg[i]
        for j in range(d):
            if arg[s, j] < 0 or x[i, j] > vals[s, j]:
                vals[s, j] = x[i, j]
                arg[s, j] = i
    for s in range(n_seg):
        if d and arg[s, 0] < 0:
            raise ValueError("segment_max over an empty segment")
    return vals_arr, arg_arr


def segment_topk(const double[::1] scores, const cnp.int64_t[::1] ptr, const cnp.int64_t[::1] k):
    cdef Py_ssize_t n_seg = ptr.shape[0] - 1
    cdef Py_ssize_t total = 0, g
    for g in range(n_seg):
        total += k[g]
    out_arr = np.empty(total, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    taken_arr = np.zeros(scores.shape[0], dtype=np.uint8)
    cdef unsigned char[::1] taken = taken_arr
    cdef Py_ssize_t lo, hi, i, best, pos = 0, start, c
    for g in range(n_seg):
        lo = ptr[g]
        hi = ptr[g + 1]
        # k rounds of selection; segments are small scene graphs
        for c in range(k[g]):
            best = -1
            for i in range(lo, hi):
                if not taken[i] and (best < 0 or scores[i] > scores[best]):
                    best = i
            taken[best] = 1
        for i in range(lo, hi):
            if taken[i]:
                out[pos] = i
                pos += 1
    return out_arr
