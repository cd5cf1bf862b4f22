# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled patch gather/scatter kernels (see patches_numpy.py for contracts)."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(cnp.float64_t[:, :, :, ::1] x, int kh, int kw, int sh, int sw,
           int out_h, int out_w):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t c = x.shape[1]
    cdef Py_ssize_t rows = c * kh * kw
    cdef Py_ssize_t cols_n = out_h * out_w
    out_arr = np.empty((n, rows, cols_n), dtype=np.float64)
    cdef cnp.float64_t[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, ch, ki, kj, oh, ow, r
    for i in range(n):
        for ch in range(c):
            for ki in range(kh):
                for kj in range(kw):
                    r = (ch * kh + ki) * kw + kj
                    for oh in range(out_h):
                        for ow in range(out_w):
                            out[i, r, oh * out_w + ow] = x[i, ch, oh * sh + ki, ow * sw + kj]
    return out_arr


def col2im(cnp.float64_t[:, :, ::1] cols, int c, int hp, int wp,
           int kh, int kw, int sh, int sw, int out_h, int out_w):
    cdef Py_ssize_t n = cols.shape[0]
    out_arr = np.zeros((n, c, hp, wp), dtype=np.float64)
    cdef cnp.float64_t[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t i, ch, ki, kj, oh, ow, r
    # (ki, kj) must stay the outer accumulation order: bit-parity with the
    # numpy backend relies on every target cell receiving its overlapping
    # contributions in the same sequence.
    for i in range(n):
        for ki in range(kh):
            for kj in range(kw):
                for ch in range(c):
                    r = (ch * kh + ki) * kw + kj
                    for oh in range(out_h):
                        for ow in range(out_w):
                            out[i, ch, oh * sh + ki, ow * sw + kj] += cols[i, r, oh * out_w + ow]
    return out_arr
