# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled conv2d kernels over C-contiguous float64 buffers.

The filter-tap loops are outermost so the long output-column loop is the
innermost, contiguous one, which the C compiler can vectorize.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline int imax(int a, int b) nogil:
    return a if a > b else b


cdef inline int imin(int a, int b) nogil:
    return a if a < b else b


def conv2d_forward(cnp.ndarray[cnp.float64_t, ndim=3] x,
                   cnp.ndarray[cnp.float64_t, ndim=4] w,
                   int stride, int padding):
    cdef int cin = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef int cout = w.shape[0], k = w.shape[2]
    cdef int ho = (h + 2 * padding - k) // stride + 1
    cdef int wo = (wd + 2 * padding - k) // stride + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.zeros((cout, ho, wo))
    cdef int co, ci, i, j, ki, kj, r, jlo, jhi, base
    cdef double wv
    for co in range(cout):
        for ci in range(cin):
            for ki in range(k):
                for kj in range(k):
                    wv = w[co, ci, ki, kj]
                    # valid j where 0 <= j*stride + kj - padding < wd
                    jlo = imax(0, (padding - kj + stride - 1) // stride)
                    jhi = imin(wo, (wd - 1 - kj + padding) // stride + 1)
                    base = kj - padding
                    for i in range(ho):
                        r = i * stride + ki - padding
                        if r < 0 or r >= h:
                            continue
                        for j in range(jlo, jhi):
                            out[co, i, j] += wv * x[ci, r, j * stride + base]
    return out


def conv2d_backward(cnp.ndarray[cnp.float64_t, ndim=3] x,
                    cnp.ndarray[cnp.float64_t, ndim=4] w,
                    int stride, int padding,
                    cnp.ndarray[cnp.float64_t, ndim=3] gout):
    cdef int cin = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef int cout = w.shape[0], k = w.shape[2]
    cdef int ho = gout.shape[1], wo = gout.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] gx = np.zeros((cin, h, wd))
    cdef cnp.ndarray[cnp.float64_t, ndim=4] gw = np.zeros((cout, cin, k, k))
    cdef int co, ci, i, j, ki, kj, r, jlo, jhi, base
    cdef double wv, acc, g
    for co in range(cout):
        for ci in range(cin):
            for ki in range(k):
                for kj in range(k):
                    wv = w[co, ci, ki, kj]
                    acc = 0.0
                    jlo = imax(0, (padding - kj + stride - 1) // stride)
                    jhi = imin(wo, (wd - 1 - kj + padding) // stride + 1)
                    base = kj - padding
                    for i in range(ho):
                        r = i * stride + ki - padding
                        if r < 0 or r >= h:
                            continue
                        for j in range(jlo, jhi):
                            g = gout[co, i, j]
                            gx[ci, r, j * stride + base] += g * wv
                            acc += g * x[ci, r, j * stride + base]
                    gw[co, ci, ki, kj] += acc
    return gx, gw
