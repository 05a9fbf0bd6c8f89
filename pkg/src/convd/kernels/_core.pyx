# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution core. Same contract as _fallback; see there."""

import numpy as np


def conv2d_batch(double[:, :, ::1] planes, double[:, :, ::1] kernels):
    cdef Py_ssize_t b = planes.shape[0]
    cdef Py_ssize_t h = planes.shape[1]
    cdef Py_ssize_t w = planes.shape[2]
    cdef Py_ssize_t kh = kernels.shape[1]
    cdef Py_ssize_t kw = kernels.shape[2]
    cdef Py_ssize_t oh = h - kh + 1
    cdef Py_ssize_t ow = w - kw + 1
    out_arr = np.zeros((b, oh, ow), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, o, p, a, c
    cdef double acc
    for i in range(b):
        for o in range(oh):
            for p in range(ow):
                acc = 0.0
                for a in range(kh):
                    for c in range(kw):
                        acc += planes[i, o + a, p + c] * kernels[i, a, c]
                out[i, o, p] = acc
    return out_arr


def conv2d_batch_backward(double[:, :, ::1] planes, double[:, :, ::1] kernels,
                          double[:, :, ::1] grad_out):
    cdef Py_ssize_t b = planes.shape[0]
    cdef Py_ssize_t h = planes.shape[1]
    cdef Py_ssize_t w = planes.shape[2]
    cdef Py_ssize_t kh = kernels.shape[1]
    cdef Py_ssize_t kw = kernels.shape[2]
    cdef Py_ssize_t oh = grad_out.shape[1]
    cdef Py_ssize_t ow = grad_out.shape[2]
    gp_arr = np.zeros((b, h, w), dtype=np.float64)
    gk_arr = np.zeros((b, kh, kw), dtype=np.float64)
    cdef double[:, :, ::1] gp = gp_arr
    cdef double[:, :, ::1] gk = gk_arr
    cdef Py_ssize_t i, o, p, a, c
    cdef double g
    for i in range(b):
        for o in range(oh):
            for p in range(ow):
                g = grad_out[i, o, p]
                for a in range(kh):
                    for c in range(kw):
                        gp[i, o + a, p + c] += g * kernels[i, a, c]
                        gk[i, a, c] += g * planes[i, o + a, p + c]
    return gp_arr, gk_arr
