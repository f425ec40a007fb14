# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im kernels for 1-D and 2-D convolution.

Loop order inside ``col2im*`` matches the numpy fallback so both backends
accumulate every output element in the same sequence and agree bit-for-bit.
"""
import numpy as np

ctypedef fused real:
    float
    double


def im2col1d(real[:, :, ::1] x, int k, int stride, int pad):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t Lout = (L + 2 * pad - k) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((N, C * k, Lout), dtype=dtype)
    cdef real[:, :, ::1] cols = out
    cdef Py_ssize_t n, c, j, o, src
    with nogil:
        for n in range(N):
            for c in range(C):
                for j in range(k):
                    for o in range(Lout):
                        src = o * stride + j - pad
                        if 0 <= src < L:
                            cols[n, c * k + j, o] = x[n, c, src]
    return out


def col2im1d(real[:, :, ::1] cols, int C, int L, int k, int stride, int pad):
    cdef Py_ssize_t N = cols.shape[0], Lout = cols.shape[2]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((N, C, L), dtype=dtype)
    cdef real[:, :, ::1] dx = out
    cdef Py_ssize_t n, c, j, o, dst
    with nogil:
        for n in range(N):
            for c in range(C):
                for j in range(k):
                    for o in range(Lout):
                        dst = o * stride + j - pad
                        if 0 <= dst < L:
                            dx[n, c, dst] += cols[n, c * k + j, o]
    return out


def im2col2d(real[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - kw) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((N, C * kh * kw, Ho * Wo), dtype=dtype)
    cdef real[:, :, ::1] cols = out
    cdef Py_ssize_t n, c, i, j, oh, ow, row, sh, sw
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(kh):
                    for j in range(kw):
                        row = (c * kh + i) * kw + j
                        for oh in range(Ho):
                            sh = oh * stride + i - pad
                            if sh < 0 or sh >= H:
                                continue
                            for ow in range(Wo):
                                sw = ow * stride + j - pad
                                if 0 <= sw < W:
                                    cols[n, row, oh * Wo + ow] = x[n, c, sh, sw]
    return out


def col2im2d(real[:, :, ::1] cols, int C, int H, int W, int kh, int kw,
             int stride, int pad):
    cdef Py_ssize_t N = cols.shape[0]
    cdef Py_ssize_t Ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - kw) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((N, C, H, W), dtype=dtype)
    cdef real[:, :, :, ::1] dx = out
    cdef Py_ssize_t n, c, i, j, oh, ow, row, dh, dw
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(kh):
                    for j in range(kw):
                        row = (c * kh + i) * kw + j
                        for oh in range(Ho):
                            dh = oh * stride + i - pad
                            if dh < 0 or dh >= H:
                                continue
                            for ow in range(Wo):
                                dw = ow * stride + j - pad
                                if 0 <= dw < W:
                                    dx[n, c, dh, dw] += cols[n, row, oh * Wo + ow]
    return out
