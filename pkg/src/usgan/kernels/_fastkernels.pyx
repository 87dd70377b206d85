# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Cython twins of the NumPy patch kernels in ``pykernels``.

Same signatures, same results. col2im accumulates kernel offsets in
ascending (i, j) order to stay bit-identical with the fallback.
"""

import numpy as np

cimport cython

ctypedef fused floating:
    float
    double


def out_extent(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, int kh, int kw, int stride, int pad):
    return _im2col(np.ascontiguousarray(x), kh, kw, stride, pad)


def col2im(cols, x_shape, int kh, int kw, int stride, int pad):
    return _col2im(np.ascontiguousarray(cols), x_shape, kh, kw, stride, pad)


def _im2col(floating[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef int b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int oh = (h + 2 * pad - kh) // stride + 1
    cdef int ow = (w + 2 * pad - kw) // stride + 1
    out_np = np.zeros((b, oh * ow, c * kh * kw),
                      dtype=np.float32 if floating is float else np.float64)
    cdef floating[:, :, ::1] out = out_np
    cdef int n, ch, oy, ox, i, j, iy, ix
    with nogil:
        for n in range(b):
            for oy in range(oh):
                for ox in range(ow):
                    for ch in range(c):
                        for i in range(kh):
                            iy = oy * stride + i - pad
                            if iy < 0 or iy >= h:
                                continue
                            for j in range(kw):
                                ix = ox * stride + j - pad
                                if ix < 0 or ix >= w:
                                    continue
                                out[n, oy * ow + ox, (ch * kh + i) * kw + j] = \
                                    x[n, ch, iy, ix]
    return out_np


def _col2im(floating[:, :, ::1] cols, x_shape, int kh, int kw, int stride,
            int pad):
    cdef int b = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef int oh = (h + 2 * pad - kh) // stride + 1
    cdef int ow = (w + 2 * pad - kw) // stride + 1
    out_np = np.zeros((b, c, h, w),
                      dtype=np.float32 if floating is float else np.float64)
    cdef floating[:, :, :, ::1] out = out_np
    cdef int n, ch, oy, ox, i, j, iy, ix
    with nogil:
        for n in range(b):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        for oy in range(oh):
                            iy = oy * stride + i - pad
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(ow):
                                ix = ox * stride + j - pad
                                if ix < 0 or ix >= w:
                                    continue
                                out[n, ch, iy, ix] += \
                                    cols[n, oy * ow + ox, (ch * kh + i) * kw + j]
    return out_np
