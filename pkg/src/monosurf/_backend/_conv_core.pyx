# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution core.

Direct-loop kernels with the same contracts as numpy_kernels: padding is
handled by clipping loop ranges instead of materialising padded copies.
Compiled with plain -O3 (no fast-math) so summation order is fixed and
results are reproducible run to run.
"""

import numpy as np

cimport cython

ctypedef fused real:
    float
    double

NAME = "cython"


cdef inline Py_ssize_t _imax(Py_ssize_t a, Py_ssize_t b) nogil:
    return a if a > b else b


cdef inline Py_ssize_t _imin(Py_ssize_t a, Py_ssize_t b) nogil:
    return a if a < b else b


cdef inline Py_ssize_t _first_valid(Py_ssize_t off, Py_ssize_t stride) nogil:
    # smallest i >= 0 with i*stride + off >= 0
    if off >= 0:
        return 0
    return (-off + stride - 1) // stride


def _out_side(Py_ssize_t size, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    span = size + 2 * pad - k
    if span < 0 or span % stride != 0:
        raise ValueError(
            f"spatial size {size} with kernel {k}, stride {stride}, padding {pad} "
            f"does not tile evenly"
        )
    return span // stride + 1


def conv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w,
                   Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t k = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = _out_side(h, kh, stride, pad)
    cdef Py_ssize_t wo = _out_side(wd, kw, stride, pad)
    out_np = np.zeros((n, k, ho, wo), dtype=np.asarray(x).dtype)
    cdef real[:, :, :, ::1] y = out_np
    cdef Py_ssize_t b, o, ci, u, v, i, j, i0, i1, j0, j1, hi
    cdef Py_ssize_t offh, offw
    cdef real wv
    with nogil:
        for b in range(n):
            for o in range(k):
                for ci in range(c):
                    for u in range(kh):
                        offh = u - pad
                        i0 = _first_valid(offh, stride)
                        i1 = _imin(ho, (h - 1 - offh) // stride + 1) if h - 1 - offh >= 0 else 0
                        for v in range(kw):
                            offw = v - pad
                            j0 = _first_valid(offw, stride)
                            j1 = _imin(wo, (wd - 1 - offw) // stride + 1) if wd - 1 - offw >= 0 else 0
                            wv = w[o, ci, u, v]
                            if wv == 0:
                                continue
                            for i in range(i0, i1):
                                hi = i * stride + offh
                                for j in range(j0, j1):
                                    y[b, o, i, j] += wv * x[b, ci, hi, j * stride + offw]
    return out_np


def conv2d_grad_input(real[:, :, :, ::1] gy, real[:, :, :, ::1] w,
                      Py_ssize_t stride, Py_ssize_t pad,
                      Py_ssize_t h, Py_ssize_t wd):
    cdef Py_ssize_t n = gy.shape[0], k = gy.shape[1], ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t c = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    out_np = np.zeros((n, c, h, wd), dtype=np.asarray(gy).dtype)
    cdef real[:, :, :, ::1] gx = out_np
    cdef Py_ssize_t b, o, ci, u, v, i, j, i0, i1, j0, j1, hi
    cdef Py_ssize_t offh, offw
    cdef real wv
    with nogil:
        for b in range(n):
            for ci in range(c):
                for o in range(k):
                    for u in range(kh):
                        offh = u - pad
                        i0 = _first_valid(offh, stride)
                        i1 = _imin(ho, (h - 1 - offh) // stride + 1) if h - 1 - offh >= 0 else 0
                        for v in range(kw):
                            offw = v - pad
                            j0 = _first_valid(offw, stride)
                            j1 = _imin(wo, (wd - 1 - offw) // stride + 1) if wd - 1 - offw >= 0 else 0
                            wv = w[o, ci, u, v]
                            if wv == 0:
                                continue
                            for i in range(i0, i1):
                                hi = i * stride + offh
                                for j in range(j0, j1):
                                    gx[b, ci, hi, j * stride + offw] += wv * gy[b, o, i, j]
    return out_np


def conv2d_grad_kernel(real[:, :, :, ::1] gy, real[:, :, :, ::1] x,
                       Py_ssize_t stride, Py_ssize_t pad,
                       Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t n = gy.shape[0], k = gy.shape[1], ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    out_np = np.zeros((k, c, kh, kw), dtype=np.asarray(gy).dtype)
    cdef real[:, :, :, ::1] gw = out_np
    cdef Py_ssize_t b, o, ci, u, v, i, j, i0, i1, j0, j1, hi
    cdef Py_ssize_t offh, offw
    cdef double acc
    with nogil:
        for o in range(k):
            for ci in range(c):
                for u in range(kh):
                    offh = u - pad
                    i0 = _first_valid(offh, stride)
                    i1 = _imin(ho, (h - 1 - offh) // stride + 1) if h - 1 - offh >= 0 else 0
                    for v in range(kw):
                        offw = v - pad
                        j0 = _first_valid(offw, stride)
                        j1 = _imin(wo, (wd - 1 - offw) // stride + 1) if wd - 1 - offw >= 0 else 0
                        acc = 0.0
                        for b in range(n):
                            for i in range(i0, i1):
                                hi = i * stride + offh
                                for j in range(j0, j1):
                                    acc += gy[b, o, i, j] * x[b, ci, hi, j * stride + offw]
                        gw[o, ci, u, v] = <real> acc
    return out_np
