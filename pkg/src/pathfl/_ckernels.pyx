# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution and pooling kernels.

The 3x3 convolution accumulates its nine shifted-tap products straight into
the output with ``dgemm(beta=1)``; everything else is a plain loop nest.
Accumulation order mirrors ``_fallback.py``.
"""

import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


def pad_flat(const double[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t wp = w + 2
    out = np.zeros((n, c, (h + 2) * wp))
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t b, ch, y, xx, row
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(h):
                    row = (y + 1) * wp + 1
                    for xx in range(w):
                        o[b, ch, row + xx] = x[b, ch, y, xx]
    return out


def crop_flat(const double[:, :, ::1] xf, Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = xf.shape[0], c = xf.shape[1], wp = w + 2
    out = np.empty((n, c, h, w))
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t b, ch, y, xx, row
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(h):
                    row = (y + 1) * wp + 1
                    for xx in range(w):
                        o[b, ch, y, xx] = xf[b, ch, row + xx]
    return out


cdef _taps(weight):
    cout, cin = weight.shape[0], weight.shape[1]
    return np.ascontiguousarray(weight.transpose(2, 3, 0, 1).reshape(9, cout, cin))


def conv3x3_forward(x, weight, bias):
    x = np.ascontiguousarray(x, dtype=np.float64)
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int cout = weight.shape[0]
    cdef int wp = w + 2, flat = (h + 2) * (w + 2)
    cdef int span = flat - 2 * wp - 2, base = wp + 1
    xf_arr = pad_flat(x)
    taps_arr = _taps(weight)
    out_arr = np.zeros((n, cout, flat))
    cdef double[:, :, ::1] xf = xf_arr
    cdef double[:, :, ::1] taps = taps_arr
    cdef double[:, :, ::1] out = out_arr
    cdef double one = 1.0
    cdef char nt = b'N'
    cdef int b, k, off
    with nogil:
        for b in range(n):
            for k in range(9):
                off = (k // 3) * wp + k % 3
                # out[b, :, base:] (cout x span) += taps[k] (cout x c) @ xf[b, :, off:] (c x span)
                dgemm(&nt, &nt, &span, &cout, &c, &one, &xf[b, 0, off], &flat,
                      &taps[k, 0, 0], &c, &one, &out[b, 0, base], &flat)
    y = crop_flat(out_arr, h, w)
    y += np.asarray(bias)[None, :, None, None]
    return y, xf_arr


def conv3x3_backward(grad, xf_arr, weight, need_input_grad=True):
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    cdef int n = grad.shape[0], cout = grad.shape[1], h = grad.shape[2], w = grad.shape[3]
    cdef int c = weight.shape[1]
    cdef int wp = w + 2, flat = (h + 2) * (w + 2)
    cdef int span = flat - 2 * wp - 2, base = wp + 1
    cdef bint want_dx = need_input_grad
    gf_arr = pad_flat(grad)
    taps_arr = _taps(weight)
    dtaps_arr = np.zeros((9, c, cout))
    dxf_arr = np.zeros((n, c, flat)) if want_dx else np.zeros((1, 1, 1))
    cdef double[:, :, ::1] gf = gf_arr
    cdef const double[:, :, ::1] xf = xf_arr
    cdef double[:, :, ::1] taps = taps_arr
    cdef double[:, :, ::1] dtaps = dtaps_arr
    cdef double[:, :, ::1] dxf = dxf_arr
    cdef double one = 1.0
    cdef char nt = b'N'
    cdef char tt = b'T'
    cdef int b, k, off
    with nogil:
        for b in range(n):
            for k in range(9):
                off = (k // 3) * wp + k % 3
                # dtaps[k] (c x cout) += xf[b, :, off:] (c x span) @ g.T (span x cout)
                dgemm(&tt, &nt, &cout, &c, &span, &one, &gf[b, 0, base], &flat,
                      <double *>&xf[b, 0, off], &flat, &one, &dtaps[k, 0, 0], &cout)
                if want_dx:
                    # dxf[b, :, off:] (c x span) += taps[k].T (c x cout) @ g (cout x span)
                    dgemm(&nt, &tt, &span, &c, &cout, &one, &gf[b, 0, base], &flat,
                          &taps[k, 0, 0], &c, &one, &dxf[b, 0, off], &flat)
    dweight = np.ascontiguousarray(dtaps_arr.reshape(3, 3, c, cout).transpose(3, 2, 0, 1))
    dbias = grad.sum(axis=(0, 2, 3))
    dx = crop_flat(dxf_arr, h, w) if want_dx else None
    return dx, dweight, dbias


def maxpool2_forward(x_in):
    cdef const double[:, :, :, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h2 = x.shape[2] // 2, w2 = x.shape[3] // 2
    out_arr = np.empty((n, c, h2, w2))
    idx_arr = np.empty((n, c, h2, w2), dtype=np.int8)
    cdef double[:, :, :, ::1] out = out_arr
    cdef signed char[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t b, ch, i, j
    cdef double best, v
    cdef signed char arg
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(h2):
                    for j in range(w2):
                        best = x[b, ch, 2 * i, 2 * j]
                        arg = 0
                        v = x[b, ch, 2 * i, 2 * j + 1]
                        if v > best:
                            best = v
                            arg = 1
                        v = x[b, ch, 2 * i + 1, 2 * j]
                        if v > best:
                            best = v
                            arg = 2
                        v = x[b, ch, 2 * i + 1, 2 * j + 1]
                        if v > best:
                            best = v
                            arg = 3
                        out[b, ch, i, j] = best
                        idx[b, ch, i, j] = arg
    return out_arr, idx_arr


def maxpool2_backward(grad_in, idx_in):
    cdef const double[:, :, :, ::1] grad = np.ascontiguousarray(grad_in, dtype=np.float64)
    cdef const signed char[:, :, :, ::1] idx = np.ascontiguousarray(idx_in)
    cdef Py_ssize_t n = grad.shape[0], c = grad.shape[1], h2 = grad.shape[2], w2 = grad.shape[3]
    out = np.zeros((n, c, 2 * h2, 2 * w2))
    cdef double[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, ch, i, j
    cdef signed char a
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(h2):
                    for j in range(w2):
                        a = idx[b, ch, i, j]
                        dx[b, ch, 2 * i + a // 2, 2 * j + a % 2] = grad[b, ch, i, j]
    return out


def upsample2_forward(x_in):
    cdef const double[:, :, :, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    out = np.empty((n, c, 2 * h, 2 * w))
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t b, ch, i, j
    cdef double v
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(h):
                    for j in range(w):
                        v = x[b, ch, i, j]
                        o[b, ch, 2 * i, 2 * j] = v
                        o[b, ch, 2 * i, 2 * j + 1] = v
                        o[b, ch, 2 * i + 1, 2 * j] = v
                        o[b, ch, 2 * i + 1, 2 * j + 1] = v
    return out


def upsample2_backward(grad_in):
    cdef const double[:, :, :, ::1] g = np.ascontiguousarray(grad_in, dtype=np.float64)
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1], h2 = g.shape[2] // 2, w2 = g.shape[3] // 2
    out = np.empty((n, c, h2, w2))
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t b, ch, i, j
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(h2):
                    for j in range(w2):
                        o[b, ch, i, j] = (
                            g[b, ch, 2 * i, 2 * j]
                            + g[b, ch, 2 * i, 2 * j + 1]
                            + g[b, ch, 2 * i + 1, 2 * j]
                            + g[b, ch, 2 * i + 1, 2 * j + 1]
                        )
    return out
