# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the attention softmax and time-convolution kernels.

Single pass per row, no temporaries; sequential loops only so results are
reproducible run to run.
"""

import numpy as np
from cython cimport floating
from libc.math cimport exp, expf, INFINITY


cdef void _softmax_rows(floating[:, ::1] x, const unsigned char[:, ::1] mask,
                        bint has_mask, floating[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t r, j
    cdef Py_ssize_t rows = x.shape[0]
    cdef Py_ssize_t cols = x.shape[1]
    cdef double mx, s, e
    for r in range(rows):
        mx = -INFINITY
        for j in range(cols):
            if (not has_mask or mask[r, j]) and x[r, j] > mx:
                mx = x[r, j]
        s = 0.0
        for j in range(cols):
            if has_mask and not mask[r, j]:
                out[r, j] = 0
            else:
                if floating is float:
                    e = expf(x[r, j] - <float>mx)
                else:
                    e = exp(x[r, j] - mx)
                out[r, j] = <floating>e
                s += e
        s = 1.0 / s
        for j in range(cols):
            out[r, j] = <floating>(out[r, j] * s)


def softmax_forward(x, mask=None):
    shape = x.shape
    cols = shape[len(shape) - 1]
    x2 = np.ascontiguousarray(x).reshape(-1, cols)
    out = np.empty_like(x2)
    cdef const unsigned char[:, ::1] m
    if mask is None:
        m = np.ones((1, 1), dtype=np.uint8)
        if x2.dtype == np.float32:
            _softmax_rows[float](x2, m, False, out)
        else:
            _softmax_rows[double](x2, m, False, out)
    else:
        m = np.ascontiguousarray(np.broadcast_to(mask, shape)).reshape(-1, cols).view(np.uint8)
        if x2.dtype == np.float32:
            _softmax_rows[float](x2, m, True, out)
        else:
            _softmax_rows[double](x2, m, True, out)
    return out.reshape(shape)


cdef void _softmax_bwd_rows(floating[:, ::1] y, floating[:, ::1] gy,
                            floating[:, ::1] gx) noexcept nogil:
    cdef Py_ssize_t r, j
    cdef double dot
    for r in range(y.shape[0]):
        dot = 0.0
        for j in range(y.shape[1]):
            dot += gy[r, j] * y[r, j]
        for j in range(y.shape[1]):
            gx[r, j] = <floating>(y[r, j] * (gy[r, j] - dot))


def softmax_backward(y, gy):
    shape = y.shape
    cols = shape[len(shape) - 1]
    y2 = np.ascontiguousarray(y).reshape(-1, cols)
    g2 = np.ascontiguousarray(gy, dtype=y2.dtype).reshape(-1, cols)
    gx = np.empty_like(y2)
    if y2.dtype == np.float32:
        _softmax_bwd_rows[float](y2, g2, gx)
    else:
        _softmax_bwd_rows[double](y2, g2, gx)
    return gx.reshape(shape)


cdef void _conv_fwd(floating[:, :, :, ::1] x, floating[:, :, ::1] w,
                    floating[:, :, :, ::1] out) noexcept nogil:
    cdef Py_ssize_t b, o, c, k, t, f
    cdef Py_ssize_t nb = x.shape[0], cin = x.shape[1], nf = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], kt = w.shape[2], tout = out.shape[2]
    cdef floating wv
    for b in range(nb):
        for o in range(cout):
            for c in range(cin):
                for k in range(kt):
                    wv = w[o, c, k]
                    for t in range(tout):
                        for f in range(nf):
                            out[b, o, t, f] += wv * x[b, c, t + k, f]


def conv_time_forward(x, w):
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w, dtype=x.dtype)
    tout = x.shape[2] - w.shape[2] + 1
    out = np.zeros((x.shape[0], w.shape[0], tout, x.shape[3]), dtype=x.dtype)
    if x.dtype == np.float32:
        _conv_fwd[float](x, w, out)
    else:
        _conv_fwd[double](x, w, out)
    return out


cdef void _conv_bwd(floating[:, :, :, ::1] x, floating[:, :, ::1] w,
                    floating[:, :, :, ::1] gy, floating[:, :, :, ::1] gx,
                    floating[:, :, ::1] gw) noexcept nogil:
    cdef Py_ssize_t b, o, c, k, t, f
    cdef Py_ssize_t nb = x.shape[0], cin = x.shape[1], nf = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], kt = w.shape[2], tout = gy.shape[2]
    cdef floating wv, g
    cdef double acc
    for b in range(nb):
        for o in range(cout):
            for c in range(cin):
                for k in range(kt):
                    wv = w[o, c, k]
                    acc = 0.0
                    for t in range(tout):
                        for f in range(nf):
                            g = gy[b, o, t, f]
                            gx[b, c, t + k, f] += wv * g
                            acc += g * x[b, c, t + k, f]
                    gw[o, c, k] += <floating>acc


def conv_time_backward(x, w, gy):
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w, dtype=x.dtype)
    gy = np.ascontiguousarray(gy, dtype=x.dtype)
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    if x.dtype == np.float32:
        _conv_bwd[float](x, w, gy, gx, gw)
    else:
        _conv_bwd[double](x, w, gy, gx, gw)
    return gx, gw
