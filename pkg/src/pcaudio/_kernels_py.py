"""Pure numpy implementations of the hot kernels.

Same signatures as the compiled ``_kernels`` module; used when the
extension is unavailable or disabled through ``PCAUDIO_PURE_PYTHON``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def softmax_forward(x, mask=None):
    """Row softmax over the last axis; masked entries come out as exact zeros."""
    if mask is None:
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)
    z = np.where(mask, x, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    # exp(-inf) is already 0, but a broadcast mask may leave -0.0 or nan-free junk
    return np.where(mask, y, 0.0).astype(x.dtype, copy=False)


def softmax_backward(y, gy):
    return y * (gy - (gy * y).sum(axis=-1, keepdims=True))


def conv_time_forward(x, w):
    """Valid correlation along axis 2 of ``x`` [B, C_in, T, F] with ``w`` [C_out, C_in, K]."""
    k = w.shape[2]
    xw = sliding_window_view(x, k, axis=2)  # [B, C_in, T_out, F, K]
    out = np.tensordot(xw, w, axes=([1, 4], [1, 2]))  # [B, T_out, F, C_out]
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv_time_backward(x, w, gy):
    k = w.shape[2]
    t_out = gy.shape[2]
    xw = sliding_window_view(x, k, axis=2)
    gw = np.tensordot(gy, xw, axes=([0, 2, 3], [0, 2, 3]))  # [C_out, C_in, K]
    gx = np.zeros_like(x)
    for tau in range(k):
        # [C_in, B, T_out, F]
        contrib = np.tensordot(w[:, :, tau], gy, axes=([0], [1]))
        gx[:, :, tau:tau + t_out, :] += contrib.transpose(1, 0, 2, 3)
    return gx, gw
