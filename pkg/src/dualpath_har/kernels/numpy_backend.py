"""Vectorized numpy implementation of the 1-D convolution kernels.

This is the fallback backend used when the compiled extension is not
built. Forward and weight gradients are strided-view tensordots (one
BLAS call each); the input gradient scatters one slice per kernel tap.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

name = "numpy"


def _padded(x, padding):
    if padding == 0:
        return x
    n, c, t = x.shape
    out = np.zeros((n, c, t + 2 * padding), dtype=x.dtype)
    out[:, :, padding:padding + t] = x
    return out


def _window_view(xp, out_len, kernel_len, stride):
    n, c, _ = xp.shape
    sn, sc, st = xp.strides
    return as_strided(
        xp,
        shape=(n, c, out_len, kernel_len),
        strides=(sn, sc, st * stride, st),
        writeable=False,
    )


def conv1d_forward(x, weight, bias, stride, padding):
    """x: [N,Ci,T], weight: [Co,Ci,K], bias: [Co] -> [N,Co,T']."""
    _, _, t = x.shape
    co, _, k = weight.shape
    out_len = (t + 2 * padding - k) // stride + 1
    windows = _window_view(_padded(x, padding), out_len, k, stride)
    out = np.tensordot(windows, weight, axes=((1, 3), (1, 2)))  # [N,T',Co]
    out += bias
    return np.ascontiguousarray(out.transpose(0, 2, 1))


def conv1d_backward(grad_out, x, weight, stride, padding):
    """grad_out: [N,Co,T'] -> (dx, dweight, dbias)."""
    _, _, t = x.shape
    _, _, k = weight.shape
    out_len = grad_out.shape[2]
    xp = _padded(x, padding)
    windows = _window_view(xp, out_len, k, stride)

    dweight = np.tensordot(grad_out, windows, axes=((0, 2), (0, 2)))
    dbias = grad_out.sum(axis=(0, 2))

    dxp = np.zeros_like(xp)
    grad_t = np.ascontiguousarray(grad_out.transpose(0, 2, 1))  # [N,T',Co]
    for tap in range(k):
        contrib = grad_t @ weight[:, :, tap]  # [N,T',Ci]
        dxp[:, :, tap:tap + stride * out_len:stride] += contrib.transpose(0, 2, 1)
    dx = dxp[:, :, padding:padding + t] if padding else dxp
    return np.ascontiguousarray(dx), dweight, dbias
