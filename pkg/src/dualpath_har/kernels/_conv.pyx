# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled 1-D convolution kernels (forward plus all three gradients).

Loop order keeps the time axis innermost so the compiler can vectorize
it; the kernel tap and channel loops are hoisted outward because K is
tiny (3-5) for this workload.
"""

import numpy as np

name = "cython"


def conv1d_forward(double[:, :, ::1] x, double[:, :, ::1] weight,
                   double[::1] bias, int stride, int padding):
    cdef Py_ssize_t n_batch = x.shape[0]
    cdef Py_ssize_t c_in = x.shape[1]
    cdef Py_ssize_t t_in = x.shape[2]
    cdef Py_ssize_t c_out = weight.shape[0]
    cdef Py_ssize_t k_len = weight.shape[2]
    cdef Py_ssize_t t_out = (t_in + 2 * padding - k_len) // stride + 1

    out_arr = np.empty((n_batch, c_out, t_out), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr

    cdef Py_ssize_t n, co, ci, t, k, base, t_lo, t_hi, k_lo, k_hi
    cdef double w_val, b_val, acc
    # Two loop orders: sweep the time axis innermost when it is long
    # (vectorizes), otherwise reduce over (ci, k) per output element so
    # the per-tap bound arithmetic is not paid t_out*c_in times.
    cdef bint time_major = t_out >= 4 * k_len

    with nogil:
        if time_major:
            for n in range(n_batch):
                for co in range(c_out):
                    b_val = bias[co]
                    for t in range(t_out):
                        out[n, co, t] = b_val
                    for ci in range(c_in):
                        for k in range(k_len):
                            w_val = weight[co, ci, k]
                            base = k - padding
                            # valid t range: 0 <= t*stride + base < t_in
                            t_lo = 0
                            if base < 0:
                                t_lo = (-base + stride - 1) // stride
                            t_hi = (t_in - 1 - base) // stride + 1
                            if t_hi > t_out:
                                t_hi = t_out
                            for t in range(t_lo, t_hi):
                                out[n, co, t] += w_val * x[n, ci, t * stride + base]
        else:
            for n in range(n_batch):
                for co in range(c_out):
                    for t in range(t_out):
                        base = t * stride - padding
                        k_lo = -base if base < 0 else 0
                        k_hi = t_in - base
                        if k_hi > k_len:
                            k_hi = k_len
                        acc = bias[co]
                        for ci in range(c_in):
                            for k in range(k_lo, k_hi):
                                acc += x[n, ci, base + k] * weight[co, ci, k]
                        out[n, co, t] = acc
    return out_arr


def conv1d_backward(double[:, :, ::1] grad_out, double[:, :, ::1] x,
                    double[:, :, ::1] weight, int stride, int padding):
    cdef Py_ssize_t n_batch = x.shape[0]
    cdef Py_ssize_t c_in = x.shape[1]
    cdef Py_ssize_t t_in = x.shape[2]
    cdef Py_ssize_t c_out = weight.shape[0]
    cdef Py_ssize_t k_len = weight.shape[2]
    cdef Py_ssize_t t_out = grad_out.shape[2]

    dx_arr = np.zeros((n_batch, c_in, t_in), dtype=np.float64)
    dw_arr = np.zeros((c_out, c_in, k_len), dtype=np.float64)
    db_arr = np.zeros(c_out, dtype=np.float64)
    cdef double[:, :, ::1] dx = dx_arr
    cdef double[:, :, ::1] dw = dw_arr
    cdef double[::1] db = db_arr

    cdef Py_ssize_t n, co, ci, t, k, base, t_lo, t_hi
    cdef double w_val, acc, g_val

    with nogil:
        for n in range(n_batch):
            for co in range(c_out):
                acc = 0.0
                for t in range(t_out):
                    acc += grad_out[n, co, t]
                db[co] += acc
                for ci in range(c_in):
                    for k in range(k_len):
                        w_val = weight[co, ci, k]
                        base = k - padding
                        t_lo = 0
                        if base < 0:
                            t_lo = (-base + stride - 1) // stride
                        t_hi = (t_in - 1 - base) // stride + 1
                        if t_hi > t_out:
                            t_hi = t_out
                        acc = 0.0
                        for t in range(t_lo, t_hi):
                            g_val = grad_out[n, co, t]
                            acc += g_val * x[n, ci, t * stride + base]
                            dx[n, ci, t * stride + base] += g_val * w_val
                        dw[co, ci, k] += acc
    return dx_arr, dw_arr, db_arr
