# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: fused LSTM cell forward/backward and a distance scan."""

import numpy as np
from libc.math cimport exp


cdef inline double _sigmoid(double x) nogil:
    return 1.0 / (1.0 + exp(-x))


cdef inline double _tanh(double x) nogil:
    # exp overflow saturates cleanly to +-1
    return 1.0 - 2.0 / (exp(2.0 * x) + 1.0)


def lstm_cell_forward(const double[:, ::1] z, const double[:, ::1] c_prev):
    cdef Py_ssize_t B = c_prev.shape[0]
    cdef Py_ssize_t H = c_prev.shape[1]
    gates_a = np.empty((B, 4 * H), dtype=np.float64)
    c_a = np.empty((B, H), dtype=np.float64)
    tc_a = np.empty((B, H), dtype=np.float64)
    h_a = np.empty((B, H), dtype=np.float64)
    cdef double[:, ::1] gates = gates_a
    cdef double[:, ::1] c = c_a
    cdef double[:, ::1] tc = tc_a
    cdef double[:, ::1] h = h_a
    cdef Py_ssize_t b, j
    cdef double i_, f_, g_, o_, cc, t
    with nogil:
        for b in range(B):
            for j in range(H):
                i_ = _sigmoid(z[b, j])
                f_ = _sigmoid(z[b, H + j])
                g_ = _tanh(z[b, 2 * H + j])
                o_ = _sigmoid(z[b, 3 * H + j])
                gates[b, j] = i_
                gates[b, H + j] = f_
                gates[b, 2 * H + j] = g_
                gates[b, 3 * H + j] = o_
                cc = f_ * c_prev[b, j] + i_ * g_
                t = _tanh(cc)
                c[b, j] = cc
                tc[b, j] = t
                h[b, j] = o_ * t
    return gates_a, c_a, tc_a, h_a


def lstm_cell_backward(const double[:, ::1] dh, const double[:, ::1] dc,
                       const double[:, ::1] gates, const double[:, ::1] c_prev,
                       const double[:, ::1] tc):
    cdef Py_ssize_t B = c_prev.shape[0]
    cdef Py_ssize_t H = c_prev.shape[1]
    dz_a = np.empty((B, 4 * H), dtype=np.float64)
    dcp_a = np.empty((B, H), dtype=np.float64)
    cdef double[:, ::1] dz = dz_a
    cdef double[:, ::1] dcp = dcp_a
    cdef Py_ssize_t b, j
    cdef double i_, f_, g_, o_, t, dct, dh_
    with nogil:
        for b in range(B):
            for j in range(H):
                i_ = gates[b, j]
                f_ = gates[b, H + j]
                g_ = gates[b, 2 * H + j]
                o_ = gates[b, 3 * H + j]
                t = tc[b, j]
                dh_ = dh[b, j]
                dct = dc[b, j] + dh_ * o_ * (1.0 - t * t)
                dz[b, j] = dct * g_ * i_ * (1.0 - i_)
                dz[b, H + j] = dct * c_prev[b, j] * f_ * (1.0 - f_)
                dz[b, 2 * H + j] = dct * i_ * (1.0 - g_ * g_)
                dz[b, 3 * H + j] = dh_ * t * o_ * (1.0 - o_)
                dcp[b, j] = dct * f_
    return dz_a, dcp_a


def squared_distances(const double[:, ::1] vectors, const double[::1] query):
    cdef Py_ssize_t n = vectors.shape[0]
    cdef Py_ssize_t d = vectors.shape[1]
    out_a = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_a
    cdef Py_ssize_t i, j
    cdef double acc, diff
    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(d):
                diff = vectors[i, j] - query[j]
                acc = acc + diff * diff
            out[i] = acc
    return out_a


def col2im_add(const double[:, :, :, ::1] dcols, Py_ssize_t stride, Py_ssize_t t_in):
    cdef Py_ssize_t B = dcols.shape[0]
    cdef Py_ssize_t Tp = dcols.shape[1]
    cdef Py_ssize_t K = dcols.shape[2]
    cdef Py_ssize_t C = dcols.shape[3]
    dx_a = np.zeros((B, t_in, C), dtype=np.float64)
    cdef double[:, :, ::1] dx = dx_a
    cdef Py_ssize_t b, t, k, c, row
    with nogil:
        for b in range(B):
            for t in range(Tp):
                for k in range(K):
                    row = t * stride + k
                    for c in range(C):
                        dx[b, row, c] += dcols[b, t, k, c]
    return dx_a
