# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled inner loops. Must stay bit-compatible with ``_fallback``."""

from libc.math cimport sqrt

import numpy as np


cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


def masked_adam_update(double[::1] param, const double[::1] grad,
                       double[::1] m, double[::1] v, mask,
                       double lr, double beta1, double beta2, double eps,
                       double bias1, double bias2):
    """Fused Adam update over flat arrays; entries with mask == 0 are skipped."""
    cdef Py_ssize_t i, n = param.shape[0]
    cdef double one_b1 = 1.0 - beta1
    cdef double one_b2 = 1.0 - beta2
    cdef double g, mhat, vhat
    cdef const unsigned char[::1] keep
    if grad.shape[0] != n or m.shape[0] != n or v.shape[0] != n:
        raise ValueError("adam buffers differ in length")
    if mask is None:
        with nogil:
            for i in range(n):
                g = grad[i]
                m[i] = beta1 * m[i] + one_b1 * g
                v[i] = beta2 * v[i] + one_b2 * (g * g)
                mhat = m[i] / bias1
                vhat = v[i] / bias2
                param[i] = param[i] - lr * mhat / (sqrt(vhat) + eps)
        return
    keep = mask
    if keep.shape[0] != n:
        raise ValueError("mask length differs from parameter length")
    with nogil:
        for i in range(n):
            if keep[i] == 0:
                continue
            g = grad[i]
            m[i] = beta1 * m[i] + one_b1 * g
            v[i] = beta2 * v[i] + one_b2 * (g * g)
            mhat = m[i] / bias1
            vhat = v[i] / bias2
            param[i] = param[i] - lr * mhat / (sqrt(vhat) + eps)


def pair_counts(const unsigned char[:, ::1] bits):
    """Pairwise intersection and union popcounts of K bit rows (0/1 bytes)."""
    cdef Py_ssize_t k = bits.shape[0], n = bits.shape[1]
    cdef Py_ssize_t words = (n + 63) // 64
    cdef Py_ssize_t a, b, w, j
    cdef unsigned long long[:, ::1] packed = np.zeros((k, max(words, 1)), dtype=np.uint64)
    inter_arr = np.zeros((k, k), dtype=np.int64)
    union_arr = np.zeros((k, k), dtype=np.int64)
    cdef long long[:, ::1] inter = inter_arr
    cdef long long[:, ::1] union = union_arr
    cdef long long ci, cu
    with nogil:
        for a in range(k):
            for j in range(n):
                if bits[a, j]:
                    packed[a, j >> 6] |= (<unsigned long long>1) << (j & 63)
        for a in range(k):
            for b in range(a, k):
                ci = 0
                cu = 0
                for w in range(words):
                    ci += __builtin_popcountll(packed[a, w] & packed[b, w])
                    cu += __builtin_popcountll(packed[a, w] | packed[b, w])
                inter[a, b] = ci
                inter[b, a] = ci
                union[a, b] = cu
                union[b, a] = cu
    return inter_arr, union_arr
