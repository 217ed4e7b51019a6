# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for the evaluation path.

Same contracts as ``_fallback``; see that module for the semantics.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def sep_filter_valid(const double[:, ::1] img, const double[:] win):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], k = win.shape[0]
    if k < 1 or h < k or w < k:
        raise ValueError(f"image {h}x{w} smaller than window {k}")
    cdef Py_ssize_t oh = h - k + 1, ow = w - k + 1
    cdef double[:, ::1] tmp = np.empty((h, ow), dtype=np.float64)
    out_arr = np.empty((oh, ow), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, c, t
    cdef double acc
    for r in range(h):
        for c in range(ow):
            acc = 0.0
            for t in range(k):
                acc += win[t] * img[r, c + t]
            tmp[r, c] = acc
    for r in range(oh):
        for c in range(ow):
            acc = 0.0
            for t in range(k):
                acc += win[t] * tmp[r + t, c]
            out[r, c] = acc
    return out_arr


def tau_b_counts(const double[:] x, const double[:] y):
    cdef Py_ssize_t n = x.shape[0], i, j
    if y.shape[0] != n:
        raise ValueError("length mismatch")
    cdef long long s = 0, tx = 0, ty = 0
    cdef double dx, dy
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            if dx == 0.0:
                tx += 1
            if dy == 0.0:
                ty += 1
            if dx * dy > 0.0:
                s += 1
            elif dx * dy < 0.0:
                s -= 1
    return int(s), int(n * (n - 1) // 2), int(tx), int(ty)


def hard_pair_stats(const double[:] y, const double[:] yhat, double tau):
    cdef Py_ssize_t n = y.shape[0], i, j
    if yhat.shape[0] != n:
        raise ValueError("length mismatch")
    cdef double loss = 0.0, gap, dp, hinge
    cdef long long gated = 0, correct = 0
    for i in range(n):
        for j in range(i + 1, n):
            gap = y[i] - y[j]
            if gap == 0.0 or fabs(gap) > tau:
                continue
            gated += 1
            dp = yhat[i] - yhat[j]
            if gap >= 0.0:
                hinge = fabs(gap) - dp
            else:
                hinge = fabs(gap) + dp
            if hinge > 0.0:
                loss += hinge
            if gap * dp > 0.0:
                correct += 1
    return loss, int(gated), int(correct)
