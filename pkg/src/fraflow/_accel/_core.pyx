# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the numpy backend (see numpy_backend.py for the
reference semantics and the docstrings)."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv_left(omega, path):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w = np.ascontiguousarray(omega, dtype=np.float64)
    arr = np.ascontiguousarray(path, dtype=np.float64)
    cdef Py_ssize_t n = w.shape[0]
    if arr.ndim == 1:
        return _conv_1d(w, arr, 0)
    flat = arr.reshape(n + 1, -1)
    out = np.zeros((n + 1, flat.shape[1]))
    cdef Py_ssize_t c
    for c in range(flat.shape[1]):
        out[:, c] = _conv_1d(w, np.ascontiguousarray(flat[:, c]), 0)
    return out.reshape((n + 1,) + arr.shape[1:])


def conv_right(omega, path):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w = np.ascontiguousarray(omega, dtype=np.float64)
    arr = np.ascontiguousarray(path, dtype=np.float64)
    cdef Py_ssize_t n = w.shape[0]
    if arr.ndim == 1:
        return _conv_1d(w, arr, 1)
    flat = arr.reshape(n + 1, -1)
    out = np.zeros((n + 1, flat.shape[1]))
    cdef Py_ssize_t c
    for c in range(flat.shape[1]):
        out[:, c] = _conv_1d(w, np.ascontiguousarray(flat[:, c]), 1)
    return out.reshape((n + 1,) + arr.shape[1:])


cdef cnp.ndarray[cnp.float64_t, ndim=1] _conv_1d(
    cnp.ndarray[cnp.float64_t, ndim=1] w,
    cnp.ndarray[cnp.float64_t, ndim=1] p,
    int shift,
):
    cdef Py_ssize_t n = w.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(n + 1)
    cdef Py_ssize_t j, i
    cdef double acc
    for j in range(1, n + 1):
        acc = 0.0
        for i in range(1, j + 1):
            acc += w[j - i] * p[i - 1 + shift]
        out[j] = acc
    return out


def volterra_sn(omega_ell, n):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w = np.ascontiguousarray(omega_ell, dtype=np.float64)
    cdef double nd = n
    cdef Py_ssize_t nn = w.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] s = np.empty(nn + 1)
    cdef double diag = 1.0 + nd * w[0]
    cdef Py_ssize_t j, i
    cdef double hist
    s[0] = 1.0
    for j in range(1, nn + 1):
        hist = 0.0
        for i in range(1, j):
            hist += w[j - i] * s[i]
        s[j] = (1.0 - nd * hist) / diag
    return s


def l1_history(omega, v, j):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w = np.ascontiguousarray(omega, dtype=np.float64)
    arr = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t jj = j
    if arr.ndim == 1:
        return _history_1d(w, arr, jj)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] v2 = arr.reshape(arr.shape[0], -1)
    cdef Py_ssize_t m = v2.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(m)
    cdef Py_ssize_t i, c
    cdef double d
    for i in range(1, jj):
        d = w[jj - i] - w[jj - i - 1]
        for c in range(m):
            out[c] += d * v2[i, c]
    return out.reshape(arr.shape[1:])


cdef double _history_scalar(cnp.ndarray[cnp.float64_t, ndim=1] w,
                            cnp.ndarray[cnp.float64_t, ndim=1] v,
                            Py_ssize_t j):
    cdef double acc = 0.0
    cdef Py_ssize_t i
    for i in range(1, j):
        acc += (w[j - i] - w[j - i - 1]) * v[i]
    return acc


def _history_1d(cnp.ndarray[cnp.float64_t, ndim=1] w,
                cnp.ndarray[cnp.float64_t, ndim=1] v,
                Py_ssize_t j):
    return np.float64(_history_scalar(w, v, j))


def power_prox_abs(a, lam, q, tol=1e-14, max_iter=200):
    arr = np.ascontiguousarray(np.atleast_1d(a), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat = arr.reshape(-1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(flat)
    cdef double lamd = lam, qd = q, told = tol
    cdef Py_ssize_t i
    for i in range(flat.shape[0]):
        out[i] = _power_root(flat[i], lamd, qd, told, max_iter)
    res = out.reshape(arr.shape)
    if np.ndim(a) == 0:
        return res[()] if res.ndim == 0 else res.reshape(())[()]
    return res


cdef double _power_root(double a, double lam, double q, double tol, int max_iter):
    cdef double lo = 0.0, hi = a, r, f, fp, rq, r_new
    cdef int it
    if a <= 0.0:
        return 0.0
    r = a / (1.0 + lam)
    for it in range(max_iter):
        rq = r ** (q - 2.0) if r > 0.0 else 0.0
        f = r + lam * rq * r - a
        if f < 0.0:
            lo = r
        elif f > 0.0:
            hi = r
        if abs(f) <= tol * (1.0 + a):
            return r
        fp = 1.0 + lam * (q - 1.0) * rq
        r_new = r - f / fp
        if r_new <= lo or r_new >= hi or r_new != r_new:
            r = 0.5 * (lo + hi)
        else:
            r = r_new
    return r
