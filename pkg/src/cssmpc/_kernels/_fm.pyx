# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled halfspace kernels: row normalization, duplicate merge and
single-variable Fourier-Motzkin combination."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()


def normalize_rows(const double[:, ::1] A, const double[::1] b, double zero_tol):
    """Scale rows to unit norm; drop zero rows. Returns (A, b, infeasible)."""
    cdef Py_ssize_t m = A.shape[0], n = A.shape[1]
    cdef Py_ssize_t i, j, k = 0
    cdef double nrm
    cdef bint infeasible = False
    out_A = np.empty((m, n), dtype=np.float64)
    out_b = np.empty(m, dtype=np.float64)
    cdef double[:, ::1] oA = out_A
    cdef double[::1] ob = out_b
    for i in range(m):
        nrm = 0.0
        for j in range(n):
            nrm += A[i, j] * A[i, j]
        nrm = sqrt(nrm)
        if nrm <= zero_tol:
            if b[i] < -zero_tol:
                infeasible = True
            continue
        for j in range(n):
            oA[k, j] = A[i, j] / nrm
        ob[k] = b[i] / nrm
        k += 1
    return out_A[:k].copy(), out_b[:k].copy(), infeasible


def merge_duplicates(const double[:, ::1] A, const double[::1] b, double tol):
    """Greedy merge of rows whose normals agree within ``tol`` (max-norm);
    the merged row keeps the smallest offset. Row order of first occurrence
    is preserved."""
    cdef Py_ssize_t m = A.shape[0], n = A.shape[1]
    cdef Py_ssize_t i, j, r, nk = 0
    cdef bint same
    keep = np.empty(m, dtype=np.intp)
    cdef Py_ssize_t[::1] kp = keep
    out_b = np.asarray(b).copy()
    cdef double[::1] ob = out_b
    for i in range(m):
        same = False
        for r in range(nk):
            same = True
            for j in range(n):
                if fabs(A[i, j] - A[kp[r], j]) > tol:
                    same = False
                    break
            if same:
                if b[i] < ob[kp[r]]:
                    ob[kp[r]] = b[i]
                break
        if not same:
            kp[nk] = i
            nk += 1
    idx = keep[:nk]
    return np.asarray(A)[idx].copy(), out_b[idx].copy()


def fm_combine(const double[:, ::1] A, const double[::1] b, Py_ssize_t col, double zero_tol):
    """Eliminate column ``col``: keep rows with a zero coefficient, add every
    positive/negative pair combination, drop the column."""
    cdef Py_ssize_t m = A.shape[0], n = A.shape[1]
    cdef Py_ssize_t i, j, p, q, k = 0, c
    cdef double cp, cq
    pos = [i for i in range(m) if A[i, col] > zero_tol]
    neg = [i for i in range(m) if A[i, col] < -zero_tol]
    zer = [i for i in range(m) if fabs(A[i, col]) <= zero_tol]
    cdef Py_ssize_t total = len(zer) + len(pos) * len(neg)
    out_A = np.empty((total, n - 1), dtype=np.float64)
    out_b = np.empty(total, dtype=np.float64)
    cdef double[:, ::1] oA = out_A
    cdef double[::1] ob = out_b
    for i in zer:
        c = 0
        for j in range(n):
            if j != col:
                oA[k, c] = A[i, j]
                c += 1
        ob[k] = b[i]
        k += 1
    for p in pos:
        cp = A[p, col]
        for q in neg:
            cq = -A[q, col]
            c = 0
            for j in range(n):
                if j != col:
                    oA[k, c] = cq * A[p, j] + cp * A[q, j]
                    c += 1
            ob[k] = cq * b[p] + cp * b[q]
            k += 1
    return out_A, out_b
