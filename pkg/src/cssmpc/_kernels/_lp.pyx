# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled small-dimension LP kernels.

All programs have the form ``max c'x  s.t.  a_j'x <= b_j`` with free ``x``
of low dimension and the origin feasible (callers shift coordinates to an
interior point first). The solver is a primal active-set method: walk from
the origin along the projected objective until a row blocks, and release
rows whose multipliers turn negative, using smallest-index choices to
avoid cycling.

Projections use an orthonormal basis of the working rows, never the
normal equations, so nearly parallel rows do not wreck the direction.

Status codes: 0 optimal, 1 unbounded, 2 iteration limit, 3 singular working set.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()

DEF MAXD = 32

cdef double DIR_TOL = 1e-11
cdef double BLOCK_TOL = 1e-10
cdef double MULT_TOL = 1e-10


cdef inline double _row_dot(const double* A, int row, int d, const double* v) nogil:
    cdef int j
    cdef double s = 0.0
    for j in range(d):
        s += A[row * d + j] * v[j]
    return s


cdef int _lp_core(const double* A, const double* b, int d,
                  const int* rows, int n_rows,
                  const double* extra_a, double extra_b, bint use_extra,
                  const double* c, double* x, int max_iter) nogil:
    """Active-set LP over ``rows`` of (A, b) plus an optional extra row.

    Row id ``n_rows`` in the working set refers to the extra row. ``x``
    receives the final point.
    """
    cdef int W[MAXD]
    cdef double Q[MAXD * MAXD]
    cdef double L[MAXD * MAXD]
    cdef double lam[MAXD]
    cdef double p[MAXD]
    cdef int k = 0
    cdef int it, i, j, r, s, t_id, best_id, drop
    cdef double pn, cn, den, slack, step, best_step, ai_p
    cdef const double* ar
    cdef const double* as_
    cdef int total = n_rows + (1 if use_extra else 0)
    cdef bint skip

    for j in range(d):
        x[j] = 0.0
    cn = 0.0
    for j in range(d):
        cn += c[j] * c[j]
    cn = sqrt(cn)
    if cn == 0.0:
        return 0

    for it in range(max_iter):
        # orthonormal basis of the working rows (Gram-Schmidt, two passes),
        # a_i = sum_j L[i, j] q_j with L lower triangular
        for i in range(k):
            ar = extra_a if W[i] == n_rows else A + rows[W[i]] * d
            for j in range(d):
                Q[i * MAXD + j] = ar[j]
            for s in range(k):
                L[i * MAXD + s] = 0.0
            for r in range(2):
                for s in range(i):
                    den = 0.0
                    for j in range(d):
                        den += Q[s * MAXD + j] * Q[i * MAXD + j]
                    L[i * MAXD + s] += den
                    for j in range(d):
                        Q[i * MAXD + j] -= den * Q[s * MAXD + j]
            den = 0.0
            for j in range(d):
                den += Q[i * MAXD + j] * Q[i * MAXD + j]
            den = sqrt(den)
            if den < 1e-13:
                return 3
            L[i * MAXD + i] = den
            for j in range(d):
                Q[i * MAXD + j] /= den
        # projected objective p = c - sum beta_j q_j, multipliers from L' lam = beta
        for j in range(d):
            p[j] = c[j]
        for i in range(k):
            lam[i] = 0.0
        for r in range(2):
            for i in range(k):
                den = 0.0
                for j in range(d):
                    den += Q[i * MAXD + j] * p[j]
                lam[i] += den
                for j in range(d):
                    p[j] -= den * Q[i * MAXD + j]
        for i in range(k - 1, -1, -1):
            den = lam[i]
            for s in range(i + 1, k):
                den -= L[s * MAXD + i] * lam[s]
            lam[i] = den / L[i * MAXD + i]
        pn = 0.0
        for j in range(d):
            pn += p[j] * p[j]
        pn = sqrt(pn)

        # a full working set pins a vertex; any leftover p is roundoff
        if k < d and pn > DIR_TOL * cn:
            # ratio test along p
            best_id = -1
            best_step = 0.0
            for t_id in range(total):
                skip = False
                for i in range(k):
                    if W[i] == t_id:
                        skip = True
                        break
                if skip:
                    continue
                if t_id == n_rows:
                    ar = extra_a
                    slack = extra_b
                else:
                    ar = A + rows[t_id] * d
                    slack = b[rows[t_id]]
                den = 0.0
                ai_p = 0.0
                for j in range(d):
                    den += ar[j] * p[j]
                    ai_p += ar[j] * x[j]
                if den <= BLOCK_TOL * pn:
                    continue
                slack = slack - ai_p
                if slack < 0.0:
                    slack = 0.0
                step = slack / den
                if best_id < 0 or step < best_step:
                    best_step = step
                    best_id = t_id
            if best_id < 0:
                return 1
            for j in range(d):
                x[j] += best_step * p[j]
            W[k] = best_id
            k += 1
        else:
            # stationary on the working face: release the first negative multiplier
            drop = -1
            for i in range(k):
                if lam[i] < -MULT_TOL * cn:
                    if drop < 0 or W[i] < W[drop]:
                        drop = i
            if drop < 0:
                return 0
            for i in range(drop, k - 1):
                W[i] = W[i + 1]
            k -= 1
    return 2


def lp_max(const double[:, ::1] A, const double[::1] b, const double[::1] c, int max_iter=0):
    """Maximize ``c'x`` over ``A x <= b`` starting from the (feasible) origin.

    Returns ``(status, x)``.
    """
    cdef int m = A.shape[0], d = A.shape[1]
    if d > MAXD:
        raise ValueError("dimension too large for the compiled LP kernel")
    if max_iter <= 0:
        max_iter = 20 * (m + d) + 100
    rows_arr = np.arange(m, dtype=np.intc)
    cdef int[::1] rows = rows_arr
    x_arr = np.zeros(d)
    cdef double[::1] x = x_arr
    cdef double dummy = 0.0
    cdef int status
    cdef const double* Ap = &A[0, 0] if m > 0 else NULL
    cdef const double* bp = &b[0] if m > 0 else NULL
    cdef int* rp = &rows[0] if m > 0 else NULL
    with nogil:
        status = _lp_core(Ap, bp, d, rp, m, &dummy, 0.0, False, &c[0], &x[0], max_iter)
    return status, x_arr


def lp_max_many(const double[:, ::1] A, const double[::1] b, const double[:, ::1] C):
    """Row-wise ``max C[i]'x`` over ``A x <= b``; returns (status, values)."""
    cdef int m = A.shape[0], d = A.shape[1], q = C.shape[0]
    if d > MAXD:
        raise ValueError("dimension too large for the compiled LP kernel")
    rows_arr = np.arange(m, dtype=np.intc)
    cdef int[::1] rows = rows_arr
    vals_arr = np.empty(q)
    stat_arr = np.zeros(q, dtype=np.intc)
    cdef double[::1] vals = vals_arr
    cdef int[::1] stat = stat_arr
    cdef double x[MAXD]
    cdef double dummy = 0.0
    cdef int i, j, st
    cdef int max_iter = 20 * (m + d) + 100
    cdef const double* Ap = &A[0, 0] if m > 0 else NULL
    cdef const double* bp = &b[0] if m > 0 else NULL
    cdef int* rp = &rows[0] if m > 0 else NULL
    with nogil:
        for i in range(q):
            st = _lp_core(Ap, bp, d, rp, m, &dummy, 0.0, False, &C[i, 0], x, max_iter)
            stat[i] = st
            vals[i] = 0.0
            for j in range(d):
                vals[i] += C[i, j] * x[j]
    return stat_arr, vals_arr


def clarkson(const double[:, ::1] A, const double[::1] b, const unsigned char[::1] candidate, double tol):
    """Nonredundant subset of the candidate rows of ``{x : A x <= b}``.

    The origin must be strictly interior. Non-candidate rows are taken as
    already known to be redundant. Returns ``(status, keep)`` where ``keep``
    is a boolean mask; status is nonzero if an LP failed, in which case the
    mask is meaningless.
    """
    cdef int m = A.shape[0], d = A.shape[1]
    if d > MAXD:
        raise ValueError("dimension too large for the compiled LP kernel")
    state_arr = np.zeros(m, dtype=np.intc)  # 0 open, 1 kept, 2 redundant
    cdef int[::1] state = state_arr
    kept_arr = np.empty(m, dtype=np.intc)
    cdef int[::1] kept = kept_arr
    cdef int n_kept = 0
    cdef double x[MAXD]
    cdef int i, j, st, hit, status = 0
    cdef double val, t, best_t, den
    cdef int max_iter = 20 * (m + d) + 100
    cdef const double* Ap = &A[0, 0]
    cdef const double* bp = &b[0]
    for i in range(m):
        if not candidate[i]:
            state[i] = 2
    with nogil:
        for i in range(m):
            if state[i] != 0:
                continue
            while True:
                st = _lp_core(Ap, bp, d, &kept[0], n_kept, Ap + i * d, bp[i] + 1.0, True,
                              Ap + i * d, x, max_iter)
                if st != 0:
                    status = st
                    break
                val = _row_dot(Ap, i, d, x)
                if val <= bp[i] + tol:
                    state[i] = 2
                    break
                # shoot from the origin towards x; the first open row hit is a facet
                hit = -1
                best_t = 0.0
                for j in range(m):
                    if state[j] != 0:
                        continue
                    den = _row_dot(Ap, j, d, x)
                    if den <= 0.0:
                        continue
                    t = bp[j] / den
                    if hit < 0 or t < best_t:
                        best_t = t
                        hit = j
                state[hit] = 1
                kept[n_kept] = hit
                n_kept += 1
                if hit == i:
                    break
            if status != 0:
                break
    return status, state_arr == 1


def prune(const double[:, ::1] A, const double[::1] b, double tol):
    """Sequentially drop rows implied by the remaining rows (origin interior).

    Returns ``(status, keep)``.
    """
    cdef int m = A.shape[0], d = A.shape[1]
    if d > MAXD:
        raise ValueError("dimension too large for the compiled LP kernel")
    active_arr = np.ones(m, dtype=np.intc)
    cdef int[::1] active = active_arr
    rows_arr = np.empty(m, dtype=np.intc)
    cdef int[::1] rows = rows_arr
    cdef double x[MAXD]
    cdef int i, j, n, st, status = 0
    cdef int max_iter = 20 * (m + d) + 100
    cdef const double* Ap = &A[0, 0]
    cdef const double* bp = &b[0]
    with nogil:
        for i in range(m):
            n = 0
            for j in range(m):
                if j != i and active[j]:
                    rows[n] = j
                    n += 1
            st = _lp_core(Ap, bp, d, &rows[0], n, Ap + i * d, bp[i] + 1.0, True, Ap + i * d, x, max_iter)
            if st != 0:
                status = st
                break
            if _row_dot(Ap, i, d, x) <= bp[i] + tol:
                active[i] = 0
    return status, active_arr.astype(bool)
