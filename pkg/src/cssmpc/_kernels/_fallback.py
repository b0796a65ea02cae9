"""Pure-numpy versions of the compiled halfspace kernels.

Semantics match ``_fm.pyx`` row for row so either backend can serve
:mod:`cssmpc.polytope`.
"""

import numpy as np


def normalize_rows(A, b, zero_tol):
    norms = np.sqrt(np.einsum("ij,ij->i", A, A))
    zero = norms <= zero_tol
    infeasible = bool(np.any(b[zero] < -zero_tol))
    keep = ~zero
    return A[keep] / norms[keep, None], b[keep] / norms[keep], infeasible


def merge_duplicates(A, b, tol):
    m = A.shape[0]
    out_b = b.copy()
    kept = []
    for i in range(m):
        if kept:
            diff = np.abs(A[kept] - A[i]).max(axis=1)
            hits = np.flatnonzero(diff <= tol)
            if hits.size:
                r = kept[hits[0]]
                out_b[r] = min(out_b[r], b[i])
                continue
        kept.append(i)
    idx = np.asarray(kept, dtype=np.intp)
    return A[idx].copy(), out_b[idx].copy()


def fm_combine(A, b, col, zero_tol):
    c = A[:, col]
    pos = np.flatnonzero(c > zero_tol)
    neg = np.flatnonzero(c < -zero_tol)
    zer = np.flatnonzero(np.abs(c) <= zero_tol)
    rest = np.delete(A, col, axis=1)
    cp = c[pos][:, None]
    cq = -c[neg][None, :]
    comb_A = (cq[..., None] * rest[pos][:, None, :] + cp[..., None] * rest[neg][None, :, :])
    comb_b = cq * b[pos][:, None] + cp * b[neg][None, :]
    out_A = np.vstack([rest[zer], comb_A.reshape(-1, rest.shape[1])])
    out_b = np.concatenate([b[zer], comb_b.reshape(-1)])
    return np.ascontiguousarray(out_A), out_b


# -- small-dimension LP (same algorithm as _lp.pyx) ---------------------------

DIR_TOL = 1e-11
MULT_TOL = 1e-10
BLOCK_TOL = 1e-10


def _lp_core(A, b, c, extra=None, max_iter=None):
    """Active-set LP ``max c'x, A x <= b`` from the feasible origin.

    ``extra`` is an optional ``(a, beta)`` row appended after ``A``.
    Returns ``(status, x)`` with the status codes of the compiled kernel.
    """
    if extra is not None:
        A = np.vstack([A, extra[0]])
        b = np.r_[b, extra[1]]
    m, d = A.shape
    if max_iter is None:
        max_iter = 20 * (m + d) + 100
    x = np.zeros(d)
    cn = np.linalg.norm(c)
    if cn == 0.0:
        return 0, x
    W = []
    for _ in range(max_iter):
        if W:
            Q, R = np.linalg.qr(A[W].T)
            if np.abs(np.diag(R)).min() < 1e-13:
                return 3, x
            beta = Q.T @ c
            p = c - Q @ beta
            beta2 = Q.T @ p
            p = p - Q @ beta2
            lam = np.linalg.solve(R, beta + beta2)
        else:
            lam = np.zeros(0)
            p = c.copy()
        pn = np.linalg.norm(p)
        if len(W) < d and pn > DIR_TOL * cn:
            den = A @ p
            ok = den > BLOCK_TOL * pn
            ok[W] = False
            if not ok.any():
                return 1, x
            slack = np.maximum(b - A @ x, 0.0)
            steps = np.full(m, np.inf)
            steps[ok] = slack[ok] / den[ok]
            j = int(np.argmin(steps))
            x = x + steps[j] * p
            W.append(j)
        else:
            neg = [i for i in range(len(W)) if lam[i] < -MULT_TOL * cn]
            if not neg:
                return 0, x
            W.pop(min(neg, key=lambda i: W[i]))
    return 2, x


def lp_max(A, b, c, max_iter=0):
    return _lp_core(A, b, np.asarray(c, dtype=float), max_iter=max_iter or None)


def lp_max_many(A, b, C):
    stat = np.zeros(C.shape[0], dtype=np.intc)
    vals = np.empty(C.shape[0])
    for i, c in enumerate(C):
        stat[i], x = _lp_core(A, b, c)
        vals[i] = c @ x
    return stat, vals


def clarkson(A, b, candidate, tol):
    m = A.shape[0]
    state = np.where(np.asarray(candidate, dtype=bool), 0, 2)
    kept = []
    for i in range(m):
        if state[i] != 0:
            continue
        while True:
            st, x = _lp_core(A[kept].reshape(-1, A.shape[1]), b[kept], A[i], extra=(A[i], b[i] + 1.0))
            if st != 0:
                return st, state == 1
            if A[i] @ x <= b[i] + tol:
                state[i] = 2
                break
            den = A @ x
            t = np.full(m, np.inf)
            ok = (state == 0) & (den > 0.0)
            t[ok] = b[ok] / den[ok]
            hit = int(np.argmin(t))
            state[hit] = 1
            kept.append(hit)
            if hit == i:
                break
    return 0, state == 1


def prune(A, b, tol):
    m = A.shape[0]
    active = np.ones(m, dtype=bool)
    for i in range(m):
        others = active.copy()
        others[i] = False
        st, x = _lp_core(A[others], b[others], A[i], extra=(A[i], b[i] + 1.0))
        if st != 0:
            return st, active
        if A[i] @ x <= b[i] + tol:
            active[i] = False
    return 0, active
