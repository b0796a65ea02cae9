"""Independent reference implementations used only by the tests."""

import itertools
import math

import numpy as np


def enumerate_vertices(A, b, tol=1e-9):
    """Brute force: solve every square subsystem and keep the feasible points."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    d = A.shape[1]
    pts = []
    for rows in itertools.combinations(range(A.shape[0]), d):
        M = A[list(rows)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, b[list(rows)])
        if np.all(A @ x <= b + tol):
            if not any(np.linalg.norm(x - p) < 1e-7 for p in pts):
                pts.append(x)
    return np.array(pts).reshape(-1, d)


def hull_hrep(points, tol=1e-9):
    """Facets of conv(points) in dimension 1-3 by brute force over point subsets."""
    P = np.asarray(points, dtype=float)
    d = P.shape[1]
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([P.max(), -P.min()])
    rows = []
    for idx in itertools.combinations(range(len(P)), d):
        Q = P[list(idx)]
        if d == 2:
            e = Q[1] - Q[0]
            n = np.array([e[1], -e[0]])
        else:
            n = np.cross(Q[1] - Q[0], Q[2] - Q[0])
        nn = np.linalg.norm(n)
        if nn < 1e-10:
            continue
        n = n / nn
        off = n @ Q[0]
        s = P @ n - off
        for sign in (1.0, -1.0):
            if np.all(sign * s <= tol):
                rows.append(np.r_[sign * n, sign * off])
    R = np.array(rows)
    # drop duplicates
    out = []
    for r in R:
        if not any(np.abs(r - o).max() < 1e-8 for o in out):
            out.append(r)
    out = np.array(out)
    return out[:, :d], out[:, d]


def facet_rows(A, b, verts, tol=1e-7):
    """Indices of rows that are tight at d affinely independent vertices."""
    d = A.shape[1]
    keep = []
    for i in range(A.shape[0]):
        tight = verts[np.abs(verts @ A[i] - b[i]) <= tol]
        if len(tight) >= d:
            diffs = tight[1:] - tight[0]
            if d == 1 or (diffs.size and np.linalg.matrix_rank(diffs, tol=1e-8) >= d - 1):
                keep.append(i)
    return keep


def erf_quantile(q, iters=200):
    """Inverse normal CDF by bisection on the erf-based CDF."""
    lo, hi = -40.0, 40.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(-mid / math.sqrt(2.0)) < q:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


def random_polytope(rng, d, m=None, redundant=0):
    """Bounded polytope containing the origin, optionally with implied rows."""
    m = m or int(rng.integers(d + 2, 3 * d + 4))
    A = rng.standard_normal((m, d))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    b = 0.5 + rng.random(m)
    box = np.vstack([np.eye(d), -np.eye(d)])
    A = np.vstack([A, box])
    b = np.r_[b, np.full(2 * d, 3.0)]
    extra_A, extra_b = [], []
    for _ in range(redundant):
        i, j = rng.choice(A.shape[0], size=2, replace=False)
        w = rng.random()
        a = w * A[i] + (1 - w) * A[j]
        extra_A.append(a)
        extra_b.append(w * b[i] + (1 - w) * b[j] + 0.1 + rng.random())
    if extra_A:
        A = np.vstack([A, extra_A])
        b = np.r_[b, extra_b]
    perm = rng.permutation(A.shape[0])
    return A[perm], b[perm]


def riccati_cost(A_list, B_list, Q, R, Qf, x0):
    """Finite-horizon LQ optimum by the backward Riccati recursion."""
    P = Qf
    for A, B in zip(reversed(A_list), reversed(B_list)):
        S = R + B.T @ P @ B
        K = np.linalg.solve(S, B.T @ P @ A)
        P = Q + A.T @ P @ (A - B @ K)
    return float(x0 @ P @ x0)


def deterministic_mpc(window, Q, R, x0, state_rows, control_rows, goal=None):
    """Nominal constrained MPC through cvxpy: stage and terminal weight Q,
    state rows at stages 1..N, control rows at stages 0..N-1."""
    import cvxpy as cp

    N = len(window)
    n_x, n_u = window[0].A.shape[0], window[0].B.shape[1]
    goal = np.zeros(n_x) if goal is None else goal
    x = cp.Variable((N + 1, n_x))
    u = cp.Variable((N, n_u))
    cons = [x[0] == x0]
    cost = 0
    for t, S in enumerate(window):
        cons.append(x[t + 1] == S.A @ x[t] + S.B @ u[t] + S.r)
        cost += cp.quad_form(x[t] - goal, Q) + cp.quad_form(u[t], R)
        for a, bb in control_rows:
            cons.append(a @ u[t] <= bb)
        for a, bb in state_rows:
            cons.append(a @ x[t + 1] <= bb)
    cost += cp.quad_form(x[N] - goal, Q)
    prob = cp.Problem(cp.Minimize(cost), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return prob.status, prob.value
