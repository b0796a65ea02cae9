"""H-representation polytopes.

A :class:`Polytope` is the point set ``{x : A x <= b}`` with rows stored at
unit norm. Everything here is value-semantics: operations return new
polytopes and never mutate their inputs.

Single LPs and flat (not full-dimensional) sets go through
:func:`scipy.optimize.linprog` (HiGHS); vertex enumeration and convex hulls
use qhull through :mod:`scipy.spatial`. The bulk work (many small LPs for
redundancy removal and support queries, Fourier-Motzkin row combination,
duplicate merging) runs in :mod:`cssmpc._kernels`.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

from cssmpc import _kernels

#: normals/offsets closer than this are treated as the same row
DUP_TOL = 1e-9
#: slack allowed in LP-based redundancy and containment tests
LP_TOL = 1e-8
#: a coefficient this small is treated as zero when eliminating a column
ZERO_TOL = 1e-12


class Polytope:
    """Intersection of halfspaces ``a_i^T x <= b_i``.

    Construct from a coefficient matrix and offsets; rows are normalized,
    zero rows are dropped (or mark the set empty when their offset is
    negative) and exact duplicates are merged.
    """

    __slots__ = ("A", "b", "dim", "is_empty")

    def __init__(self, A, b, dim: int | None = None):
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.ndim == 1:
            A = A.reshape(1, -1) if A.size else A.reshape(0, dim or 0)
        if dim is None:
            dim = A.shape[1]
        if A.shape != (b.size, dim):
            raise ValueError(f"shape mismatch: A {A.shape}, b {b.shape}, dim {dim}")
        if dim < 1:
            raise ValueError("dimension must be positive")
        A, b, infeasible = _kernels.normalize_rows(np.ascontiguousarray(A), np.ascontiguousarray(b), ZERO_TOL)
        if infeasible:
            A, b = _empty_rows(dim)
        elif A.shape[0]:
            A, b = _kernels.merge_duplicates(np.ascontiguousarray(A), np.ascontiguousarray(b), DUP_TOL)
        A.setflags(write=False)
        b.setflags(write=False)
        self.A = A
        self.b = b
        self.dim = int(dim)
        self.is_empty = bool(infeasible)

    # -- constructors -------------------------------------------------
    @classmethod
    def empty(cls, dim: int) -> "Polytope":
        A, b = _empty_rows(dim)
        return cls(A, b, dim)

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> "Polytope":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        n = lower.size
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.concatenate([upper, -lower]))

    @classmethod
    def from_rows(cls, rows: Iterable[Sequence[float]], dim: int) -> "Polytope":
        """Build from ``[a_1, ..., a_n, b]`` rows (the JSON layout)."""
        arr = np.asarray(list(rows), dtype=float).reshape(-1, dim + 1)
        return cls(arr[:, :dim], arr[:, dim], dim)

    def to_rows(self) -> list[list[float]]:
        return np.hstack([self.A, self.b[:, None]]).tolist()

    # -- basic queries ---------------------------------------------------
    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.dim:
            raise ValueError(f"point has dimension {x.size}, polytope {self.dim}")
        if self.is_empty:
            return False
        return bool(np.all(self.A @ x <= self.b + tol))

    def support(self, direction) -> float:
        """max d^T x over the set; ``inf`` if unbounded, ``-inf`` if empty."""
        if self.is_empty:
            return -np.inf
        status, val, _ = _lp_max(np.asarray(direction, dtype=float), self.A, self.b)
        if status == "unbounded":
            return np.inf
        if status == "infeasible":
            return -np.inf
        return val

    def scale_offsets(self, factor: float) -> "Polytope":
        if self.is_empty:
            return self
        return Polytope(self.A, self.b * factor, self.dim)

    def __repr__(self) -> str:
        if self.is_empty:
            return f"Polytope(dim={self.dim}, empty)"
        return f"Polytope(dim={self.dim}, rows={self.n_rows})"


def _empty_rows(dim: int):
    A = np.zeros((1, dim))
    b = np.array([-1.0])
    return A, b


def _lp_max(c, A, b):
    """Maximize ``c^T x`` s.t. ``A x <= b``. Returns (status, value, x)."""
    n = c.size
    res = linprog(-c, A_ub=A if A.shape[0] else None, b_ub=b if A.shape[0] else None,
                  bounds=[(None, None)] * n, method="highs")
    if res.status == 0:
        return "optimal", float(-res.fun), res.x
    if res.status == 2:
        return "infeasible", -np.inf, None
    if res.status == 3:
        return "unbounded", np.inf, None
    raise RuntimeError(f"LP failed: {res.message}")


def chebyshev_center(P: Polytope):
    """Center and radius of the largest inscribed ball (radius capped at 1e3).

    Radius is negative when the rows are inconsistent.
    """
    if P.is_empty:
        return None, -np.inf
    n = P.dim
    if P.n_rows == 0:
        return np.zeros(n), np.inf
    A = np.hstack([P.A, np.ones((P.n_rows, 1))])
    res = linprog(np.r_[np.zeros(n), -1.0], A_ub=A, b_ub=P.b,
                  bounds=[(None, None)] * n + [(None, 1e3)], method="highs")
    if res.status == 2:
        return None, -np.inf
    if res.status != 0:
        raise RuntimeError(f"Chebyshev LP failed: {res.message}")
    return res.x[:n], float(res.x[n])


def bounding_box(P: Polytope):
    """Coordinate-wise (lower, upper) bounds, with infinities where unbounded."""
    eye = np.eye(P.dim)
    vals = support_many(P, np.vstack([eye, -eye]))
    return -vals[P.dim:], vals[:P.dim]


def is_empty(P: Polytope) -> bool:
    if P.is_empty:
        return True
    _, r = chebyshev_center(P)
    return r < -DUP_TOL


def _interior_point(P: Polytope):
    """A point at least ``DUP_TOL`` inside every row, or None for flat sets."""
    c, r = chebyshev_center(P)
    if c is None or r <= DUP_TOL:
        return None
    return c


def remove_redundancy(P: Polytope) -> Polytope:
    """Drop every row implied (within ``LP_TOL``) by the remaining rows.

    Full-dimensional sets go through the small-LP kernels: Clarkson's
    scheme (each test only sees rows already proven to be facets, new
    facets are found by ray shooting from an interior point) followed by a
    sequential pass over the survivors. Flat sets fall back to one HiGHS LP
    per row. Row order is preserved.
    """
    if P.is_empty or P.n_rows == 0:
        return P
    c = _interior_point(P)
    if c is None:
        if is_empty(P):
            return Polytope.empty(P.dim)
        return _remove_redundancy_highs(P)
    A = np.ascontiguousarray(P.A)
    b = np.ascontiguousarray(P.b - A @ c)
    status, keep = _kernels.clarkson(A, b, np.ones(P.n_rows, dtype=np.uint8), LP_TOL)
    if status != 0:
        return _remove_redundancy_highs(P)
    idx = np.flatnonzero(keep)
    status, keep2 = _kernels.prune(np.ascontiguousarray(A[idx]), np.ascontiguousarray(b[idx]), LP_TOL)
    if status != 0:
        return _remove_redundancy_highs(P)
    idx = idx[keep2]
    return Polytope(P.A[idx], P.b[idx], P.dim)


def _remove_redundancy_highs(P: Polytope) -> Polytope:
    A, b = P.A, P.b
    m = A.shape[0]
    active = np.ones(m, dtype=bool)
    for i in range(m):
        active[i] = False
        others = np.flatnonzero(active)
        A_ub = np.vstack([A[others], A[i]])
        b_ub = np.r_[b[others], b[i] + 1.0]
        status, val, _ = _lp_max(A[i], A_ub, b_ub)
        if status != "optimal" or val > b[i] + LP_TOL:
            active[i] = True
    idx = np.flatnonzero(active)
    return Polytope(A[idx], b[idx], P.dim)


def support_many(P: Polytope, directions) -> np.ndarray:
    """Support values of ``P`` for each row of ``directions``."""
    D = np.atleast_2d(np.asarray(directions, dtype=float))
    if P.is_empty:
        return np.full(D.shape[0], -np.inf)
    c = _interior_point(P) if P.n_rows else None
    if c is not None:
        A = np.ascontiguousarray(P.A)
        status, vals = _kernels.lp_max_many(A, np.ascontiguousarray(P.b - A @ c), np.ascontiguousarray(D))
        vals = vals + D @ c
        vals[status == 1] = np.inf
        bad = (status != 0) & (status != 1)
        for i in np.flatnonzero(bad):
            vals[i] = P.support(D[i])
        return vals
    return np.array([P.support(d) for d in D])


def intersect(P: Polytope, Q: Polytope, reduce: bool = True) -> Polytope:
    if P.dim != Q.dim:
        raise ValueError(f"dimension mismatch: {P.dim} vs {Q.dim}")
    if P.is_empty:
        return P
    if Q.is_empty:
        return Q
    R = Polytope(np.vstack([P.A, Q.A]), np.r_[P.b, Q.b], P.dim)
    return remove_redundancy(R) if reduce else R


def is_subset(P: Polytope, Q: Polytope, tol: float = LP_TOL) -> bool:
    """True iff every row of ``Q`` holds over ``P`` within ``tol``."""
    if P.dim != Q.dim:
        raise ValueError(f"dimension mismatch: {P.dim} vs {Q.dim}")
    if P.is_empty or is_empty(P):
        return True
    if Q.is_empty:
        return False
    return bool(np.all(support_many(P, Q.A) <= Q.b + tol))


def equals(P: Polytope, Q: Polytope, tol: float = LP_TOL) -> bool:
    return is_subset(P, Q, tol) and is_subset(Q, P, tol)


def contains_point(P: Polytope, x, tol: float = 1e-9) -> bool:
    return P.contains(x, tol)


def eliminate_variable(P: Polytope, col: int) -> Polytope:
    """Fourier-Motzkin step removing coordinate ``col``, then redundancy removal."""
    if P.is_empty:
        return Polytope.empty(P.dim - 1)
    A, b = _kernels.fm_combine(np.ascontiguousarray(P.A), np.ascontiguousarray(P.b), col, ZERO_TOL)
    return remove_redundancy(Polytope(A, b, P.dim - 1))


def project_eliminate(P: Polytope, keep: Sequence[int]) -> Polytope:
    """Orthogonal projection onto the coordinates in ``keep`` (in that order
    of appearance in the original coordinates)."""
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise ValueError("keep must be nonempty")
    if keep[0] < 0 or keep[-1] >= P.dim:
        raise ValueError(f"keep indices out of range for dim {P.dim}")
    drop = [j for j in range(P.dim) if j not in keep]
    if P.is_empty:
        return Polytope.empty(len(keep))
    Q = remove_redundancy(P)
    cols = list(range(P.dim))
    while drop:
        if Q.is_empty:
            return Polytope.empty(len(keep))
        # cheapest column first: fewest generated pairs
        costs = []
        for j in drop:
            c = Q.A[:, cols.index(j)]
            costs.append(int((c > ZERO_TOL).sum()) * int((c < -ZERO_TOL).sum()))
        j = drop[int(np.argmin(costs))]
        Q = eliminate_variable(Q, cols.index(j))
        cols.remove(j)
        drop.remove(j)
    return Q


def pre_set(target: Polytope, hull, controls: Polytope, common_input: bool = True) -> Polytope:
    """One-step robust pre-set of ``target`` under the hull.

    With ``common_input`` (default) a single feedforward must serve every
    vertex: ``{mu : exists v in controls, A_l mu + B_l v + r_l in target for all l}``.
    Otherwise each vertex may use its own feedforward, which gives the
    intersection of the single-vertex pre-sets.
    """
    n_x = hull.n_x
    n_u = hull.n_u
    if target.dim != n_x or controls.dim != n_u:
        raise ValueError("target/controls dimensions do not match the hull")
    if target.is_empty or controls.is_empty:
        return Polytope.empty(n_x)
    if not common_input:
        pieces = []
        for S in hull.vertices:
            single = _pre_single_minkowski(target, S, controls)
            if single is None:
                single = pre_set(target, _SingleVertex(S), controls)
            if single.is_empty:
                return Polytope.empty(n_x)
            pieces.append(single)
        out = Polytope(np.vstack([p.A for p in pieces]), np.concatenate([p.b for p in pieces]), n_x)
        return remove_redundancy(out)
    H, h = target.A, target.b
    blocks_A = []
    blocks_b = []
    for S in hull.vertices:
        blocks_A.append(np.hstack([H @ S.A, H @ S.B]))
        blocks_b.append(h - H @ S.r)
    blocks_A.append(np.hstack([np.zeros((controls.n_rows, n_x)), controls.A]))
    blocks_b.append(controls.b)
    lifted = Polytope(np.vstack(blocks_A), np.concatenate(blocks_b), n_x + n_u)
    return project_eliminate(lifted, range(n_x))


class _SingleVertex:
    def __init__(self, S):
        self.vertices = (S,)
        self.n_x = S.n_x
        self.n_u = S.n_u


#: largest state dimension for which the qhull pre-set path is tried
QHULL_MAX_DIM = 6


def vertices(P: Polytope) -> np.ndarray | None:
    """Vertices of a bounded full-dimensional polytope (qhull), else None."""
    if P.is_empty:
        return None
    c = _interior_point(P)
    if c is None:
        return None
    if P.dim == 1:
        lo, hi = -P.support([-1.0]), P.support([1.0])
        if not (np.isfinite(lo) and np.isfinite(hi)):
            return None
        return np.array([[lo], [hi]])
    if not np.all(np.isfinite(bounding_box(P)[1])) or not np.all(np.isfinite(bounding_box(P)[0])):
        return None
    try:
        hs = HalfspaceIntersection(np.hstack([P.A, -P.b[:, None]]), c)
    except QhullError:
        return None
    return hs.intersections


def _pre_single_minkowski(target: Polytope, S, controls: Polytope) -> Polytope | None:
    """``{mu : A mu + r in target + (-B) controls}`` through vertex enumeration.

    Only used for invertible ``A`` and small bounded sets; returns None when
    that route does not apply so the caller can fall back to elimination.
    Facet normals come from qhull, offsets are recomputed exactly as support
    values over the generating points.
    """
    n = target.dim
    if n < 2 or n > QHULL_MAX_DIM or np.linalg.cond(S.A) > 1e10:
        return None
    V = vertices(target)
    W = vertices(controls)
    if V is None or W is None:
        return None
    pts = (V[:, None, :] - (W @ S.B.T)[None, :, :]).reshape(-1, n)
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return None
    N = hull.equations[:, :-1]
    N = N / np.linalg.norm(N, axis=1, keepdims=True)
    off = np.max(pts @ N.T, axis=0)
    return Polytope(N @ S.A, off - N @ S.r, n)
