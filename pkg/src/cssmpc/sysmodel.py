"""LTV system realizations, polytopic parameter hulls and Gaussian beliefs.

The moment arithmetic here is what the online controller predicts with and
what the closed-loop simulator propagates: a belief ``N(mu, Sigma)`` under an
affine state-feedback policy ``u = v + L (x - mu)`` has

    mean'  = A mu + B v + r
    cov'   = A S A' + A S L' B' + B L S A' + B L S L' B' + D D'

which is ``(A + B L) S (A + B L)' + D D'``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SYM_TOL = 1e-10
NEG_EIG_TOL = 1e-8


def _mat(x, shape=None) -> np.ndarray:
    arr = np.array(x, dtype=float, ndmin=2)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


def _vec(x) -> np.ndarray:
    arr = np.array(x, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def clamp_psd(M: np.ndarray, tol: float = NEG_EIG_TOL) -> np.ndarray:
    """Symmetrize and clamp tiny negative eigenvalues to zero.

    Raises ``ValueError`` for eigenvalues below ``-tol``.
    """
    M = symmetrize(np.asarray(M, dtype=float))
    if M.size == 0:
        return M
    w, V = np.linalg.eigh(M)
    if w[0] < -tol * max(1.0, abs(w[-1])):
        raise ValueError(f"matrix is not PSD (min eigenvalue {w[0]:.3e})")
    if w[0] >= 0:
        return M
    w = np.clip(w, 0.0, None)
    return symmetrize((V * w) @ V.T)


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root with negative eigenvalues clamped at 0."""
    w, V = np.linalg.eigh(symmetrize(M))
    w = np.sqrt(np.clip(w, 0.0, None))
    return symmetrize((V * w) @ V.T)


@dataclass(frozen=True)
class SystemRealization:
    """One realization ``x+ = A x + B u + D w + r``."""

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        A = _mat(self.A)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        B = _mat(self.B)
        if B.shape[0] != n:
            B = _mat(np.asarray(self.B, dtype=float).reshape(n, -1))
        D = _mat(self.D)
        if D.shape[0] != n:
            D = _mat(np.asarray(self.D, dtype=float).reshape(n, -1))
        r = _vec(self.r)
        if r.size != n:
            raise ValueError(f"r must have length {n}, got {r.size}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "r", r)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_w(self) -> int:
        return self.D.shape[1]

    def stacked(self) -> np.ndarray:
        """``[A B D r]`` as one matrix."""
        return np.hstack([self.A, self.B, self.D, self.r[:, None]])

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist(), "D": self.D.tolist(), "r": self.r.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SystemRealization":
        return cls(d["A"], d["B"], d["D"], d["r"])


@dataclass(frozen=True)
class ParameterHull:
    """Convex hull of vertex realizations."""

    vertices: tuple

    def __post_init__(self):
        verts = tuple(self.vertices)
        if not verts:
            raise ValueError("a parameter hull needs at least one vertex")
        shapes = {(v.A.shape, v.B.shape, v.D.shape) for v in verts}
        if len(shapes) != 1:
            raise ValueError(f"vertex shapes differ: {shapes}")
        object.__setattr__(self, "vertices", verts)

    @property
    def n_x(self) -> int:
        return self.vertices[0].n_x

    @property
    def n_u(self) -> int:
        return self.vertices[0].n_u

    @property
    def n_w(self) -> int:
        return self.vertices[0].n_w

    def __len__(self) -> int:
        return len(self.vertices)

    def membership_weights(self, sys: SystemRealization, tol: float = 1e-9):
        """Convex weights expressing ``sys`` in the hull, or ``None``.

        Diagnostic only: solves a feasibility LP over the simplex.
        """
        from scipy.optimize import linprog

        V = np.stack([v.stacked().ravel() for v in self.vertices], axis=1)
        target = sys.stacked().ravel()
        n_p = V.shape[1]
        # minimize total absolute residual s.t. weights on the simplex
        m = V.shape[0]
        c = np.r_[np.zeros(n_p), np.ones(2 * m)]
        A_eq = np.vstack([
            np.hstack([V, np.eye(m), -np.eye(m)]),
            np.r_[np.ones(n_p), np.zeros(2 * m)][None, :],
        ])
        b_eq = np.r_[target, 1.0]
        res = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * (n_p + 2 * m), method="highs")
        if res.status != 0 or res.fun > tol * max(1.0, np.abs(target).max()):
            return None
        return res.x[:n_p]

    def to_dict(self) -> dict:
        return {"vertices": [v.to_dict() for v in self.vertices]}

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterHull":
        return cls(tuple(SystemRealization.from_dict(v) for v in d["vertices"]))


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _vec(self.mean)
        cov = np.array(self.cov, dtype=float, ndmin=2)
        n = mean.size
        if cov.shape != (n, n):
            raise ValueError(f"covariance shape {cov.shape} does not match mean length {n}")
        if np.abs(cov - cov.T).max(initial=0.0) > SYM_TOL * max(1.0, np.abs(cov).max(initial=0.0)):
            raise ValueError("covariance is not symmetric")
        cov = clamp_psd(cov)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def point(cls, x) -> "GaussianBelief":
        x = np.asarray(x, dtype=float).reshape(-1)
        return cls(x, np.zeros((x.size, x.size)))

    @property
    def n(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class StageCost:
    Q: np.ndarray
    R: np.ndarray
    x_goal: np.ndarray

    def __post_init__(self):
        Q = _mat(self.Q)
        R = _mat(self.R)
        xg = _vec(self.x_goal)
        if Q.shape != (xg.size, xg.size):
            raise ValueError("Q and goal dimensions disagree")
        if np.linalg.eigvalsh(symmetrize(Q))[0] < -NEG_EIG_TOL:
            raise ValueError("Q must be positive semidefinite")
        try:
            np.linalg.cholesky(symmetrize(R))
        except np.linalg.LinAlgError:
            raise ValueError("R must be positive definite") from None
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "x_goal", xg)


@dataclass(frozen=True)
class ChanceRow:
    a: np.ndarray
    b: float
    p: float

    def __post_init__(self):
        object.__setattr__(self, "a", _vec(self.a))
        object.__setattr__(self, "b", float(self.b))
        if not (0.0 < self.p <= 0.5):
            raise ValueError(f"violation probability must lie in (0, 0.5], got {self.p}")
        object.__setattr__(self, "p", float(self.p))


@dataclass(frozen=True)
class ChanceSpec:
    """Per-row chance constraints ``Pr(a^T x <= b) >= 1 - p`` on states and controls."""

    state_rows: tuple = field(default_factory=tuple)
    control_rows: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "state_rows", tuple(self.state_rows))
        object.__setattr__(self, "control_rows", tuple(self.control_rows))

    @classmethod
    def from_polytopes(cls, X, U, p_x, p_u) -> "ChanceSpec":
        """Rows of ``X`` and ``U`` (as given, not re-normalized) with scalar or per-row probabilities."""
        p_x = np.broadcast_to(np.asarray(p_x, dtype=float), (X.n_rows,))
        p_u = np.broadcast_to(np.asarray(p_u, dtype=float), (U.n_rows,))
        return cls(
            tuple(ChanceRow(a, b, p) for a, b, p in zip(X.A, X.b, p_x)),
            tuple(ChanceRow(a, b, p) for a, b, p in zip(U.A, U.b, p_u)),
        )

    def state_polytope(self, dim: int):
        from cssmpc.polytope import Polytope
        return Polytope([r.a for r in self.state_rows], [r.b for r in self.state_rows], dim)

    def control_polytope(self, dim: int):
        from cssmpc.polytope import Polytope
        return Polytope([r.a for r in self.control_rows], [r.b for r in self.control_rows], dim)


def policy_moments(belief: GaussianBelief, v, L):
    """Mean, state-control cross covariance and control covariance of
    ``u = v + L (x - mu)``."""
    v = np.asarray(v, dtype=float).reshape(-1)
    L = np.array(L, dtype=float, ndmin=2)
    S = belief.cov
    S_xu = S @ L.T
    S_u = symmetrize(L @ S @ L.T)
    return v.copy(), S_xu, S_u


def step_moments(belief: GaussianBelief, policy, sys: SystemRealization) -> GaussianBelief:
    u_bar, S_xu, S_u = policy
    A, B, D = sys.A, sys.B, sys.D
    mean = A @ belief.mean + B @ np.asarray(u_bar, dtype=float).reshape(-1) + sys.r
    cross = A @ S_xu @ B.T
    cov = A @ belief.cov @ A.T + cross + cross.T + B @ S_u @ B.T + D @ D.T
    return GaussianBelief(mean, symmetrize(cov))


def sample_step(x, u, sys: SystemRealization, rng: np.random.Generator) -> np.ndarray:
    w = rng.standard_normal(sys.n_w)
    return sys.A @ np.asarray(x, dtype=float) + sys.B @ np.asarray(u, dtype=float).reshape(-1) + sys.D @ w + sys.r


# Acklam's rational approximation to the inverse normal CDF
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def _acklam(q: float) -> float:
    if q < _P_LOW:
        s = math.sqrt(-2.0 * math.log(q))
        return (((((_C[0] * s + _C[1]) * s + _C[2]) * s + _C[3]) * s + _C[4]) * s + _C[5]) / \
            ((((_D[0] * s + _D[1]) * s + _D[2]) * s + _D[3]) * s + 1.0)
    if q > 1.0 - _P_LOW:
        return -_acklam(1.0 - q)
    s = q - 0.5
    t = s * s
    return (((((_A[0] * t + _A[1]) * t + _A[2]) * t + _A[3]) * t + _A[4]) * t + _A[5]) * s / \
        (((((_B[0] * t + _B[1]) * t + _B[2]) * t + _B[3]) * t + _B[4]) * t + 1.0)


def _upper_tail(x: float) -> float:
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def normal_quantile(q: float) -> float:
    """Inverse standard normal CDF, accurate to about 1e-12 on (1e-10, 1 - 1e-10)."""
    q = float(q)
    if not (0.0 < q < 1.0):
        raise ValueError(f"quantile level must lie in (0, 1), got {q}")
    if q == 0.5:
        return 0.0
    # work in the lower tail and reflect, so both halves are exact mirrors
    if q > 0.5:
        return -normal_quantile(1.0 - q) if (1.0 - q) > 0 else math.inf
    x = _acklam(q)
    for _ in range(2):
        # Newton on Phi(x) = q, Phi evaluated through erfc for tail accuracy
        err = _upper_tail(-x) - q
        pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        x -= err / pdf
    return x
