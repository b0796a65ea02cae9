"""Online covariance-steering SMPC.

The horizon problem is written over stacked predictions

    X = A_bar x_k + B_bar U + D_bar W + r_bar,

with the control parameterized by disturbance-affine feedback on the error
of the uncontrolled system, ``U = V + K Y`` and ``Y = A_bar (x_k - mu_k) +
D_bar W``. With ``CovY = Cov(Y)`` and its symmetric root ``S_Y`` the state
error is ``(I + B_bar K) Y``, so every moment that enters the cost and the
chance constraints is affine in ``(V, K)`` up to a norm, and the whole
problem is a second-order cone program plus one LMI for the terminal
covariance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import qr, solve_triangular
from scipy.optimize import linprog

from cssmpc import conic
from cssmpc.sysmodel import (
    ChanceSpec,
    GaussianBelief,
    StageCost,
    SystemRealization,
    normal_quantile,
    psd_sqrt,
    symmetrize,
)

log = logging.getLogger(__name__)

DIAGONAL = "diagonal"
LOWER = "lower-triangular"
ZERO = "zero"
GAIN_MODES = (DIAGONAL, LOWER, ZERO)

STATIC = "static"
DYNAMIC = "dynamic"

TAG_INITIAL = "initial"
TAG_OPEN_LOOP = "open-loop"
TAG_RECONDITIONED = "reconditioned"


class SMPCError(RuntimeError):
    pass


class SolverFailure(SMPCError):
    """The conic solver broke down (distinct from a certified infeasibility)."""


class TerminalSetError(SMPCError):
    """No admissible terminal feedforward exists for a mean in the terminal set."""


# -- prediction matrices --------------------------------------------------------

@dataclass(frozen=True)
class BlockMatrices:
    a_bar: np.ndarray
    b_bar: np.ndarray
    d_bar: np.ndarray
    r_bar: np.ndarray
    n_x: int
    n_u: int
    n_w: int
    horizon: int

    def stage(self, M: np.ndarray, t: int) -> np.ndarray:
        """Row block ``t`` of a stacked state quantity."""
        return M[t * self.n_x:(t + 1) * self.n_x]


def transition(window: Sequence[SystemRealization], t: int, j: int) -> np.ndarray:
    """``Phi(t, j) = A_{t-1} ... A_j`` (identity when ``t == j``)."""
    n = window[0].n_x
    P = np.eye(n)
    for s in range(j, t):
        P = window[s].A @ P
    return P


def build_block_matrices(window: Sequence[SystemRealization]) -> BlockMatrices:
    N = len(window)
    if N < 1:
        raise ValueError("window must hold at least one realization")
    n_x, n_u, n_w = window[0].n_x, window[0].n_u, window[0].n_w
    a_bar = np.zeros(((N + 1) * n_x, n_x))
    b_bar = np.zeros(((N + 1) * n_x, N * n_u))
    d_bar = np.zeros(((N + 1) * n_x, N * n_w))
    r_bar = np.zeros((N + 1) * n_x)
    a_bar[:n_x] = np.eye(n_x)
    for t in range(1, N + 1):
        S = window[t - 1]
        rows = slice(t * n_x, (t + 1) * n_x)
        prev = slice((t - 1) * n_x, t * n_x)
        # X_t = A_{t-1} X_{t-1} + B_{t-1} u_{t-1} + D_{t-1} w_{t-1} + r_{t-1}
        a_bar[rows] = S.A @ a_bar[prev]
        b_bar[rows] = S.A @ b_bar[prev]
        b_bar[rows, (t - 1) * n_u:t * n_u] = S.B
        d_bar[rows] = S.A @ d_bar[prev]
        d_bar[rows, (t - 1) * n_w:t * n_w] = S.D
        r_bar[rows] = S.A @ r_bar[prev] + S.r
    return BlockMatrices(a_bar, b_bar, d_bar, r_bar, n_x, n_u, n_w, N)


def error_transition(window: Sequence[SystemRealization]) -> np.ndarray:
    """Block-lower ``Psi`` with ``Y = Psi z`` for ``z = (y_k, D_k w_k, ..., D_{k+N-1} w_{k+N-1})``."""
    N = len(window)
    n = window[0].n_x
    Psi = np.zeros(((N + 1) * n, (N + 1) * n))
    for t in range(N + 1):
        for j in range(t + 1):
            Psi[t * n:(t + 1) * n, j * n:(j + 1) * n] = transition(window, t, j)
    return Psi


# -- gains ----------------------------------------------------------------------

def gain_pattern(mode: str, horizon: int, n_u: int, n_x: int) -> np.ndarray:
    """Boolean mask of the free entries of the ``N n_u x (N+1) n_x`` gain matrix."""
    if mode not in GAIN_MODES:
        raise ValueError(f"unknown gain mode {mode!r}")
    mask = np.zeros((horizon * n_u, (horizon + 1) * n_x), dtype=bool)
    if mode == ZERO:
        return mask
    for t in range(horizon):
        first = t if mode == DIAGONAL else 0
        mask[t * n_u:(t + 1) * n_u, first * n_x:(t + 1) * n_x] = True
    return mask


@dataclass(frozen=True)
class GainStack:
    """Stacked feedback gains ``K`` on the auxiliary error sequence ``Y``."""

    mode: str
    matrix: np.ndarray
    horizon: int
    n_u: int
    n_x: int

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float)
        shape = (self.horizon * self.n_u, (self.horizon + 1) * self.n_x)
        if M.shape != shape:
            raise ValueError(f"gain matrix has shape {M.shape}, expected {shape}")
        mask = gain_pattern(self.mode, self.horizon, self.n_u, self.n_x)
        if np.any(M[~mask] != 0.0):
            raise ValueError(f"gain matrix has entries outside the {self.mode} pattern")
        M = M.copy()
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @classmethod
    def zeros(cls, mode: str, horizon: int, n_u: int, n_x: int) -> "GainStack":
        return cls(mode, np.zeros((horizon * n_u, (horizon + 1) * n_x)), horizon, n_u, n_x)

    def block(self, t: int, i: int) -> np.ndarray:
        return self.matrix[t * self.n_u:(t + 1) * self.n_u, i * self.n_x:(i + 1) * self.n_x]

    def free_values(self) -> np.ndarray:
        return self.matrix[gain_pattern(self.mode, self.horizon, self.n_u, self.n_x)]


# -- solution -------------------------------------------------------------------

@dataclass(frozen=True)
class SMPCSolution:
    status: str
    v_stack: np.ndarray | None = None
    gains: GainStack | None = None
    predicted_means: np.ndarray | None = None
    predicted_covs: np.ndarray | None = None
    cost: float = np.nan
    belief: GaussianBelief | None = None
    window: tuple = ()
    stats: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == conic.OPTIMAL

    @property
    def horizon(self) -> int:
        return len(self.window)

    def first_control(self, x) -> np.ndarray:
        """``u_k = v_{k|k} + K_{k,k|k} (x_k - mu_k)`` at the measured state."""
        if not self.optimal:
            raise SMPCError("no policy: the problem was not solved to optimality")
        n_u = self.gains.n_u
        K00 = self.gains.block(0, 0)
        return self.v_stack[:n_u] + K00 @ (np.asarray(x, dtype=float) - self.belief.mean)

    def next_belief(self) -> GaussianBelief:
        """One-step prediction ``(mu_{k+1|k}, Sigma_{k+1|k})``."""
        return GaussianBelief(self.predicted_means[1], self.predicted_covs[1])


@dataclass(frozen=True)
class TerminalSpec:
    """What the online problem needs from the offline ingredients."""

    x_f: object  # Polytope
    sigma_f: np.ndarray
    gain: np.ndarray
    u_safe: object = None  # Polytope, only needed for shifted candidates

    @classmethod
    def from_ingredients(cls, ing) -> "TerminalSpec":
        return cls(ing.x_f_mu, ing.sigma_f, ing.gain, ing.u_safe)


# -- the horizon problem --------------------------------------------------------

def _kron_expand(M1: np.ndarray, M2: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Columns ``vec(M1 E_k M2)`` (row-major vec) for unit gain entries ``E_k = e_r e_c'``."""
    out = np.einsum("ik,kj->ijk", M1[:, rows], M2[cols, :])
    return out.reshape(M1.shape[0] * M2.shape[1], rows.size)


def _identifiable(mask: np.ndarray, s_y: np.ndarray, n_u: int, rtol: float = 1e-9) -> np.ndarray:
    """Drop gain entries that cannot change ``K S_Y``.

    ``K`` only enters through ``K S_Y``. When ``Cov(Y)`` is singular (a point
    belief, say) some columns of ``K`` are unidentifiable and leave the conic
    program rank deficient; a pivoted QR keeps a maximal independent set.
    """
    active = np.zeros_like(mask)
    scale = max(np.abs(s_y).max(), 1.0)
    for r0 in range(0, mask.shape[0], n_u):
        cols = np.flatnonzero(mask[r0])
        if cols.size == 0:
            continue
        _, R, piv = qr(s_y[cols].T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > rtol * scale))
        keep = np.sort(cols[piv[:rank]])
        active[r0:r0 + n_u, keep] = True
    return active


class SMPCProblem:
    """The convex horizon problem for one belief and one realization window.

    ``terminal=None`` drops the terminal pair; the state chance rows are
    then enforced at every predicted stage 1..N instead of 1..N-1.
    """

    def __init__(self, belief: GaussianBelief, window: Sequence[SystemRealization], cost: StageCost,
                 chance: ChanceSpec, terminal: TerminalSpec | None, mode: str = LOWER,
                 terminal_weight: np.ndarray | None = None):
        self.belief = belief
        self.window = tuple(window)
        self.cost = cost
        self.chance = chance
        self.terminal = terminal
        self.mode = mode
        self.blocks = bm = build_block_matrices(self.window)
        N, n_x, n_u = bm.horizon, bm.n_x, bm.n_u
        self.N, self.n_x, self.n_u = N, n_x, n_u
        Qf = cost.Q if terminal_weight is None else np.asarray(terminal_weight, dtype=float)
        self.q_half = np.kron(np.eye(N + 1), psd_sqrt(cost.Q))
        self.q_half[N * n_x:, N * n_x:] = psd_sqrt(Qf)
        self.r_half = np.kron(np.eye(N), psd_sqrt(cost.R))
        self.x_goal = np.tile(cost.x_goal, N + 1)
        self.cov_y = symmetrize(bm.a_bar @ belief.cov @ bm.a_bar.T + bm.d_bar @ bm.d_bar.T)
        self.s_y = psd_sqrt(self.cov_y)
        self.mask = gain_pattern(mode, N, n_u, n_x)
        self.active = _identifiable(self.mask, self.s_y, n_u)
        self.k_rows, self.k_cols = np.nonzero(self.active)
        self.state_stages = list(range(1, N if terminal is not None else N + 1))
        self._program = None

    # -- moments of a given policy ---------------------------------------------
    def mean_stack(self, V) -> np.ndarray:
        bm = self.blocks
        return bm.a_bar @ self.belief.mean + bm.b_bar @ np.asarray(V, dtype=float) + bm.r_bar

    def state_factor(self, K) -> np.ndarray:
        """``(I + B_bar K) S_Y``: ``Cov(X)`` is its Gram matrix."""
        K = K.matrix if isinstance(K, GainStack) else np.asarray(K, dtype=float)
        return (np.eye(self.cov_y.shape[0]) + self.blocks.b_bar @ K) @ self.s_y

    def moments(self, V, K):
        """Predicted (means, covs) over stages 0..N, plus control covariances."""
        K = K.matrix if isinstance(K, GainStack) else np.asarray(K, dtype=float)
        n_x, n_u, N = self.n_x, self.n_u, self.N
        X = self.mean_stack(V).reshape(N + 1, n_x)
        F = self.state_factor(K)
        C = F @ F.T
        covs = np.stack([symmetrize(C[t * n_x:(t + 1) * n_x, t * n_x:(t + 1) * n_x]) for t in range(N + 1)])
        G = K @ self.s_y
        CU = G @ G.T
        ucovs = np.stack([symmetrize(CU[t * n_u:(t + 1) * n_u, t * n_u:(t + 1) * n_u]) for t in range(N)])
        return X, covs, ucovs

    def cost_value(self, V, K) -> float:
        K = K.matrix if isinstance(K, GainStack) else np.asarray(K, dtype=float)
        V = np.asarray(V, dtype=float)
        e = self.q_half @ (self.mean_stack(V) - self.x_goal)
        c = e @ e + np.sum((self.r_half @ V) ** 2)
        c += np.sum((self.q_half @ self.state_factor(K)) ** 2)
        c += np.sum((self.r_half @ K @ self.s_y) ** 2)
        return float(c)

    def evaluate(self, V, K) -> dict:
        """Cost and worst violation of each constraint group at ``(V, K)``.

        Violations are positive when a constraint is broken.
        """
        K = K.matrix if isinstance(K, GainStack) else np.asarray(K, dtype=float)
        V = np.asarray(V, dtype=float)
        X, covs, ucovs = self.moments(V, K)
        n_u = self.n_u
        out = {"cost": self.cost_value(V, K)}
        worst = -np.inf
        for r in self.chance.state_rows:
            q = normal_quantile(1.0 - r.p)
            for t in self.state_stages:
                worst = max(worst, r.a @ X[t] + q * np.sqrt(max(r.a @ covs[t] @ r.a, 0.0)) - r.b)
        out["state"] = worst
        worst = -np.inf
        for r in self.chance.control_rows:
            q = normal_quantile(1.0 - r.p)
            for t in range(self.N):
                worst = max(worst, r.a @ V[t * n_u:(t + 1) * n_u] + q * np.sqrt(max(r.a @ ucovs[t] @ r.a, 0.0)) - r.b)
        out["control"] = worst
        if self.terminal is not None:
            xf = self.terminal.x_f
            out["terminal_mean"] = float(np.max(xf.A @ X[self.N] - xf.b)) if xf.n_rows else -np.inf
            out["terminal_cov"] = float(np.linalg.eigvalsh(symmetrize(covs[self.N] - self.terminal.sigma_f))[-1])
        out["max"] = max(v for k, v in out.items() if k != "cost")
        return out

    # -- conic encoding ---------------------------------------------------------
    def program(self) -> conic.ConicProgram:
        if self._program is None:
            self._program = self._build()
        return self._program

    def _build(self) -> conic.ConicProgram:
        bm = self.blocks
        N, n_x, n_u = self.N, self.n_x, self.n_u
        nY = (N + 1) * n_x
        rows, cols = self.k_rows, self.k_cols
        nK = rows.size

        bld = conic.ProgramBuilder()
        v_sl = bld.add_variable("V", N * n_u)
        k_sl = bld.add_variable("K", nK)
        t_sl = bld.add_variable("t", 1)
        bld.add_objective(t_sl, [1.0])
        n = bld.n_vars

        def affine(FV=None, FK=None, g=None, m=None):
            m = m if m is not None else (g.size if g is not None else FV.shape[0])
            F = np.zeros((m, n))
            if FV is not None:
                F[:, v_sl] = FV
            if FK is not None:
                F[:, k_sl] = FK
            return F, (np.zeros(m) if g is None else g)

        # mean stack: X = x0_term + B_bar V
        x_off = bm.a_bar @ self.belief.mean + bm.r_bar

        # cost: one norm epigraph over the stacked residual
        parts_F, parts_g = [], []
        F, g = affine(FV=self.q_half @ bm.b_bar, g=self.q_half @ (x_off - self.x_goal))
        parts_F.append(F)
        parts_g.append(g)
        F, g = affine(FV=self.r_half, m=N * n_u)
        parts_F.append(F)
        parts_g.append(g)
        QB = self.q_half @ bm.b_bar
        F, g = affine(FK=_kron_expand(QB, self.s_y, rows, cols), g=(self.q_half @ self.s_y).ravel(), m=nY * nY)
        parts_F.append(F)
        parts_g.append(g)
        F, g = affine(FK=_kron_expand(self.r_half, self.s_y, rows, cols), m=N * n_u * nY)
        parts_F.append(F)
        parts_g.append(g)
        F_cost, g_cost = np.vstack(parts_F), np.concatenate(parts_g)
        keep = np.any(F_cost != 0.0, axis=1) | (g_cost != 0.0)
        # ||z|| and ||z||^2 share minimizers and the plain cone is far better scaled
        F_t = np.zeros((1, n))
        F_t[0, t_sl] = 1.0
        bld.add_block(conic.SOC, np.vstack([F_t, F_cost[keep]]), np.r_[0.0, g_cost[keep]])

        # state chance rows: q ||S_Y (E_t' a + K' B_bar' E_t' a)|| <= b - a' E_t X
        for r in self.chance.state_rows:
            q = normal_quantile(1.0 - r.p)
            for t in self.state_stages:
                ea = np.zeros(nY)
                ea[t * n_x:(t + 1) * n_x] = r.a
                FV = -(ea @ bm.b_bar)[None, :]
                g0 = np.array([r.b - ea @ x_off])
                if q == 0.0:
                    F, g = affine(FV=FV, g=g0)
                    bld.add_block(conic.NONNEG, F, g)
                    continue
                # S_Y K' c with c = B_bar' E_t' a: entry j is sum_k kappa_k c[r_k] S_Y[j, c_k]
                c = bm.b_bar.T @ ea
                FK = q * (self.s_y[:, cols] * c[rows][None, :])
                F1, g1 = affine(FV=FV, g=g0)
                F2, g2 = affine(FK=FK, g=q * (self.s_y @ ea))
                bld.add_block(conic.SOC, np.vstack([F1, F2]), np.r_[g1, g2])

        # control chance rows: q ||S_Y K' E_t' a|| <= b - a' v_t
        for r in self.chance.control_rows:
            q = normal_quantile(1.0 - r.p)
            for t in range(N):
                eu = np.zeros(N * n_u)
                eu[t * n_u:(t + 1) * n_u] = r.a
                F1, g1 = affine(FV=-eu[None, :], g=np.array([r.b]))
                if q == 0.0:
                    bld.add_block(conic.NONNEG, F1, g1)
                    continue
                FK = q * (self.s_y[:, cols] * eu[rows][None, :])
                F2, g2 = affine(FK=FK, m=nY)
                bld.add_block(conic.SOC, np.vstack([F1, F2]), np.r_[g1, g2])

        if self.terminal is not None:
            xf = self.terminal.x_f
            EN = slice(N * n_x, (N + 1) * n_x)
            if xf.n_rows:
                F, g = affine(FV=-xf.A @ bm.b_bar[EN], g=xf.b - xf.A @ x_off[EN])
                bld.add_block(conic.NONNEG, F, g)
            # [[Sigma_f, G], [G', I]] >= 0 with G = E_N (I + B_bar K) S_Y
            d = n_x + nY
            Fm = np.zeros((n, d, d))
            BN = bm.b_bar[EN]
            Gk = np.einsum("ik,kj->kij", BN[:, rows], self.s_y[cols, :])
            Fm[k_sl, :n_x, n_x:] = Gk
            Fm[k_sl, n_x:, :n_x] = np.transpose(Gk, (0, 2, 1))
            G0 = np.zeros((d, d))
            G0[:n_x, :n_x] = self.terminal.sigma_f
            G0[n_x:, n_x:] = np.eye(nY)
            G0[:n_x, n_x:] = self.s_y[EN, :]
            G0[n_x:, :n_x] = self.s_y[EN, :].T
            bld.add_psd(Fm, G0)
        return bld.build()

    def point(self, V, K) -> np.ndarray:
        """Program variable vector for a given policy (epigraph at the exact root cost)."""
        K = K.matrix if isinstance(K, GainStack) else np.asarray(K, dtype=float)
        return np.r_[np.asarray(V, dtype=float), K[self.active], np.sqrt(self.cost_value(V, K))]

    def gains_from(self, kvals) -> GainStack:
        K = np.zeros(self.mask.shape)
        K[self.active] = kvals
        return GainStack(self.mode, K, self.N, self.n_u, self.n_x)

    def solve(self, adapter=None, settings: conic.SolveSettings | None = None) -> SMPCSolution:
        prog = self.program()
        out = conic.solve(prog, settings=settings, adapter=adapter)
        if out.status == conic.NUMERICAL_FAILURE:
            raise SolverFailure(f"conic solver failed: {out.stats}")
        if out.status != conic.OPTIMAL:
            return SMPCSolution(out.status, belief=self.belief, window=self.window, stats=out.stats)
        V = prog.var(out.x, "V")
        gains = self.gains_from(prog.var(out.x, "K"))
        X, covs, _ = self.moments(V, gains)
        return SMPCSolution(conic.OPTIMAL, V, gains, X, covs, self.cost_value(V, gains),
                            self.belief, self.window, out.stats)


def solve_smpc(belief: GaussianBelief, window, cost: StageCost, chance: ChanceSpec,
               terminal: TerminalSpec | None, mode: str = LOWER, adapter=None,
               terminal_weight=None) -> SMPCSolution:
    return SMPCProblem(belief, window, cost, chance, terminal, mode, terminal_weight).solve(adapter)


# -- initialization -------------------------------------------------------------

@dataclass(frozen=True)
class Initialization:
    belief: GaussianBelief
    tag: str
    solution: SMPCSolution | None = None


def initialize(prev: SMPCSolution | None, x_measured, mode: str,
               solve_probe: Callable[[GaussianBelief], SMPCSolution] | None = None) -> Initialization:
    """Pick the belief the next horizon problem starts from.

    Without a previous solution the measured state is used with zero
    covariance. Static mode then always takes the previous one-step
    prediction; dynamic mode first tries to recondition on the measurement
    and keeps the probe solution when it is feasible.
    """
    x = np.asarray(x_measured, dtype=float)
    if prev is None:
        return Initialization(GaussianBelief.point(x), TAG_INITIAL)
    if not prev.optimal:
        raise SMPCError("cannot initialize from a failed solve")
    if mode == DYNAMIC:
        if solve_probe is None:
            raise ValueError("dynamic initialization needs a probe solver")
        probe_belief = GaussianBelief.point(x)
        sol = solve_probe(probe_belief)
        if sol.optimal:
            return Initialization(probe_belief, TAG_RECONDITIONED, sol)
    elif mode != STATIC:
        raise ValueError(f"unknown initialization mode {mode!r}")
    return Initialization(prev.next_belief(), TAG_OPEN_LOOP)


# -- shifted candidate ----------------------------------------------------------

def terminal_feedforward(mu, sys: SystemRealization, x_f, u_safe) -> np.ndarray:
    """Smallest (max-norm) ``v`` in ``u_safe`` with ``A mu + B v + r`` in ``x_f``."""
    n_u = sys.n_u
    mu = np.asarray(mu, dtype=float)
    # variables (v, s): minimize s subject to |v| <= s
    A_ub = [np.hstack([x_f.A @ sys.B, np.zeros((x_f.n_rows, 1))]),
            np.hstack([u_safe.A, np.zeros((u_safe.n_rows, 1))]),
            np.hstack([np.eye(n_u), -np.ones((n_u, 1))]),
            np.hstack([-np.eye(n_u), -np.ones((n_u, 1))])]
    b_ub = [x_f.b - x_f.A @ (sys.A @ mu + sys.r), u_safe.b, np.zeros(n_u), np.zeros(n_u)]
    res = linprog(np.r_[np.zeros(n_u), 1.0], A_ub=np.vstack(A_ub), b_ub=np.concatenate(b_ub),
                  bounds=[(None, None)] * (n_u + 1), method="highs")
    if res.status != 0:
        raise TerminalSetError(f"no terminal feedforward at mu = {mu}: {res.message}")
    return res.x[:n_u]


def shift_candidate(prev: SMPCSolution, terminal: TerminalSpec, next_window) -> tuple[np.ndarray, GainStack]:
    """Feasible policy for the next horizon problem built from ``prev``.

    Stages 1..N-1 of ``prev`` are kept. Their dependence on the first two
    error components ``(y_k, D_k w_k)``, which the next problem only sees
    through ``y_{k+1}``, is replaced by its conditional expectation given
    ``y_{k+1}``; means are untouched and every covariance can only shrink.
    The last stage applies the terminal gain on top of a feedforward from
    :func:`terminal_feedforward`. Requires the lower-triangular gain mode.
    """
    if not prev.optimal:
        raise SMPCError("cannot shift a failed solve")
    K = prev.gains
    if K.mode != LOWER:
        raise ValueError("the shifted candidate needs the lower-triangular gain mode")
    window = prev.window
    next_window = tuple(next_window)
    N, n_x, n_u = K.horizon, K.n_x, K.n_u
    if len(next_window) != N:
        raise ValueError("next window length differs from the horizon")
    for a, b in zip(window[1:], next_window[:-1]):
        if not (np.array_equal(a.A, b.A) and np.array_equal(a.B, b.B) and np.array_equal(a.D, b.D)
                and np.array_equal(a.r, b.r)):
            raise ValueError("next window must be the previous window shifted by one step")
    if terminal.u_safe is None:
        raise ValueError("terminal spec lacks the safe control set")

    Psi = error_transition(window)
    Kc = K.matrix @ Psi  # U = V + Kc z
    S0 = window[0]
    M = np.hstack([S0.A + S0.B @ Kc[:n_u, :n_x], np.eye(n_x)])
    C = np.zeros((2 * n_x, 2 * n_x))
    C[:n_x, :n_x] = prev.belief.cov
    C[n_x:, n_x:] = S0.D @ S0.D.T
    P = C @ M.T @ np.linalg.pinv(symmetrize(M @ C @ M.T))

    nz = (N + 1) * n_x
    Kn = np.zeros((N * n_u, nz))
    for s in range(N - 1):
        src = Kc[(s + 1) * n_u:(s + 2) * n_u]
        Kn[s * n_u:(s + 1) * n_u, :n_x] = src[:, :2 * n_x] @ P
        Kn[s * n_u:(s + 1) * n_u, n_x:N * n_x] = src[:, 2 * n_x:]
    bm = build_block_matrices(next_window)
    Psi_n = error_transition(next_window)
    err = Psi_n + bm.b_bar @ Kn
    Kn[(N - 1) * n_u:, :] = terminal.gain @ err[(N - 1) * n_x:N * n_x]
    K_new = np.linalg.solve(Psi_n.T, Kn.T).T
    K_new[~gain_pattern(LOWER, N, n_u, n_x)] = 0.0

    v_term = terminal_feedforward(prev.predicted_means[N], next_window[-1], terminal.x_f, terminal.u_safe)
    V_new = np.r_[prev.v_stack[n_u:], v_term]
    return V_new, GainStack(LOWER, K_new, N, n_u, n_x)


# -- state-feedback form ----------------------------------------------------------

def gains_from_state_feedback(L_blocks: Sequence[np.ndarray], b_bar: np.ndarray) -> np.ndarray:
    """``K = L (I - B_bar L)^{-1}`` for block-diagonal state feedback ``L``."""
    N = len(L_blocks)
    n_u, n_x = np.atleast_2d(L_blocks[0]).shape
    L = np.zeros((N * n_u, (N + 1) * n_x))
    for t, Lt in enumerate(L_blocks):
        L[t * n_u:(t + 1) * n_u, t * n_x:(t + 1) * n_x] = Lt
    # B_bar L is strictly block lower triangular, so this is a unit-triangular solve
    M = np.eye((N + 1) * n_x) - b_bar @ L
    return solve_triangular(M, L.T, trans="T", lower=True, unit_diagonal=True).T
