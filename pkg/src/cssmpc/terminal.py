"""Offline terminal ingredients: covariance bound, terminal gain, safe sets
and the robust controlled invariant terminal set for the means.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass

import numpy as np

from cssmpc import conic
from cssmpc.polytope import (
    Polytope,
    intersect,
    is_empty,
    is_subset,
    pre_set,
    remove_redundancy,
)
from cssmpc.sysmodel import ChanceSpec, ParameterHull, normal_quantile, symmetrize

log = logging.getLogger(__name__)

RIDGE = 1e-9
MAX_CONDITION = 1e12
DEFAULT_EPS = 1e-6
DEFAULT_MAX_ITER = 100
MAX_CONTRACTIONS = 5

COMMON = "common"
PER_VERTEX = "per-vertex"
AUTO = "auto"
QUANTIFIERS = (COMMON, PER_VERTEX, AUTO)
#: intersection of the maximal invariant sets of each vertex frozen in time;
#: not invariant under switching between vertices
FROZEN = "frozen"
CONSTRUCTIONS = QUANTIFIERS + (FROZEN,)


class SynthesisError(RuntimeError):
    """Base class for failures while building terminal ingredients."""

    reason = "synthesis-failure"


class CovarianceSDPInfeasible(SynthesisError):
    reason = "sdp-infeasible"


class GainRecoveryError(SynthesisError):
    reason = "gain-recovery"


class SafeSetEmpty(SynthesisError):
    reason = "safe-set-empty"


class NoInvariantSet(SynthesisError):
    reason = "no-invariant-set"


class InvariantSetNotConverged(SynthesisError):
    reason = "not-converged"


def _sym_basis(n: int):
    """Basis of symmetric n x n matrices, one per upper-triangle entry."""
    out = []
    for j in range(n):
        for i in range(j + 1):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            out.append(E)
    return out


def solve_terminal_covariance(hull: ParameterHull, adapter=None):
    """Minimum-trace ``Sigma`` with a common gain ``L`` such that
    ``(A + B L) Sigma (A + B L)' + D D' <= Sigma`` at every hull vertex.

    Returns ``(sigma_f, z_matrix, gain)`` with ``gain = Z Sigma^{-1}``.
    """
    n, m = hull.n_x, hull.n_u
    basis = _sym_basis(n)
    bld = conic.ProgramBuilder()
    s_var = bld.add_variable("Sigma", len(basis))
    z_var = bld.add_variable("Z", m * n)
    bld.add_objective(s_var, [np.trace(E) for E in basis])

    def zeros():
        return np.zeros((bld.n_vars, 2 * n, 2 * n))

    for S in hull.vertices:
        A, B, D = S.A, S.B, S.D
        F = zeros()
        for k, E in enumerate(basis):
            F[s_var.start + k] = np.block([[E, A @ E], [E @ A.T, E]])
        for k in range(m * n):
            Zk = np.zeros((m, n))
            Zk.flat[k] = 1.0
            BZ = B @ Zk
            F[z_var.start + k] = np.block([[np.zeros((n, n)), BZ], [BZ.T, np.zeros((n, n))]])
        G = np.block([[-D @ D.T, np.zeros((n, n))], [np.zeros((n, n)), np.zeros((n, n))]])
        bld.add_psd(F, G)
    # Sigma >= ridge * I keeps the recovered gain well defined
    F = np.zeros((bld.n_vars, n, n))
    for k, E in enumerate(basis):
        F[s_var.start + k] = E
    bld.add_psd(F, -RIDGE * np.eye(n))

    prog = bld.build()
    out = conic.solve(prog, adapter=adapter)
    if out.status == conic.INFEASIBLE:
        raise CovarianceSDPInfeasible("no common terminal covariance exists for this hull")
    if not out.optimal:
        raise CovarianceSDPInfeasible(f"terminal covariance SDP ended with status {out.status}")
    sig = sum(v * E for v, E in zip(prog.var(out.x, "Sigma"), basis))
    sig = symmetrize(sig)
    Z = prog.var(out.x, "Z").reshape(m, n)
    if np.linalg.cond(sig) > MAX_CONDITION:
        raise GainRecoveryError("terminal covariance is numerically singular")
    gain = np.linalg.solve(sig.T, Z.T).T
    return sig, Z, gain


def lyapunov_margin(hull: ParameterHull, sigma_f, gain) -> float:
    """min over vertices of min-eig(Sigma_f - (A+BL) Sigma_f (A+BL)' - D D')."""
    worst = np.inf
    for S in hull.vertices:
        Acl = S.A + S.B @ gain
        M = sigma_f - Acl @ sigma_f @ Acl.T - S.D @ S.D.T
        worst = min(worst, float(np.linalg.eigvalsh(symmetrize(M))[0]))
    return worst


def tightened_offset(a, b, cov, p) -> float:
    a = np.asarray(a, dtype=float)
    return float(b - np.sqrt(max(a @ cov @ a, 0.0)) * normal_quantile(1.0 - p))


def tighten(chance: ChanceSpec, sigma_f, gain, n_x: int | None = None, n_u: int | None = None):
    """Safe sets: every state row tightened by the terminal covariance,
    every control row by the covariance of the terminal-gain control."""
    sigma_f = np.asarray(sigma_f, dtype=float)
    gain = np.array(gain, dtype=float, ndmin=2)
    n_x = n_x or sigma_f.shape[0]
    n_u = n_u or gain.shape[0]
    cov_u = gain @ sigma_f @ gain.T
    xa = [r.a for r in chance.state_rows]
    xb = [tightened_offset(r.a, r.b, sigma_f, r.p) for r in chance.state_rows]
    ua = [r.a for r in chance.control_rows]
    ub = [tightened_offset(r.a, r.b, cov_u, r.p) for r in chance.control_rows]
    x_safe = Polytope(np.reshape(xa, (-1, n_x)), xb, n_x)
    u_safe = Polytope(np.reshape(ua, (-1, n_u)), ub, n_u)
    if is_empty(x_safe):
        raise SafeSetEmpty("tightened state constraints are empty")
    if is_empty(u_safe):
        raise SafeSetEmpty("tightened control constraints are empty")
    return remove_redundancy(x_safe), remove_redundancy(u_safe)


def common_input_required(hull: ParameterHull, quantifier: str = AUTO) -> bool:
    """Whether the pre-set needs one feedforward shared by all vertices.

    A per-vertex feedforward is enough when every vertex has the same
    ``B``: for a realization ``sum_l lam_l (A_l, B, r_l)`` the blend
    ``v = sum_l lam_l v_l`` of the vertex inputs lands in the (convex)
    target. With varying ``B`` that argument breaks and the shared input
    is needed. ``auto`` picks the weaker requirement whenever it is sound.
    """
    if quantifier not in QUANTIFIERS:
        raise ValueError(f"unknown quantifier {quantifier!r}")
    if quantifier == COMMON:
        return True
    B0 = hull.vertices[0].B
    same_b = all(np.array_equal(S.B, B0) for S in hull.vertices)
    if quantifier == PER_VERTEX and not same_b:
        raise ValueError("per-vertex feedforward is only sound when B is the same at every vertex")
    return not same_b


def verify_invariance(candidate: Polytope, u_safe: Polytope, hull: ParameterHull, tol: float = 1e-8,
                      quantifier: str = AUTO) -> bool:
    if candidate.is_empty or is_empty(candidate):
        return False
    common = common_input_required(hull, quantifier)
    return is_subset(candidate, pre_set(candidate, hull, u_safe, common_input=common), tol)


def _inflate(P: Polytope, eps: float) -> Polytope:
    return Polytope(P.A, P.b + eps, P.dim)


def robust_invariant_set(x_safe: Polytope, u_safe: Polytope, hull: ParameterHull,
                         max_iter: int = DEFAULT_MAX_ITER, eps: float = DEFAULT_EPS,
                         quantifier: str = AUTO):
    """Outer iteration ``O_{i+1} = O_i & pre(O_i)`` from ``O_0 = x_safe``.

    Stops once ``O_i`` fits inside ``O_{i+1}`` inflated by ``eps``; the last
    iterate is then certified invariant (with up to five ``1 - eps`` offset
    contractions). Returns ``(set, iterations, converged)``.
    """
    if is_empty(x_safe) or is_empty(u_safe):
        raise NoInvariantSet("safe sets are empty")
    common = common_input_required(hull, quantifier)
    omega = remove_redundancy(x_safe)
    for it in range(1, max_iter + 1):
        nxt = intersect(omega, pre_set(omega, hull, u_safe, common_input=common))
        if nxt.is_empty or is_empty(nxt):
            raise NoInvariantSet(f"iterate {it} is empty")
        log.debug("invariant-set iteration %d: %d rows", it, nxt.n_rows)
        if is_subset(omega, _inflate(nxt, eps)):
            candidate = nxt
            for j in range(MAX_CONTRACTIONS + 1):
                if verify_invariance(candidate, u_safe, hull, quantifier=quantifier):
                    return candidate, it, True
                candidate = candidate.scale_offsets(1.0 - eps)
            raise InvariantSetNotConverged(
                f"eps-converged at iteration {it} but the iterate failed the invariance certificate")
        omega = nxt
    raise InvariantSetNotConverged(f"no eps-convergence within {max_iter} iterations")


def frozen_invariant_set(x_safe: Polytope, u_safe: Polytope, hull: ParameterHull,
                         max_iter: int = DEFAULT_MAX_ITER, eps: float = DEFAULT_EPS):
    """Intersection over vertices of each frozen vertex's invariant set.

    Every vertex is treated as its own time-invariant system, its maximal
    controlled invariant subset of ``x_safe`` is computed, and the results
    are intersected. Cheaper and larger than the switching-robust set, but
    the intersection need not be invariant for any realization sequence;
    callers should check :func:`verify_invariance` before relying on it.
    Returns ``(set, total iterations, converged)``.
    """
    out, total = None, 0
    for S in hull.vertices:
        single, it, _ = robust_invariant_set(x_safe, u_safe, ParameterHull((S,)), max_iter=max_iter, eps=eps)
        total += it
        out = single if out is None else intersect(out, single)
    if out.is_empty or is_empty(out):
        raise NoInvariantSet("frozen-vertex invariant sets do not intersect")
    return out, total, True


@dataclass(frozen=True)
class TerminalIngredients:
    sigma_f: np.ndarray
    gain: np.ndarray
    z_matrix: np.ndarray
    x_safe: Polytope
    u_safe: Polytope
    x_f_mu: Polytope
    iteration_count: int
    converged: bool
    construction: str = AUTO
    certified: bool = True

    @property
    def n_x(self) -> int:
        return self.sigma_f.shape[0]

    def to_dict(self) -> dict:
        def mat(M):
            M = np.asarray(M)
            return {"shape": list(M.shape), "data": M.ravel().tolist()}

        def poly(P):
            return {"dim": P.dim, "rows": P.to_rows(), "empty": P.is_empty}

        return {
            "sigma_f": mat(self.sigma_f), "gain": mat(self.gain), "z_matrix": mat(self.z_matrix),
            "x_safe": poly(self.x_safe), "u_safe": poly(self.u_safe), "x_f_mu": poly(self.x_f_mu),
            "iteration_count": self.iteration_count, "converged": self.converged,
            "construction": self.construction, "certified": self.certified,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TerminalIngredients":
        def mat(e):
            return np.asarray(e["data"], dtype=float).reshape(e["shape"])

        def poly(e):
            if e.get("empty"):
                return Polytope.empty(e["dim"])
            return Polytope.from_rows(e["rows"], e["dim"])

        return cls(mat(d["sigma_f"]), mat(d["gain"]), mat(d["z_matrix"]), poly(d["x_safe"]),
                   poly(d["u_safe"]), poly(d["x_f_mu"]), int(d["iteration_count"]), bool(d["converged"]),
                   d.get("construction", AUTO), bool(d.get("certified", True)))


def synthesize(hull: ParameterHull, chance: ChanceSpec, max_iter: int = DEFAULT_MAX_ITER,
               eps: float = DEFAULT_EPS, adapter=None, quantifier: str = AUTO) -> TerminalIngredients:
    """Full offline pipeline: SDP, tightening, invariant terminal set.

    ``quantifier`` selects the terminal-set construction: one of
    :data:`QUANTIFIERS` for the certified switching-robust iteration, or
    :data:`FROZEN` for the uncertified frozen-vertex intersection (the
    result records ``certified`` from :func:`verify_invariance`).
    """
    if quantifier not in CONSTRUCTIONS:
        raise ValueError(f"unknown terminal-set construction {quantifier!r}")
    sigma_f, Z, gain = solve_terminal_covariance(hull, adapter=adapter)
    x_safe, u_safe = tighten(chance, sigma_f, gain, hull.n_x, hull.n_u)
    if quantifier == FROZEN:
        x_f, iters, conv = frozen_invariant_set(x_safe, u_safe, hull, max_iter=max_iter, eps=eps)
        certified = verify_invariance(x_f, u_safe, hull)
        if not certified:
            log.warning("frozen-vertex terminal set is not invariant under switching between vertices")
    else:
        x_f, iters, conv = robust_invariant_set(x_safe, u_safe, hull, max_iter=max_iter, eps=eps,
                                               quantifier=quantifier)
        certified = True
    return TerminalIngredients(sigma_f, gain, Z, x_safe, u_safe, x_f, iters, conv, quantifier, certified)


def content_hash(hull: ParameterHull, chance: ChanceSpec, extra: dict | None = None) -> str:
    """Stable key for caching ingredients on disk."""
    payload = {
        "hull": hull.to_dict(),
        "state_rows": [[*map(float, r.a), r.b, r.p] for r in chance.state_rows],
        "control_rows": [[*map(float, r.a), r.b, r.p] for r in chance.control_rows],
        "extra": extra or {},
    }
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]
