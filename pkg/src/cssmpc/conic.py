"""Solver-neutral conic programs.

A :class:`ConicProgram` is

    minimize    c^T x
    subject to  F_k x + g_k in K_k        for every block k

with ``K_k`` one of: the zero cone, the nonnegative orthant, a second-order
cone ``{(t, y) : ||y|| <= t}`` or the PSD cone of order ``d`` vectorized as a
scaled upper triangle (column-major, off-diagonals times sqrt(2)).

Programs are assembled with :class:`ProgramBuilder` and handed to an adapter
(:class:`ClarabelAdapter` by default).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

ZERO = "zero"
NONNEG = "nonnegative"
SOC = "soc"
PSD = "psd"
CONE_KINDS = (ZERO, NONNEG, SOC, PSD)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"

SQRT2 = math.sqrt(2.0)


def triangle_size(d: int) -> int:
    return d * (d + 1) // 2


def psd_vec_indices(d: int):
    """(row, col) pairs of the upper triangle in vectorization order."""
    return [(i, j) for j in range(d) for i in range(j + 1)]


def vec_psd(M: np.ndarray) -> np.ndarray:
    """Scaled-triangle vectorization; an isometry from symmetric matrices."""
    M = np.asarray(M, dtype=float)
    d = M.shape[0]
    return np.array([M[i, j] * (1.0 if i == j else SQRT2) for i, j in psd_vec_indices(d)])


def mat_psd(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    d = int(round((math.sqrt(8 * v.size + 1) - 1) / 2))
    M = np.zeros((d, d))
    for k, (i, j) in enumerate(psd_vec_indices(d)):
        if i == j:
            M[i, i] = v[k]
        else:
            M[i, j] = M[j, i] = v[k] / SQRT2
    return M


@dataclass(frozen=True)
class ConeBlock:
    kind: str
    size: int  # rows for zero/nonneg/soc, matrix order for psd
    F: np.ndarray
    g: np.ndarray

    @property
    def n_rows(self) -> int:
        return triangle_size(self.size) if self.kind == PSD else self.size


@dataclass(frozen=True)
class ConicProgram:
    n_vars: int
    c: np.ndarray
    blocks: tuple
    var_names: tuple = ()  # (name, start, size) triples

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        if c.size != self.n_vars:
            raise ValueError("objective length does not match n_vars")
        for blk in self.blocks:
            if blk.kind not in CONE_KINDS:
                raise ValueError(f"unknown cone kind {blk.kind!r}")
            if blk.F.shape != (blk.n_rows, self.n_vars) or blk.g.shape != (blk.n_rows,):
                raise ValueError(f"block {blk.kind} has inconsistent shapes {blk.F.shape}, {blk.g.shape}")
            if blk.kind == SOC and blk.size < 1:
                raise ValueError("second-order cone needs at least one row")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)

    def var(self, x: np.ndarray, name: str) -> np.ndarray:
        for nm, start, size in self.var_names:
            if nm == name:
                return x[start:start + size]
        raise KeyError(name)

    def residuals(self, x: np.ndarray) -> float:
        """Largest cone violation of ``x`` (0 when feasible)."""
        worst = 0.0
        for blk in self.blocks:
            s = blk.F @ x + blk.g
            if blk.kind == ZERO:
                worst = max(worst, float(np.abs(s).max(initial=0.0)))
            elif blk.kind == NONNEG:
                worst = max(worst, float(-s.min(initial=0.0)))
            elif blk.kind == SOC:
                worst = max(worst, float(np.linalg.norm(s[1:]) - s[0]))
            else:
                worst = max(worst, float(-np.linalg.eigvalsh(mat_psd(s))[0]))
        return max(worst, 0.0)

    # -- debug text format -------------------------------------------------
    def dumps(self) -> str:
        lines = ["conic-program 1", f"n_vars {self.n_vars}"]
        for name, start, size in self.var_names:
            lines.append(f"var {name} {start} {size}")
        lines.append("objective " + " ".join(repr(float(v)) for v in self.c))
        for blk in self.blocks:
            lines.append(f"block {blk.kind} {blk.size}")
            for row, off in zip(blk.F, blk.g):
                lines.append(repr(float(off)) + " | " + " ".join(repr(float(v)) for v in row))
        lines.append("end")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ConicProgram":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != "conic-program 1":
            raise ValueError("not a conic-program dump")
        n_vars = int(lines[1].split()[1])
        names = []
        pos = 2
        while lines[pos].startswith("var "):
            _, nm, start, size = lines[pos].split()
            names.append((nm, int(start), int(size)))
            pos += 1
        c = np.array([float(t) for t in lines[pos].split()[1:]])
        pos += 1
        blocks = []
        while lines[pos] != "end":
            _, kind, size = lines[pos].split()
            size = int(size)
            n_rows = triangle_size(size) if kind == PSD else size
            F = np.zeros((n_rows, n_vars))
            g = np.zeros(n_rows)
            for k in range(n_rows):
                off, coeffs = lines[pos + 1 + k].split("|")
                g[k] = float(off)
                vals = coeffs.split()
                if vals:
                    F[k] = [float(t) for t in vals]
            blocks.append(ConeBlock(kind, size, F, g))
            pos += 1 + n_rows
        return cls(n_vars, c, tuple(blocks), tuple(names))


class ProgramBuilder:
    """Incremental assembly of a :class:`ConicProgram`.

    Affine expressions are passed as ``(F, g)`` pairs over the full variable
    vector; :meth:`select` gives the ``F`` of a named variable.
    """

    def __init__(self):
        self._names: list = []
        self._n = 0
        self._blocks: list = []
        self._c: dict = {}

    @property
    def n_vars(self) -> int:
        return self._n

    def add_variable(self, name: str, size: int) -> slice:
        sl = slice(self._n, self._n + size)
        self._names.append((name, self._n, size))
        self._n += size
        return sl

    def select(self, sl: slice) -> np.ndarray:
        F = np.zeros((sl.stop - sl.start, self._n))
        F[:, sl] = np.eye(sl.stop - sl.start)
        return F

    def _pad(self, F):
        F = np.array(F, dtype=float, ndmin=2)
        if F.shape[1] < self._n:
            F = np.hstack([F, np.zeros((F.shape[0], self._n - F.shape[1]))])
        return F

    def add_objective(self, sl: slice, coeffs) -> None:
        coeffs = np.asarray(coeffs, dtype=float).reshape(-1)
        for i, v in zip(range(sl.start, sl.stop), coeffs):
            self._c[i] = self._c.get(i, 0.0) + float(v)

    def add_block(self, kind: str, F, g, size: int | None = None) -> None:
        F = self._pad(F)
        g = np.asarray(g, dtype=float).reshape(-1)
        if size is None:
            size = F.shape[0]
        self._blocks.append((kind, size, F, g))

    def add_psd(self, F_mats, G_mat) -> None:
        """``sum_i x_i F_mats[i] + G_mat`` PSD; ``F_mats`` has shape (n_vars, d, d)."""
        d = G_mat.shape[0]
        F = np.stack([vec_psd(Fi) for Fi in F_mats], axis=1) if len(F_mats) else np.zeros((triangle_size(d), 0))
        self.add_block(PSD, F, vec_psd(G_mat), size=d)

    def add_rotated_quadratic_epigraph(self, t: slice, F, g) -> None:
        """``||F x + g||^2 <= t`` as the cone ``(t + 1, t - 1, 2(F x + g))``."""
        F = self._pad(F)
        g = np.asarray(g, dtype=float).reshape(-1)
        e_t = self.select(t)
        top = np.vstack([e_t, e_t, 2.0 * F])
        off = np.r_[1.0, -1.0, 2.0 * g]
        self.add_block(SOC, top, off)

    def build(self) -> ConicProgram:
        c = np.zeros(self._n)
        for i, v in self._c.items():
            c[i] = v
        blocks = tuple(ConeBlock(kind, size, self._pad(F), g) for kind, size, F, g in self._blocks)
        return ConicProgram(self._n, c, blocks, tuple(self._names))


@dataclass(frozen=True)
class SolveSettings:
    tol_feas: float = 1e-8
    tol_gap_abs: float = 1e-8
    tol_gap_rel: float = 1e-8
    max_iter: int = 200


@dataclass
class SolveOutcome:
    status: str
    x: np.ndarray | None = None
    objective: float = math.nan
    stats: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class ClarabelAdapter:
    """Interior-point solve through Clarabel."""

    name = "clarabel"

    def __init__(self, settings: SolveSettings | None = None):
        self.settings = settings or SolveSettings()

    def solve(self, program: ConicProgram) -> SolveOutcome:
        import clarabel

        order = {ZERO: 0, NONNEG: 1, SOC: 2, PSD: 3}
        blocks = sorted(program.blocks, key=lambda b: order[b.kind])
        if not blocks:
            # unconstrained linear objective
            if np.any(program.c != 0):
                return SolveOutcome(UNBOUNDED)
            return SolveOutcome(OPTIMAL, np.zeros(program.n_vars), 0.0)
        cones = []
        for blk in blocks:
            if blk.kind == ZERO:
                cones.append(clarabel.ZeroConeT(blk.size))
            elif blk.kind == NONNEG:
                cones.append(clarabel.NonnegativeConeT(blk.size))
            elif blk.kind == SOC:
                cones.append(clarabel.SecondOrderConeT(blk.size))
            else:
                cones.append(clarabel.PSDTriangleConeT(blk.size))
        A = sp.csc_matrix(-np.vstack([blk.F for blk in blocks]))
        b = np.concatenate([blk.g for blk in blocks])
        P = sp.csc_matrix((program.n_vars, program.n_vars))
        st = clarabel.DefaultSettings()
        st.verbose = False
        st.tol_feas = self.settings.tol_feas
        st.tol_gap_abs = self.settings.tol_gap_abs
        st.tol_gap_rel = self.settings.tol_gap_rel
        st.max_iter = self.settings.max_iter
        solver = clarabel.DefaultSolver(P, np.asarray(program.c), A, b, cones, st)
        sol = solver.solve()
        status = str(sol.status)
        stats = {"iterations": int(sol.iterations), "r_prim": float(sol.r_prim),
                 "r_dual": float(sol.r_dual), "solver_status": status, "solve_time": float(sol.solve_time)}
        if status == "Solved":
            x = np.asarray(sol.x, dtype=float)
            return SolveOutcome(OPTIMAL, x, float(program.c @ x), stats)
        if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            return SolveOutcome(INFEASIBLE, stats=stats)
        if status in ("DualInfeasible", "AlmostDualInfeasible"):
            return SolveOutcome(UNBOUNDED, stats=stats)
        return SolveOutcome(NUMERICAL_FAILURE, stats=stats)


class CvxoptAdapter:
    """Interior-point solve through ``cvxopt.solvers.conelp``."""

    name = "cvxopt"

    def __init__(self, settings: SolveSettings | None = None):
        self.settings = settings or SolveSettings()

    def solve(self, program: ConicProgram) -> SolveOutcome:
        from cvxopt import matrix, solvers

        n = program.n_vars
        zero = [b for b in program.blocks if b.kind == ZERO]
        lin = [b for b in program.blocks if b.kind == NONNEG]
        soc = [b for b in program.blocks if b.kind == SOC]
        psd = [b for b in program.blocks if b.kind == PSD]
        G_rows, h_rows = [], []
        for blk in lin + soc:
            G_rows.append(-blk.F)
            h_rows.append(blk.g)
        for blk in psd:
            d = blk.size
            Gf = np.zeros((d * d, n))
            hf = np.zeros(d * d)
            for k, (i, j) in enumerate(psd_vec_indices(d)):
                scale = 1.0 if i == j else 1.0 / SQRT2
                for (r, c) in {(i, j), (j, i)}:
                    Gf[r + c * d] = -blk.F[k] * scale
                    hf[r + c * d] = blk.g[k] * scale
            G_rows.append(Gf)
            h_rows.append(hf)
        dims = {"l": sum(b.size for b in lin), "q": [b.size for b in soc], "s": [b.size for b in psd]}
        G = matrix(np.vstack(G_rows)) if G_rows else matrix(np.zeros((0, n)))
        h = matrix(np.concatenate(h_rows)) if h_rows else matrix(np.zeros(0))
        kwargs = {}
        if zero:
            kwargs["A"] = matrix(np.vstack([b.F for b in zero]))
            kwargs["b"] = matrix(-np.concatenate([b.g for b in zero]))
        opts = {"show_progress": False, "abstol": self.settings.tol_gap_abs,
                "reltol": self.settings.tol_gap_rel, "feastol": self.settings.tol_feas,
                "maxiters": self.settings.max_iter}
        try:
            res = solvers.conelp(matrix(np.asarray(program.c)), G, h, dims, options=opts, **kwargs)
        except (ValueError, ArithmeticError) as exc:
            return SolveOutcome(NUMERICAL_FAILURE, stats={"solver_status": f"error: {exc}"})
        stats = {"iterations": int(res.get("iterations", 0)), "solver_status": res["status"]}
        if res["status"] == "optimal":
            x = np.asarray(res["x"], dtype=float).reshape(-1)
            return SolveOutcome(OPTIMAL, x, float(program.c @ x), stats)
        if res["status"] == "primal infeasible":
            return SolveOutcome(INFEASIBLE, stats=stats)
        if res["status"] == "dual infeasible":
            return SolveOutcome(UNBOUNDED, stats=stats)
        return SolveOutcome(NUMERICAL_FAILURE, stats=stats)


class FallbackAdapter:
    """Try adapters in order until one returns something other than a numerical failure.

    Interior-point codes disagree most on nearly infeasible programs, where
    one may stall while another produces a certificate.
    """

    def __init__(self, adapters):
        self.adapters = tuple(adapters)
        if not self.adapters:
            raise ValueError("need at least one adapter")
        self.name = "+".join(a.name for a in self.adapters)

    def solve(self, program: ConicProgram) -> SolveOutcome:
        tried = []
        for ad in self.adapters:
            out = ad.solve(program)
            out.stats = {**out.stats, "adapter": ad.name}
            if out.status != NUMERICAL_FAILURE:
                if tried:
                    out.stats["fallback_from"] = tried
                return out
            tried.append({"adapter": ad.name, **{k: v for k, v in out.stats.items() if k != "adapter"}})
        out.stats["fallback_from"] = tried[:-1]
        return out


_DEFAULT = None


def default_adapter():
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = FallbackAdapter([ClarabelAdapter(), CvxoptAdapter()])
    return _DEFAULT


def solve(program: ConicProgram, settings: SolveSettings | None = None, adapter=None) -> SolveOutcome:
    if adapter is None:
        if settings is None:
            adapter = default_adapter()
        else:
            adapter = FallbackAdapter([ClarabelAdapter(settings), CvxoptAdapter(settings)])
    return adapter.solve(program)
