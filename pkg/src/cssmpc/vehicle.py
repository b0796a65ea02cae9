"""Lateral path-tracking benchmark: linearized kinematic bicycle.

State ``x = [delta, e_psi, e_y]`` (steering angle, heading error, lateral
error), control ``u = d(delta)/dt``. The model is Euler-discretized around a
speed/curvature schedule ``(nu_k, rho_k)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from cssmpc.polytope import Polytope
from cssmpc.sysmodel import ChanceSpec, ParameterHull, StageCost, SystemRealization


@dataclass(frozen=True)
class VehicleParams:
    lf: float = 2.4
    lr: float = 2.4
    dt: float = 0.1
    theta_delta: float = 0.1
    theta_psi: float = 0.1
    theta_y: float = 0.1

    def __post_init__(self):
        if self.lf + self.lr <= 0:
            raise ValueError("lf + lr must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


NU_BOUNDS = (1.0, 20.0)
RHO_BOUNDS = (-0.025, 0.025)


def linearize(params: VehicleParams, nu: float, rho: float) -> SystemRealization:
    if nu <= 0:
        raise ValueError("speed must be positive")
    L = params.lf + params.lr
    dt = params.dt
    A = np.array([
        [1.0, 0.0, 0.0],
        [nu * dt / L, 1.0, 0.0],
        [params.lr * nu * dt / L, nu * dt, 1.0],
    ])
    B = np.array([[dt], [params.lr * dt / L], [0.0]])
    D = np.diag([params.theta_delta * dt, params.theta_psi * dt, params.theta_y * dt])
    r = np.array([0.0, -rho * nu * dt, 0.0])
    return SystemRealization(A, B, D, r)


def build_hull(params: VehicleParams, nu_bounds=NU_BOUNDS, rho_bounds=RHO_BOUNDS) -> ParameterHull:
    """Four-corner hull over (speed, curvature)."""
    (nu_lo, nu_hi), (rho_lo, rho_hi) = nu_bounds, rho_bounds
    if nu_lo > nu_hi or rho_lo > rho_hi:
        raise ValueError("bounds must be ordered (low, high)")
    corners = [(nu_lo, rho_lo), (nu_hi, rho_lo), (nu_lo, rho_hi), (nu_hi, rho_hi)]
    return ParameterHull(tuple(linearize(params, nu, rho) for nu, rho in corners))


@dataclass(frozen=True)
class ReferenceProfile:
    nu: tuple
    rho: tuple

    def __post_init__(self):
        nu = tuple(float(v) for v in self.nu)
        rho = tuple(float(v) for v in self.rho)
        if len(nu) != len(rho):
            raise ValueError("speed and curvature schedules differ in length")
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "rho", rho)

    def __len__(self) -> int:
        return len(self.nu)

    def within(self, nu_bounds=NU_BOUNDS, rho_bounds=RHO_BOUNDS, tol: float = 1e-12) -> list:
        """Indices of schedule steps outside the bounds."""
        bad = []
        for k, (nu, rho) in enumerate(zip(self.nu, self.rho)):
            if not (nu_bounds[0] - tol <= nu <= nu_bounds[1] + tol and rho_bounds[0] - tol <= rho <= rho_bounds[1] + tol):
                bad.append(k)
        return bad


def default_profile(length: int = 64, nu_start: float = 5.0, nu_end: float = 15.0,
                    rho_peak: float = 0.02) -> ReferenceProfile:
    """Speed ramp with a left-then-right curvature pulse."""
    k = np.arange(length)
    nu = nu_start + (nu_end - nu_start) * k / max(length - 1, 1)
    rho = np.zeros(length)
    q = length // 4
    rho[q:2 * q] = rho_peak
    rho[2 * q:3 * q] = -rho_peak
    return ReferenceProfile(tuple(nu), tuple(rho))


def constant_profile(length: int, nu: float, rho: float) -> ReferenceProfile:
    return ReferenceProfile((nu,) * length, (rho,) * length)


def state_box() -> Polytope:
    q = math.pi / 4
    return Polytope.box([-q, -q, -2.0], [q, q, 2.0])


def control_box() -> Polytope:
    return Polytope.box([-1.0], [1.0])


@dataclass(frozen=True)
class Scenario:
    """Everything a closed-loop run needs apart from terminal ingredients."""

    schedule: tuple
    hull: ParameterHull
    X: Polytope
    U: Polytope
    chance: ChanceSpec
    cost: StageCost
    horizon: int
    x0: np.ndarray
    name: str = "scenario"
    nominal_hull: ParameterHull | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_x(self) -> int:
        return self.hull.n_x

    @property
    def n_u(self) -> int:
        return self.hull.n_u

    def window(self, k: int):
        """Realizations for steps k..k+N-1; the schedule's last entry is held past its end."""
        T = len(self.schedule)
        return [self.schedule[min(t, T - 1)] for t in range(k, k + self.horizon)]


def build_scenario(profile: ReferenceProfile | None = None, params: VehicleParams | None = None,
                   horizon: int = 4, p_x: float = 0.025, p_u: float = 0.05, R: float = 100.0,
                   x0=(0.0, 0.0, 0.0), nu_bounds=NU_BOUNDS, rho_bounds=RHO_BOUNDS) -> Scenario:
    params = params or VehicleParams()
    profile = profile or default_profile()
    bad = profile.within(nu_bounds, rho_bounds)
    if bad:
        raise ValueError(f"profile leaves the hull bounds at steps {bad[:5]}")
    hull = build_hull(params, nu_bounds, rho_bounds)
    schedule = tuple(linearize(params, nu, rho) for nu, rho in zip(profile.nu, profile.rho))
    X, U = state_box(), control_box()
    chance = ChanceSpec.from_polytopes(X, U, p_x, p_u)
    cost = StageCost(np.eye(3), np.array([[R]]), np.zeros(3))
    nu_mean = float(np.mean(profile.nu))
    rho_mean = float(np.mean(profile.rho))
    nominal = ParameterHull((linearize(params, nu_mean, rho_mean),))
    return Scenario(schedule, hull, X, U, chance, cost, horizon, np.asarray(x0, dtype=float),
                    name="vehicle", nominal_hull=nominal,
                    meta={"params": params, "profile": profile, "nu_mean": nu_mean, "rho_mean": rho_mean})


def with_overrides(scn: Scenario, **kw) -> Scenario:
    return replace(scn, **kw)
