"""Closed-loop receding-horizon runs and Monte Carlo studies."""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from cssmpc import conic, smpc
from cssmpc.sysmodel import GaussianBelief

log = logging.getLogger(__name__)

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
NUMERICAL = "numerical-failure"


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based stream: distinct seeds give independent trials."""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class StepRow:
    k: int
    x: np.ndarray
    u: np.ndarray | None
    w: np.ndarray | None
    tag: str
    feasible: bool
    cost: float


@dataclass
class TrialRecord:
    seed: int
    variant: str
    rows: list = field(default_factory=list)
    infeasible_at: int | None = None
    failure: str | None = None
    state_violations: np.ndarray | None = None
    control_violations: np.ndarray | None = None
    tau_history: list = field(default_factory=list)
    final_state: np.ndarray | None = None
    solve_time: float = 0.0
    n_solves: int = 0

    @property
    def n_steps(self) -> int:
        """Number of controls actually applied."""
        return sum(1 for r in self.rows if r.feasible)

    @property
    def total_cost(self) -> float:
        return float(sum(r.cost for r in self.rows if r.feasible))

    def to_csv(self) -> str:
        n_x = self.rows[0].x.size
        n_u = next((r.u.size for r in self.rows if r.u is not None), 0)
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["k", *[f"x{i}" for i in range(n_x)], *[f"u{j}" for j in range(n_u)],
                     "init_tag", "feasible", "cost"])
        for r in self.rows:
            u = r.u if r.u is not None else np.full(n_u, np.nan)
            wr.writerow([r.k, *map(fmt, r.x), *map(fmt, u), r.tag, int(r.feasible), fmt(r.cost)])
        return buf.getvalue()


def fmt(v) -> str:
    """17 significant digits, enough to round-trip a double."""
    return format(float(v), ".17g")


class SolveCache:
    """Memo of horizon solves keyed by step and exact belief bytes.

    Under static initialization the beliefs do not depend on the noise, so
    every trial of a study asks for the same sequence of problems.
    """

    def __init__(self):
        self._store = {}
        self.hits = 0

    def get(self, key, compute):
        if key in self._store:
            self.hits += 1
            return self._store[key]
        val = compute()
        self._store[key] = val
        return val


class Controller:
    """One variant of the receding-horizon controller on one scenario."""

    def __init__(self, scenario, terminal, init_mode: str = smpc.STATIC, gain_mode: str = smpc.LOWER,
                 adapter=None, cache: SolveCache | None = None, name: str = "robust"):
        self.scenario = scenario
        if terminal is None or isinstance(terminal, smpc.TerminalSpec):
            self.terminal = terminal
        else:
            self.terminal = smpc.TerminalSpec.from_ingredients(terminal)
        self.init_mode = init_mode
        self.gain_mode = gain_mode
        self.adapter = adapter
        self.cache = cache if cache is not None else SolveCache()
        self.name = name
        self.solve_time = 0.0
        self.n_solves = 0

    def _solve_now(self, belief: GaussianBelief, k: int) -> smpc.SMPCSolution:
        t0 = time.perf_counter()
        try:
            return smpc.solve_smpc(belief, self.scenario.window(k), self.scenario.cost, self.scenario.chance,
                                   self.terminal, self.gain_mode, self.adapter)
        finally:
            self.solve_time += time.perf_counter() - t0
            self.n_solves += 1

    def solve(self, belief: GaussianBelief, k: int) -> smpc.SMPCSolution:
        key = (k, belief.mean.tobytes(), belief.cov.tobytes())
        return self.cache.get(key, lambda: self._solve_now(belief, k))


def stage_cost(cost, x, u) -> float:
    e = x - cost.x_goal
    return float(e @ cost.Q @ e + u @ cost.R @ u)


def run_trial(scenario, terminal, init_mode: str = smpc.STATIC, seed: int = 0, *, gain_mode: str = smpc.LOWER,
              steps: int | None = None, controller: Controller | None = None, variant: str = "robust") -> TrialRecord:
    """Simulate the closed loop for ``steps`` steps (default: the schedule length minus the horizon).

    Infeasibility and solver breakdowns end the trial and are recorded,
    not raised.
    """
    ctl = controller or Controller(scenario, terminal, init_mode, gain_mode, name=variant)
    T = steps if steps is not None else max(len(scenario.schedule) - scenario.horizon, 1)
    if len(scenario.schedule) < scenario.horizon:
        raise ValueError("schedule is shorter than the horizon")
    rng = make_rng(seed)
    x = np.array(scenario.x0, dtype=float)
    st_rows, u_rows = scenario.chance.state_rows, scenario.chance.control_rows
    rec = TrialRecord(seed, ctl.name)
    sviol, uviol = [], []
    prev = None
    t_start, n_start = ctl.solve_time, ctl.n_solves
    for k in range(T):
        try:
            init = smpc.initialize(prev, x, ctl.init_mode, lambda b, k=k: ctl.solve(b, k))
            sol = init.solution if init.solution is not None else ctl.solve(init.belief, k)
        except smpc.SolverFailure as exc:
            log.warning("trial %d step %d: %s", seed, k, exc)
            rec.rows.append(StepRow(k, x.copy(), None, None, smpc.TAG_OPEN_LOOP if prev else smpc.TAG_INITIAL,
                                    False, np.nan))
            rec.infeasible_at, rec.failure = k, NUMERICAL
            break
        if init.tag == smpc.TAG_RECONDITIONED:
            rec.tau_history.append(k)
        if not sol.optimal:
            rec.rows.append(StepRow(k, x.copy(), None, None, init.tag, False, np.nan))
            rec.infeasible_at, rec.failure = k, INFEASIBLE if sol.status == conic.INFEASIBLE else NUMERICAL
            break
        u = sol.first_control(x)
        S = scenario.schedule[min(k, len(scenario.schedule) - 1)]
        w = rng.standard_normal(S.n_w)
        rec.rows.append(StepRow(k, x.copy(), u, w, init.tag, True, stage_cost(scenario.cost, x, u)))
        uviol.append([r.a @ u > r.b for r in u_rows])
        x = S.A @ x + S.B @ u + S.D @ w + S.r
        sviol.append([r.a @ x > r.b for r in st_rows])
        prev = sol
    rec.final_state = x
    rec.state_violations = np.array(sviol, dtype=bool).reshape(-1, len(st_rows))
    rec.control_violations = np.array(uviol, dtype=bool).reshape(-1, len(u_rows))
    rec.solve_time = ctl.solve_time - t_start
    rec.n_solves = ctl.n_solves - n_start
    return rec


# -- aggregation ----------------------------------------------------------------

@dataclass(frozen=True)
class RowRate:
    row: int
    violations: int
    exposure: int
    rate: float
    lower: float
    upper: float

    def to_dict(self) -> dict:
        return {"row": self.row, "violations": self.violations, "exposure": self.exposure,
                "rate": self.rate, "wilson95": [self.lower, self.upper]}


def wilson_interval(k: int, n: int, confidence: float = 0.95):
    if n == 0:
        return np.nan, np.nan
    ci = binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def _rates(mats) -> list:
    mats = [m for m in mats if m is not None and m.size]
    if not mats:
        return []
    M = np.vstack(mats)
    out = []
    for j in range(M.shape[1]):
        k, n = int(M[:, j].sum()), M.shape[0]
        lo, hi = wilson_interval(k, n)
        out.append(RowRate(j, k, n, k / n, lo, hi))
    return out


def estimate_violation_rates(records):
    """Per-row empirical violation rates (state rows, control rows) with Wilson intervals."""
    records = list(records)
    if not records:
        raise ValueError("need at least one trial record")
    return (_rates([r.state_violations for r in records]),
            _rates([r.control_violations for r in records]))


@dataclass
class MonteCarloSummary:
    variant: str
    n_trials: int
    infeasibility_count: int
    numerical_failure_count: int
    infeasible_steps: list
    state_rates: list
    control_rates: list
    mean_cost: float
    max_cost: float
    wall_time: float
    solve_time: float
    n_solves: int
    records: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant, "n_trials": self.n_trials,
            "infeasibility_count": self.infeasibility_count,
            "numerical_failure_count": self.numerical_failure_count,
            "infeasible_steps": self.infeasible_steps,
            "violation_rates": {"state": [r.to_dict() for r in self.state_rates],
                                "control": [r.to_dict() for r in self.control_rates]},
            "cost": {"mean": self.mean_cost, "max": self.max_cost},
            "runtime": {"wall_seconds": self.wall_time, "solve_seconds": self.solve_time,
                        "solves": self.n_solves},
        }


def summarize(variant: str, records, wall_time: float = 0.0) -> MonteCarloSummary:
    records = list(records)
    st, ct = estimate_violation_rates(records)
    costs = [r.total_cost for r in records]
    return MonteCarloSummary(
        variant, len(records),
        sum(1 for r in records if r.failure == INFEASIBLE),
        sum(1 for r in records if r.failure == NUMERICAL),
        [[r.seed, r.infeasible_at] for r in records if r.infeasible_at is not None],
        st, ct, float(np.mean(costs)), float(np.max(costs)), wall_time,
        float(sum(r.solve_time for r in records)), int(sum(r.n_solves for r in records)), records)


def _trial_batch(args):
    scenario, terminal, init_mode, gain_mode, seeds, steps, variant = args
    ctl = Controller(scenario, terminal, init_mode, gain_mode, name=variant)
    return [run_trial(scenario, terminal, init_mode, s, gain_mode=gain_mode, steps=steps, controller=ctl,
                      variant=variant) for s in seeds]


def run_monte_carlo(scenario, variants: dict, n_trials: int, base_seed: int = 0, init_mode: str = smpc.STATIC,
                    gain_mode: str = smpc.LOWER, steps: int | None = None, workers: int = 1) -> dict:
    """Run ``n_trials`` seeded trials (seeds ``base_seed + i``) for each named variant.

    ``variants`` maps a name to terminal ingredients (or None for the
    no-terminal ablation). With ``workers > 1`` trials are split across
    processes; records come back in seed order either way.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    seeds = [base_seed + i for i in range(n_trials)]
    out = {}
    for name, terminal in variants.items():
        t0 = time.perf_counter()
        if workers <= 1:
            records = _trial_batch((scenario, terminal, init_mode, gain_mode, seeds, steps, name))
        else:
            chunks = [seeds[i::workers] for i in range(workers) if seeds[i::workers]]
            with ProcessPoolExecutor(len(chunks)) as ex:
                parts = ex.map(_trial_batch, [(scenario, terminal, init_mode, gain_mode, c, steps, name)
                                              for c in chunks])
                records = sorted((r for p in parts for r in p), key=lambda r: r.seed)
        out[name] = summarize(name, records, time.perf_counter() - t0)
    return out
