import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cssmpc import conic, smpc
from cssmpc.sysmodel import ChanceSpec, GaussianBelief, StageCost, SystemRealization
from instances import box_chance, check_shift, random_belief, random_window, shift_instance
from oracles import deterministic_mpc, riccati_cost

dims = st.tuples(st.integers(1, 3), st.integers(1, 2), st.integers(1, 4))


@given(seed=st.integers(0, 10_000), d=dims)
def test_block_matrices_match_simulation(seed, d):
    n_x, n_u, N = d
    rng = np.random.default_rng(seed)
    win = random_window(rng, n_x, n_u, N)
    bm = smpc.build_block_matrices(win)
    x0 = rng.standard_normal(n_x)
    U = rng.standard_normal(N * n_u)
    W = rng.standard_normal(N * n_x)
    xs = [x0]
    for t, S in enumerate(win):
        xs.append(S.A @ xs[-1] + S.B @ U[t * n_u:(t + 1) * n_u] + S.D @ W[t * n_x:(t + 1) * n_x] + S.r)
    np.testing.assert_allclose(bm.a_bar @ x0 + bm.b_bar @ U + bm.d_bar @ W + bm.r_bar, np.concatenate(xs),
                               atol=1e-10)


@given(seed=st.integers(0, 10_000), d=dims)
def test_error_transition_generates_uncontrolled_error(seed, d):
    n_x, _, N = d
    rng = np.random.default_rng(seed)
    win = random_window(rng, n_x, 1, N)
    bm = smpc.build_block_matrices(win)
    Psi = smpc.error_transition(win)
    y0 = rng.standard_normal(n_x)
    W = rng.standard_normal(N * n_x)
    z = np.r_[y0, np.concatenate([S.D @ W[t * n_x:(t + 1) * n_x] for t, S in enumerate(win)])]
    np.testing.assert_allclose(Psi @ z, bm.a_bar @ y0 + bm.d_bar @ W, atol=1e-10)


def test_gain_patterns():
    lo = smpc.gain_pattern(smpc.LOWER, 3, 1, 2)
    di = smpc.gain_pattern(smpc.DIAGONAL, 3, 1, 2)
    assert lo.shape == (3, 8)
    assert lo.sum() == 2 * (1 + 2 + 3)
    assert di.sum() == 3 * 2
    assert not np.any(di & ~lo)
    assert not smpc.gain_pattern(smpc.ZERO, 3, 1, 2).any()
    assert not lo[:, -2:].any()  # the last error block never feeds back
    with pytest.raises(ValueError):
        smpc.gain_pattern("upper", 3, 1, 2)


def test_gain_stack_rejects_entries_outside_pattern():
    M = np.zeros((2, 3))
    M[0, 1] = 1.0
    with pytest.raises(ValueError):
        smpc.GainStack(smpc.LOWER, M, 2, 1, 1)
    with pytest.raises(ValueError):
        smpc.GainStack(smpc.LOWER, np.zeros((2, 2)), 2, 1, 1)


# -- state-feedback equivalence ------------------------------------------------------

def propagate_state_feedback(belief, window, L_blocks):
    covs = [belief.cov]
    for S, L in zip(window, L_blocks):
        Acl = S.A + S.B @ L
        covs.append(Acl @ covs[-1] @ Acl.T + S.D @ S.D.T)
    return np.stack(covs)


@given(seed=st.integers(0, 100_000), d=dims)
def test_state_feedback_gains_reproduce_covariances(seed, d):
    n_x, n_u, N = d
    rng = np.random.default_rng(seed)
    win = random_window(rng, n_x, n_u, N)
    belief = random_belief(rng, n_x, 0.5)
    L = [0.5 * rng.standard_normal((n_u, n_x)) for _ in range(N)]
    prob = smpc.SMPCProblem(belief, win, StageCost(np.eye(n_x), np.eye(n_u), np.zeros(n_x)), ChanceSpec(), None)
    K = smpc.gains_from_state_feedback(L, prob.blocks.b_bar)
    assert not np.any(K[~smpc.gain_pattern(smpc.LOWER, N, n_u, n_x)])
    _, covs, _ = prob.moments(np.zeros(N * n_u), K)
    ref = propagate_state_feedback(belief, win, L)
    np.testing.assert_allclose(covs, ref, atol=1e-9 * max(1.0, np.abs(ref).max()))


# -- oracles -----------------------------------------------------------------------

@settings(max_examples=15)
@given(seed=st.integers(0, 10_000), n_x=st.integers(1, 2), N=st.integers(1, 4), noisy=st.booleans())
def test_unconstrained_optimum_is_riccati(seed, n_x, N, noisy):
    rng = np.random.default_rng(seed)
    A = np.eye(n_x) + 0.3 * rng.standard_normal((n_x, n_x))
    B = rng.standard_normal((n_x, 1))
    D = 0.2 * rng.standard_normal((n_x, n_x)) if noisy else np.zeros((n_x, n_x))
    win = [SystemRealization(A, B, D, np.zeros(n_x))] * N
    Q, R = np.eye(n_x), np.eye(1) * 0.5
    belief = random_belief(rng, n_x, 0.3) if noisy else GaussianBelief.point(rng.standard_normal(n_x))
    sol = smpc.solve_smpc(belief, win, StageCost(Q, R, np.zeros(n_x)), ChanceSpec(), None)
    assert sol.optimal
    # LQR is optimal among causal policies and lies in the lower-triangular class
    P = [Q]
    for _ in range(N):
        S = R + B.T @ P[0] @ B
        P.insert(0, Q + A.T @ P[0] @ (A - B @ np.linalg.solve(S, B.T @ P[0] @ A)))
    ref = riccati_cost([A] * N, [B] * N, Q, R, Q, belief.mean)
    ref += np.trace(P[0] @ belief.cov) + sum(np.trace(P[t + 1] @ D @ D.T) for t in range(N))
    assert sol.cost == pytest.approx(ref, rel=1e-6, abs=1e-7)


@settings(max_examples=10)
@given(seed=st.integers(0, 10_000), n_x=st.integers(1, 2), N=st.integers(1, 4))
def test_zero_noise_matches_deterministic_mpc(seed, n_x, N):
    rng = np.random.default_rng(seed)
    win = [SystemRealization(S.A, S.B, np.zeros((n_x, n_x)), S.r) for S in random_window(rng, n_x, 1, N)]
    ch = box_chance(n_x, 1, 1.5, 1.0)
    cost = StageCost(np.eye(n_x), np.eye(1), np.zeros(n_x))
    x0 = rng.uniform(-1, 1, n_x)
    sol = smpc.solve_smpc(GaussianBelief.point(x0), win, cost, ch, None)
    status, ref = deterministic_mpc(win, cost.Q, cost.R, x0, [(r.a, r.b) for r in ch.state_rows],
                                    [(r.a, r.b) for r in ch.control_rows])
    if status != "optimal":
        assert not sol.optimal
        return
    assert sol.optimal
    assert sol.cost == pytest.approx(ref, abs=1e-6)


# -- the horizon problem on the vehicle ---------------------------------------------

def test_vehicle_solution_is_consistent(vehicle_scenario, vehicle_frozen):
    scn = vehicle_scenario
    spec = smpc.TerminalSpec.from_ingredients(vehicle_frozen)
    prob = smpc.SMPCProblem(GaussianBelief.point(scn.x0), scn.window(0), scn.cost, scn.chance, spec)
    sol = prob.solve()
    assert sol.optimal
    ev = prob.evaluate(sol.v_stack, sol.gains)
    assert ev["max"] <= 1e-6
    assert ev["cost"] == pytest.approx(sol.cost)
    assert prob.program().residuals(prob.point(sol.v_stack, sol.gains)) < 1e-6
    diag = smpc.solve_smpc(GaussianBelief.point(scn.x0), scn.window(0), scn.cost, scn.chance, spec, smpc.DIAGONAL)
    assert diag.optimal and diag.cost >= sol.cost - 1e-7


def test_point_belief_drops_unidentifiable_gains(vehicle_scenario):
    scn = vehicle_scenario
    prob = smpc.SMPCProblem(GaussianBelief.point(scn.x0), scn.window(0), scn.cost, scn.chance, None)
    # the first error block is zero, so its columns carry no information
    assert not prob.active[:, :scn.n_x].any()
    assert prob.active.sum() < prob.mask.sum()


def test_first_control_and_next_belief():
    S = SystemRealization([[1.0]], [[1.0]], [[0.1]], [0.0])
    cost = StageCost([[1.0]], [[1.0]], [0.0])
    b = GaussianBelief([1.0], [[0.04]])
    sol = smpc.solve_smpc(b, [S, S], cost, ChanceSpec(), None)
    u = sol.first_control([1.2])
    assert u[0] == pytest.approx(sol.v_stack[0] + sol.gains.block(0, 0)[0, 0] * 0.2)
    nb = sol.next_belief()
    np.testing.assert_allclose(nb.mean, sol.predicted_means[1])


class _Broken:
    name = "broken"

    def solve(self, program):
        return conic.SolveOutcome(conic.NUMERICAL_FAILURE)


def test_numerical_failure_raises():
    S = SystemRealization([[1.0]], [[1.0]], [[0.1]], [0.0])
    cost = StageCost([[1.0]], [[1.0]], [0.0])
    with pytest.raises(smpc.SolverFailure):
        smpc.solve_smpc(GaussianBelief.point([0.0]), [S], cost, ChanceSpec(), None, adapter=_Broken())


def test_infeasible_returns_status():
    S = SystemRealization([[1.0]], [[1.0]], [[0.1]], [0.0])
    cost = StageCost([[1.0]], [[1.0]], [0.0])
    sol = smpc.solve_smpc(GaussianBelief.point([5.0]), [S, S], cost, box_chance(1, 1, 1.0, 0.1), None)
    assert sol.status == conic.INFEASIBLE
    with pytest.raises(smpc.SMPCError):
        sol.first_control([5.0])


# -- initialization -------------------------------------------------------------------

def _solved():
    S = SystemRealization([[1.0]], [[1.0]], [[0.1]], [0.0])
    cost = StageCost([[1.0]], [[1.0]], [0.0])
    return smpc.solve_smpc(GaussianBelief.point([1.0]), [S, S], cost, ChanceSpec(), None)


def test_initialize_modes():
    first = smpc.initialize(None, [1.0], smpc.STATIC)
    assert first.tag == smpc.TAG_INITIAL and first.belief.cov[0, 0] == 0.0
    prev = _solved()
    st_init = smpc.initialize(prev, [3.0], smpc.STATIC)
    assert st_init.tag == smpc.TAG_OPEN_LOOP
    np.testing.assert_allclose(st_init.belief.mean, prev.predicted_means[1])
    dyn = smpc.initialize(prev, [3.0], smpc.DYNAMIC, lambda b: _solved())
    assert dyn.tag == smpc.TAG_RECONDITIONED and dyn.solution is not None
    bad = smpc.SMPCSolution(conic.INFEASIBLE)
    fallback = smpc.initialize(prev, [3.0], smpc.DYNAMIC, lambda b: bad)
    assert fallback.tag == smpc.TAG_OPEN_LOOP
    with pytest.raises(ValueError):
        smpc.initialize(prev, [3.0], "sometimes")
    with pytest.raises(ValueError):
        smpc.initialize(prev, [3.0], smpc.DYNAMIC)


# -- shifted candidate ------------------------------------------------------------------

@settings(max_examples=5)
@given(seed=st.integers(0, 10_000))
def test_shifted_candidate_is_feasible_and_bounds_cost(seed):
    prob, sol, spec, nxt = shift_instance(np.random.default_rng(seed))
    viol, cand, re = check_shift(prob, sol, spec, nxt)
    assert viol <= 1e-6
    assert cand >= re - 1e-6 * max(1.0, abs(re))


def test_shift_requires_lower_mode_and_shifted_window(vehicle_scenario, vehicle_frozen):
    scn = vehicle_scenario
    spec = smpc.TerminalSpec.from_ingredients(vehicle_frozen)
    b = GaussianBelief.point(scn.x0)
    sol = smpc.solve_smpc(b, scn.window(0), scn.cost, scn.chance, spec)
    with pytest.raises(ValueError):
        smpc.shift_candidate(sol, spec, scn.window(5))
    diag = smpc.solve_smpc(b, scn.window(0), scn.cost, scn.chance, spec, smpc.DIAGONAL)
    with pytest.raises(ValueError):
        smpc.shift_candidate(diag, spec, scn.window(1))
    V, K = smpc.shift_candidate(sol, spec, scn.window(1))
    nxt = smpc.SMPCProblem(sol.next_belief(), scn.window(1), scn.cost, scn.chance, spec)
    assert nxt.evaluate(V, K)["max"] <= 1e-6


def test_terminal_feedforward_lands_in_set():
    from cssmpc.polytope import Polytope

    S = SystemRealization([[2.0]], [[1.0]], [[0.1]], [0.0])
    xf = Polytope.box([-0.5], [0.5])
    us = Polytope.box([-0.5], [0.5])
    v = smpc.terminal_feedforward([0.4], S, xf, us)
    assert abs(2 * 0.4 + v[0]) <= 0.5 + 1e-9
    assert v[0] == pytest.approx(-0.3)
    with pytest.raises(smpc.TerminalSetError):
        smpc.terminal_feedforward([2.0], S, xf, us)
