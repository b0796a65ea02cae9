import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cssmpc import conic


def _lp_program(c, A, b):
    bld = conic.ProgramBuilder()
    x = bld.add_variable("x", len(c))
    bld.add_objective(x, c)
    bld.add_block(conic.NONNEG, -A, b)
    return bld.build()


ADAPTERS = [conic.ClarabelAdapter(), conic.CvxoptAdapter()]


@pytest.mark.parametrize("adapter", ADAPTERS, ids=lambda a: a.name)
def test_box_lp(adapter):
    A = np.vstack([np.eye(2), -np.eye(2)])
    prog = _lp_program([1.0, 2.0], A, np.ones(4))
    out = adapter.solve(prog)
    assert out.optimal
    assert out.objective == pytest.approx(-3.0, abs=1e-7)
    assert prog.residuals(out.x) < 1e-7


@pytest.mark.parametrize("adapter", ADAPTERS, ids=lambda a: a.name)
def test_infeasible_and_unbounded(adapter):
    prog = _lp_program([1.0], np.array([[1.0], [-1.0]]), np.array([-1.0, -1.0]))
    assert adapter.solve(prog).status == conic.INFEASIBLE
    prog = _lp_program([1.0], np.array([[1.0]]), np.array([1.0]))
    assert adapter.solve(prog).status == conic.UNBOUNDED


@pytest.mark.parametrize("adapter", ADAPTERS, ids=lambda a: a.name)
def test_soc_projection(adapter):
    # min t s.t. ||x - p|| <= t, x1 + x2 >= 2: distance from p to a halfplane
    p = np.array([0.0, 0.0])
    bld = conic.ProgramBuilder()
    x = bld.add_variable("x", 2)
    t = bld.add_variable("t", 1)
    bld.add_objective(t, [1.0])
    F = np.vstack([bld.select(t), bld.select(x)])
    bld.add_block(conic.SOC, F, np.r_[0.0, -p])
    bld.add_block(conic.NONNEG, bld.select(x).sum(axis=0, keepdims=True), [-2.0])
    out = adapter.solve(bld.build())
    assert out.objective == pytest.approx(np.sqrt(2.0), abs=1e-7)


@pytest.mark.parametrize("adapter", ADAPTERS, ids=lambda a: a.name)
def test_psd_min_eigenvalue(adapter):
    # max lambda s.t. M - lambda I >= 0 recovers the smallest eigenvalue
    M = np.array([[2.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 1.0]])
    bld = conic.ProgramBuilder()
    lam = bld.add_variable("lam", 1)
    bld.add_objective(lam, [-1.0])
    bld.add_psd(np.array([-np.eye(3)]), M)
    out = adapter.solve(bld.build())
    assert -out.objective == pytest.approx(np.linalg.eigvalsh(M)[0], abs=1e-7)


@given(seed=st.integers(0, 10_000))
def test_least_squares_against_numpy(seed):
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((6, 3))
    g = rng.standard_normal(6)
    bld = conic.ProgramBuilder()
    x = bld.add_variable("x", 3)
    t = bld.add_variable("t", 1)
    bld.add_objective(t, [1.0])
    bld.add_rotated_quadratic_epigraph(t, np.hstack([F, np.zeros((6, 1))]), g)
    out = conic.solve(bld.build())
    ref = np.linalg.lstsq(F, -g, rcond=None)[0]
    assert out.optimal
    np.testing.assert_allclose(out.x[:3], ref, atol=1e-5)
    assert out.objective == pytest.approx(np.sum((F @ ref + g) ** 2), rel=1e-6)


@given(d=st.integers(1, 5), seed=st.integers(0, 1000))
def test_psd_vec_roundtrip(d, seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((d, d))
    M = M + M.T
    v = conic.vec_psd(M)
    assert v.size == conic.triangle_size(d)
    np.testing.assert_allclose(conic.mat_psd(v), M, atol=1e-14)
    # the scaled vectorization preserves the trace inner product
    N = rng.standard_normal((d, d))
    N = N + N.T
    assert v @ conic.vec_psd(N) == pytest.approx(np.trace(M @ N))


def test_text_roundtrip():
    bld = conic.ProgramBuilder()
    x = bld.add_variable("x", 2)
    bld.add_objective(x, [1.0, -1.0])
    bld.add_block(conic.NONNEG, -np.eye(2), np.ones(2))
    bld.add_psd(np.array([np.eye(2), np.diag([1.0, 2.0])]), np.eye(2))
    prog = bld.build()
    back = conic.ConicProgram.loads(prog.dumps())
    assert back.n_vars == prog.n_vars
    assert back.var_names == prog.var_names
    for b1, b2 in zip(prog.blocks, back.blocks):
        assert b1.kind == b2.kind
        np.testing.assert_array_equal(b1.F, b2.F)
        np.testing.assert_array_equal(b1.g, b2.g)


def test_program_validates_shapes():
    with pytest.raises(ValueError):
        conic.ConicProgram(2, np.zeros(3), ())
    with pytest.raises(ValueError):
        conic.ConicProgram(1, np.zeros(1), (conic.ConeBlock("cone", 1, np.zeros((1, 1)), np.zeros(1)),))


class _Broken:
    name = "broken"

    def solve(self, program):
        return conic.SolveOutcome(conic.NUMERICAL_FAILURE, stats={"why": "test"})


def test_fallback_uses_next_adapter():
    prog = _lp_program([1.0], np.array([[-1.0]]), np.array([0.0]))
    out = conic.FallbackAdapter([_Broken(), conic.ClarabelAdapter()]).solve(prog)
    assert out.optimal
    assert out.stats["adapter"] == "clarabel"
    assert out.stats["fallback_from"][0]["adapter"] == "broken"
    out = conic.FallbackAdapter([_Broken()]).solve(prog)
    assert out.status == conic.NUMERICAL_FAILURE
