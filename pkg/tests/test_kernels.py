"""Compiled halfspace kernels against the numpy fallback and HiGHS."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from cssmpc import _kernels
from cssmpc._kernels import fallback
from oracles import random_polytope

compiled = pytest.mark.skipif(_kernels.BACKEND != "cython", reason="compiled kernels not built")


def _instance(seed, d):
    rng = np.random.default_rng(seed)
    A, b = random_polytope(rng, d, redundant=3)
    return np.ascontiguousarray(A), np.ascontiguousarray(b), rng


@given(seed=st.integers(0, 10_000), d=st.integers(1, 4))
def test_lp_max_matches_highs(seed, d):
    A, b, rng = _instance(seed, d)
    c = rng.standard_normal(d)
    status, x = _kernels.lp_max(A, b, c)
    assert status == 0
    ref = linprog(-c, A_ub=A, b_ub=b, bounds=[(None, None)] * d, method="highs")
    assert np.all(A @ x <= b + 1e-9)
    assert c @ x == pytest.approx(-ref.fun, abs=1e-8)


def test_lp_max_detects_unbounded():
    A = np.array([[1.0, 0.0], [0.0, 1.0]])
    b = np.array([1.0, 1.0])
    status, _ = _kernels.lp_max(A, b, np.array([-1.0, 0.0]))
    assert status == 1


@given(seed=st.integers(0, 10_000), d=st.integers(1, 3))
def test_lp_max_many_matches_single(seed, d):
    A, b, rng = _instance(seed, d)
    C = np.ascontiguousarray(rng.standard_normal((5, d)))
    stat, vals = _kernels.lp_max_many(A, b, C)
    for i in range(5):
        s, x = _kernels.lp_max(A, b, C[i])
        assert stat[i] == s
        assert vals[i] == pytest.approx(C[i] @ x, abs=1e-10)


@compiled
@given(seed=st.integers(0, 10_000), d=st.integers(1, 4))
def test_backends_agree_on_lp(seed, d):
    from cssmpc._kernels import _lp

    A, b, rng = _instance(seed, d)
    C = np.ascontiguousarray(rng.standard_normal((4, d)))
    s1, v1 = _lp.lp_max_many(A, b, C)
    s2, v2 = fallback.lp_max_many(A, b, C)
    np.testing.assert_array_equal(s1, s2)
    np.testing.assert_allclose(v1, v2, atol=1e-9)


@compiled
@given(seed=st.integers(0, 10_000), d=st.integers(1, 3))
def test_backends_agree_on_redundancy(seed, d):
    from cssmpc._kernels import _lp

    A, b, _ = _instance(seed, d)
    cand = np.ones(A.shape[0], dtype=np.uint8)
    s1, k1 = _lp.clarkson(A, b, cand, 1e-8)
    s2, k2 = fallback.clarkson(A, b, cand, 1e-8)
    assert s1 == s2 == 0
    np.testing.assert_array_equal(k1, k2)
    s1, k1 = _lp.prune(A, b, 1e-8)
    s2, k2 = fallback.prune(A, b, 1e-8)
    np.testing.assert_array_equal(k1, k2)


@compiled
@given(seed=st.integers(0, 10_000), d=st.integers(2, 4))
def test_backends_agree_on_fm(seed, d):
    from cssmpc._kernels import _fm

    A, b, rng = _instance(seed, d)
    col = int(rng.integers(d))
    A1, b1 = _fm.fm_combine(A, b, col, 1e-12)
    A2, b2 = fallback.fm_combine(A, b, col, 1e-12)
    np.testing.assert_allclose(A1, A2, atol=1e-13)
    np.testing.assert_allclose(b1, b2, atol=1e-13)
    n1 = _fm.normalize_rows(A, b, 1e-12)
    n2 = fallback.normalize_rows(A, b, 1e-12)
    np.testing.assert_allclose(n1[0], n2[0])
    assert n1[2] == n2[2]
    m1 = _fm.merge_duplicates(np.vstack([A, A]), np.r_[b, b - 0.1], 1e-9)
    m2 = fallback.merge_duplicates(np.vstack([A, A]), np.r_[b, b - 0.1], 1e-9)
    np.testing.assert_allclose(m1[1], m2[1])


def test_normalize_flags_infeasible_zero_row():
    A = np.array([[0.0, 0.0], [2.0, 0.0]])
    b = np.array([-1.0, 4.0])
    An, bn, bad = fallback.normalize_rows(A, b, 1e-12)
    assert bad
    np.testing.assert_allclose(An, [[1.0, 0.0]])
    np.testing.assert_allclose(bn, [2.0])


def test_merge_keeps_tightest_offset():
    A = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    b = np.array([2.0, 1.0, 3.0])
    Am, bm = fallback.merge_duplicates(A, b, 1e-9)
    assert Am.shape == (2, 2)
    np.testing.assert_allclose(bm, [1.0, 3.0])
