import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from yoss.lpcore import (AffineFir, HorizonError, LinearProgram, MatchingProblem, VariableSpace, lp_dump, lp_solve,
                         mm_build, mm_solve)
from yoss.oplib import FirOperator
from yoss.structure import NodeDims, StructureMask, mask_check_membership

from conftest import scalar


def test_lp_examples():
    r = lp_solve(LinearProgram(c=np.array([-1.0]), G=np.array([[1.0]]), h=np.array([1.0])))
    assert r.status == "optimal" and abs(r.value + 1) < 1e-12 and abs(r.x[0] - 1) < 1e-12
    r = lp_solve(LinearProgram(c=np.array([0.0]), G=np.array([[1.0]]), h=np.array([-1.0])))
    assert r.status == "infeasible"
    r = lp_solve(LinearProgram(c=np.array([-1.0, 0.0]), G=np.array([[1.0, -1.0]]), h=np.array([1.0])))
    assert r.status == "unbounded"


def test_lp_free_variables_and_equalities():
    # min x + y  s.t.  x - y = 3, x >= -5 free y
    lp = LinearProgram(c=np.array([1.0, 1.0]), E=np.array([[1.0, -1.0]]), f=np.array([3.0]),
                       G=np.array([[0.0, -1.0]]), h=np.array([4.0]), lb=np.array([-5.0, -np.inf]))
    r = lp_solve(lp)
    assert r.ok and abs(r.value - (-5.0)) < 1e-10


def vertex_oracle(c, G, h, E, f):
    """Brute force over basic solutions of a bounded polytope: (status, value)."""
    n = len(c)
    rows = np.vstack([G, -np.eye(n)])
    rhs = np.concatenate([h, np.zeros(n)])
    k = n - E.shape[0]
    best = np.inf
    for act in itertools.combinations(range(len(rows)), k):
        M = np.vstack([E, rows[list(act)]])
        if abs(np.linalg.det(M)) < 1e-9:
            continue
        v = np.linalg.solve(M, np.concatenate([f, rhs[list(act)]]))
        if np.all(rows @ v <= rhs + 1e-9) and np.allclose(E @ v, f, atol=1e-9):
            best = min(best, c @ v)
    return ("optimal", best) if np.isfinite(best) else ("infeasible", np.nan)


@st.composite
def small_lp(draw):
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    mi = int(rng.integers(0, 5))
    me = int(rng.integers(0, min(2, n)))
    c = rng.normal(size=n)
    G = np.vstack([rng.normal(size=(mi, n)), np.eye(n)])  # box keeps it bounded
    h = np.concatenate([rng.normal(size=mi) + 0.5, rng.uniform(1, 5, n)])
    E = rng.normal(size=(me, n))
    f = E @ rng.uniform(0, 1, n) if draw(st.booleans()) else rng.normal(size=me)
    return c, G, h, E, f


@settings(max_examples=100, deadline=None)
@given(small_lp())
def test_lp_matches_vertex_enumeration(inst):
    c, G, h, E, f = inst
    res = lp_solve(LinearProgram(c=c, G=G, h=h, E=E, f=f))
    status, value = vertex_oracle(c, G, h, E, f)
    assert res.status == status
    if status == "optimal":
        assert abs(res.value - value) <= 1e-8 * max(1.0, abs(value))
        assert max(res.residuals.values(), default=0.0) <= 1e-8


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_lp_bland_agrees_with_dantzig(seed):
    rng = np.random.default_rng(seed)
    n, m = 20, 12
    lp = LinearProgram(c=rng.normal(size=n), G=np.vstack([rng.normal(size=(m, n)), np.eye(n)]),
                       h=np.concatenate([rng.uniform(0, 2, m), np.full(n, 3.0)]))
    a, b = lp_solve(lp), lp_solve(lp, rule="bland")
    assert a.status == b.status == "optimal"
    assert abs(a.value - b.value) <= 1e-8 * max(1.0, abs(a.value))


def test_lp_dump_format():
    lp = LinearProgram(c=np.array([1.0, -2.0]), G=np.array([[1.0, 1.0]]), h=np.array([4.0]),
                       E=np.array([[1.0, 0.0]]), f=np.array([1.0]), names=["a", "b"])
    text = lp_dump(lp).splitlines()
    assert text[0] == "min +1*a -2*b"
    assert "+1*a +1*b <= 4" in text and "+1*a = 1" in text


def scalar_problem(constant, left, order, min_lag=0):
    space = VariableSpace()
    var, x = space.add("x", 1, 1, order, min_lag)
    return MatchingProblem(space, objective=AffineFir.constant(constant) + x.lmul(left))


def test_mm_examples():
    sol = mm_solve(scalar_problem(scalar(0), scalar(1), 0))
    assert sol.ok and sol.value == 0 and sol.blocks["x"].is_zero()
    # ||1 - q||
    sol = mm_solve(scalar_problem(scalar(1), scalar(-1), 0))
    assert abs(sol.value) < 1e-12 and abs(sol.blocks["x"].lag(0)[0, 0] - 1) < 1e-12
    # ||0.5 lambda + lambda z||
    sol = mm_solve(scalar_problem(scalar(0, 0.5), scalar(0, 1), 0))
    assert abs(sol.value) < 1e-12 and abs(sol.blocks["x"].lag(0)[0, 0] + 0.5) < 1e-12


def test_mm_degenerate_zero_rows():
    space = VariableSpace()
    _, x = space.add("x", 2, 1, 1)
    expr = AffineFir.vstack([x.truncate(1) * 0.0, AffineFir.constant(scalar(2, -1), space.size)])
    sol = mm_solve(MatchingProblem(space, objective=expr))
    assert sol.ok and abs(sol.value - 3) < 1e-12


def test_mm_horizon_error():
    p = scalar_problem(scalar(1, 1, 1), scalar(1), 2)
    p.horizon = 1
    with pytest.raises(HorizonError):
        mm_build(p)


@st.composite
def matching_instance(draw):
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    T1 = FirOperator(rng.uniform(-1, 1, (3, 2, 2)))
    T2 = FirOperator(rng.uniform(-1, 1, (2, 2, 2)))
    T3 = FirOperator(rng.uniform(-1, 1, (2, 2, 2)))
    return T1, T2, T3


@settings(max_examples=100, deadline=None)
@given(matching_instance())
def test_norm_encoding_exact(inst):
    T1, T2, T3 = inst
    sol = mm_solve(MatchingProblem.model_matching(T1, [(("R", 2, 2, 1, 0), T2, T3)]))
    assert sol.ok
    assert abs(sol.lp_value - sol.value) <= 1e-7


@settings(max_examples=30, deadline=None)
@given(matching_instance())
def test_monotone_in_order(inst):
    T1, T2, T3 = inst
    vals = [mm_solve(MatchingProblem.model_matching(T1, [(("R", 2, 2, N, 0), T2, T3)])).value for N in (0, 1, 2)]
    assert vals[1] <= vals[0] + 1e-9 and vals[2] <= vals[1] + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_mask_soundness(seed):
    rng = np.random.default_rng(seed)
    dims = NodeDims((1, 1), (1, 1), (1, 1), (1, 1), (1, 1))
    m = StructureMask(np.array([[0, np.inf], [1, 0]]), dims)
    T1 = FirOperator(rng.uniform(-1, 1, (3, 2, 2)))
    T2 = FirOperator(rng.uniform(-1, 1, (2, 2, 2)))
    sol = mm_solve(MatchingProblem.model_matching(T1, [(("R", 2, 2, 2, m.entry_lags("x", "x")), T2,
                                                        FirOperator.identity(2))]))
    assert sol.ok and mask_check_membership(sol.blocks["R"], m)
