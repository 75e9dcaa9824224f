import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from yoss.oplib import FirOperator, op_delay, op_mul
from yoss.structure import (Link, NodeDims, StructureMask, mask_check_assumptions, mask_check_membership,
                            mask_from_network, random_member)

INF = math.inf


def test_no_links_is_diagonal():
    d = mask_from_network([], 3).d
    assert np.array_equal(d, [[0, INF, INF], [INF, 0, INF], [INF, INF, 0]])


def test_nested_chain():
    d = mask_from_network([Link(0, 1, 1), Link(1, 2, 1)], 3).d
    assert np.array_equal(d, [[0, INF, INF], [1, 0, INF], [2, 1, 0]])


def test_redundant_path_never_increases():
    base = mask_from_network([Link(0, 1, 1), Link(1, 2, 1)], 3).d
    more = mask_from_network([Link(0, 1, 1), Link(1, 2, 1), Link(0, 2, 5)], 3).d
    assert np.all(more <= base)


def test_membership_examples():
    m = StructureMask(np.array([[0, INF], [1, 0]]), NodeDims((1, 1), (1, 1), (1, 1), (1, 1), (1, 1)))
    assert mask_check_membership(FirOperator.zeros(2, 2, 3), m)
    assert mask_check_membership(FirOperator.identity(2), m)
    bad = FirOperator.from_list([[[1, 0.5], [0, 1]]])
    res = mask_check_membership(bad, m)
    assert not res and res.violations[0].block == (0, 1)
    lag0 = FirOperator.from_list([[[1, 0], [2, 1]]])
    assert not mask_check_membership(lag0, m)
    assert mask_check_membership(op_delay(lag0), m)


def test_closure_report(nested_plant):
    assert mask_check_assumptions(mask_from_network([Link(0, 1, 1), Link(1, 2, 1)], 3).with_dims(
        NodeDims((1,) * 3, (1,) * 3, (1,) * 3, (1,) * 3, (1,) * 3)), nested_plant_3()).closure_ok
    d = np.array([[0, INF, INF], [1, 0, INF], [5, 1, 0]])
    assert StructureMask(d).triangle_violations()
    rep = mask_check_assumptions(nested_plant.mask, nested_plant)
    assert rep.ok and rep.d21_full_row_rank


def nested_plant_3():
    from yoss.plant import Subsystem, plant_from_subsystems
    subs = [Subsystem(A=[[0.5]], B2=[[1]], C2=[[1]], D21=[[1]], C3={1: [[1]]}),
            Subsystem(A=[[0.5]], B2=[[1]], C2=[[1]], D21=[[1]], B3={0: [[1]]}, C3={2: [[1]]}),
            Subsystem(A=[[0.5]], B2=[[1]], C2=[[1]], D21=[[1]], B3={1: [[1]]})]
    return plant_from_subsystems(subs, [Link(0, 1, 1), Link(1, 2, 1)])


@st.composite
def closed_mask(draw):
    nodes = draw(st.integers(1, 4))
    links = [Link(draw(st.integers(0, nodes - 1)), draw(st.integers(0, nodes - 1)), draw(st.integers(0, 3)))
             for _ in range(draw(st.integers(0, 6)))]
    sizes = tuple(draw(st.integers(1, 2)) for _ in range(nodes))
    return mask_from_network(links, nodes, NodeDims(sizes, sizes, sizes, sizes, sizes))


@settings(max_examples=50, deadline=None)
@given(closed_mask(), st.integers(0, 2**31))
def test_closure_of_members(m, seed):
    assert np.all(np.diag(m.d) == 0) and m.is_closed()
    rng = np.random.default_rng(seed)
    a = random_member(rng, m, "x", "x", 3)
    b = random_member(rng, m, "x", "x", 3)
    for t in (a + b, op_mul(a, b), op_delay(a)):
        assert mask_check_membership(t, m)


def test_dimension_mismatch_raises():
    m = StructureMask(np.zeros((1, 1)), NodeDims((2,), (1,), (1,), (1,), (1,)))
    with pytest.raises(ValueError):
        mask_check_membership(FirOperator.zeros(3, 3), m)
