import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from yoss.oplib import FirOperator, Signal, op_apply, op_delay, op_inverse_truncated, op_mul
from yoss.plant import GeneralizedPlant, Subsystem, plant_from_subsystems, plant_simulate, plant_validate, \
    spectral_radius
from yoss.structure import Link, NodeDims, StructureMask, mask_check_membership

from test_structure import nested_plant_3


def test_single_subsystem():
    p = plant_from_subsystems([Subsystem(A=[[0.3, 1], [0, 0.2]], B2=[[1], [0]], C2=[[1, 0]])], [])
    assert len(p.A) == 1 and np.array_equal(p.A.lag(0), [[0.3, 1], [0, 0.2]])


def test_nested_aggregation(nested_plant):
    A = np.array([[0.5, 0], [0.3, 1.2]])
    assert np.allclose(p_lag(nested_plant.A, 0), np.block([[A, np.zeros((2, 2))], [np.zeros((2, 2)), A]]))
    assert np.allclose(p_lag(nested_plant.A, 1)[2:, :2], [[0.2, 0.1], [0.02, 0.01]])
    assert np.count_nonzero(p_lag(nested_plant.A, 1)) == 4
    assert mask_check_membership(nested_plant.A, nested_plant.mask)


def test_three_node_chain():
    p = nested_plant_3()
    assert np.array_equal(p.A.lag(1), [[0, 0, 0], [1, 0, 0], [0, 1, 0]])


def p_lag(t, k):
    return t.lag(k)


def test_simulate_examples():
    p = plant_from_subsystems([Subsystem(A=[[0.5]], B1=[[1]])], [])
    x, y, z = plant_simulate(p, w=Signal.impulse(1, 6), T=6)
    assert np.allclose(x.samples[:, 0], [0, 1, 0.5, 0.25, 0.125, 0.0625])
    zero = plant_from_subsystems([Subsystem(A=[[0.0]], B1=[[0]], B2=[[0]], C2=[[0]], C1=[[0]])], [])
    for s in plant_simulate(zero, T=4):
        assert not s.samples.any()


def test_nested_plant_unstable(nested_plant):
    assert abs(spectral_radius(nested_plant) - 1.2) < 1e-12
    x, _, _ = plant_simulate(nested_plant, x0=[0, 0, 0, 1], T=40)
    growth = np.abs(x.samples[39]).max() / np.abs(x.samples[38]).max()
    assert abs(growth - 1.2) < 1e-9


def test_validate(nested_plant):
    assert plant_validate(nested_plant).ok
    p0 = GeneralizedPlant(**{**nested_plant.operators(), "D21": FirOperator.zeros(2, 2)},
                          dims=nested_plant.dims, mask=nested_plant.mask)
    rep = plant_validate(p0)
    assert not rep.ok and not rep.assumptions.d21_full_row_rank
    bad = GeneralizedPlant(**{**nested_plant.operators(), "B2": FirOperator.zeros(3, 2)},
                           dims=nested_plant.dims, mask=nested_plant.mask)
    assert plant_validate(bad).dimension_errors


def test_bad_links():
    with pytest.raises(ValueError):
        plant_from_subsystems([Subsystem(A=[[1.0]])], [Link(0, 3, 1)])


@st.composite
def stable_plant(draw):
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    n, m, q, r, p = (int(v) for v in rng.integers(1, 4, 5))
    A = rng.uniform(-1, 1, (2, n, n))
    A *= 0.4 / max(1e-9, np.abs(A).sum(axis=(0, 2)).max())
    ops = dict(A=FirOperator(A), B1=FirOperator(rng.normal(size=(1, n, q))),
               B2=FirOperator(rng.normal(size=(2, n, m))), C1=FirOperator(rng.normal(size=(1, r, n))),
               C2=FirOperator(rng.normal(size=(1, p, n))), D11=FirOperator(rng.normal(size=(1, r, q))),
               D12=FirOperator(rng.normal(size=(1, r, m))), D21=FirOperator(rng.normal(size=(1, p, q))))
    dims = NodeDims((n,), (p,), (m,), (q,), (r,))
    return GeneralizedPlant(**ops, dims=dims, mask=StructureMask(np.zeros((1, 1)), dims)), seed


@settings(max_examples=100, deadline=None)
@given(stable_plant())
def test_simulate_matches_operator_form(case):
    p, seed = case
    rng = np.random.default_rng(seed + 1)
    T = 30
    u, w = rng.normal(size=(T, p.m)), rng.normal(size=(T, p.q))
    x, y, z = plant_simulate(p, u=u, w=w, T=T)
    # x = (I - Lambda A)^{-1} (Lambda B1 w + Lambda B2 u)
    inv = op_inverse_truncated(FirOperator.identity(p.n) - op_delay(p.A), T)
    xo = op_apply(op_mul(inv, op_delay(p.B1)), w).samples + op_apply(op_mul(inv, op_delay(p.B2)), u).samples
    assert np.allclose(x.samples, xo, atol=1e-10, rtol=0)
    zo = op_apply(p.C1, xo).samples + op_apply(p.D11, w).samples + op_apply(p.D12, u).samples
    assert np.allclose(z.samples, zo, atol=1e-10, rtol=0)


def test_nested_plant_growth_rate_from_node_one(nested_plant):
    x, _, _ = plant_simulate(nested_plant, x0=[0, 1, 0, 0], T=301)
    rate = (np.linalg.norm(x.samples[300]) / np.linalg.norm(x.samples[100])) ** (1 / 200)
    assert abs(rate - 1.2) < 0.01
