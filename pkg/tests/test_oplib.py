import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from yoss.oplib import (FirOperator, OperatorError, Signal, block_assemble, block_flatten, norm_linf_induced,
                        op_add, op_apply, op_delay, op_inverse_truncated, op_mul, op_neumann_inverse, split)

from conftest import scalar

CASES = settings(max_examples=100, deadline=None)


@st.composite
def fir(draw, rows=None, cols=None, max_order=8):
    r = rows or draw(st.integers(1, 3))
    c = cols or draw(st.integers(1, 3))
    N = draw(st.integers(0, max_order))
    seed = draw(st.integers(0, 2**32 - 1))
    return FirOperator(np.random.default_rng(seed).uniform(-1, 1, (N + 1, r, c)))


@st.composite
def fir_triple(draw):
    a, b, c, d = (draw(st.integers(1, 3)) for _ in range(4))
    return draw(fir(a, b)), draw(fir(b, c)), draw(fir(c, d))


def test_add_examples():
    assert op_add(scalar(1), scalar(0)).equals(scalar(1))
    assert op_add(scalar(1, 2), scalar(3)).equals(scalar(4, 2))
    a = scalar(0.3, -1, 2)
    assert op_add(a, -1 * a).is_zero()
    with pytest.raises(OperatorError):
        op_add(scalar(1), FirOperator.zeros(2, 1))


def test_mul_examples():
    b = FirOperator.from_list([[[1, 2], [3, 4]], [[0, 1], [1, 0]]])
    assert op_mul(FirOperator.identity(2), b).equals(b)
    assert op_mul(scalar(1, 2), scalar(3, 4)).equals(scalar(3, 10, 8))
    assert op_mul(op_delay(FirOperator.identity(2), 1), b).equals(op_delay(b, 1))
    with pytest.raises(OperatorError):
        op_mul(FirOperator.zeros(1, 2), FirOperator.zeros(3, 1))


def test_delay_examples():
    assert op_delay(scalar(1), 0).equals(scalar(1))
    assert op_delay(scalar(1), 2).equals(scalar(0, 0, 1))


def test_inverse_examples():
    assert op_inverse_truncated(FirOperator.identity(3), 5).equals(FirOperator.identity(3))
    assert op_inverse_truncated(scalar(1, 0.5), 3).equals(scalar(1, -0.5, 0.25, -0.125), 1e-15)
    t = FirOperator.from_list([[[1, 0], [0.7, 1]], [[0.2, 0.1], [0, 0.3]]])
    s = op_inverse_truncated(t, 6)
    assert op_mul(t, s).truncate(6).equals(FirOperator.identity(2), 1e-12)
    with pytest.raises(OperatorError):
        op_inverse_truncated(FirOperator.from_list([[[1, 1], [1, 1]]]), 3)


def test_neumann_examples():
    inv, tail = op_neumann_inverse(FirOperator.zeros(2, 2), 5)
    assert inv.equals(FirOperator.identity(2)) and tail == 0.0
    inv, tail = op_neumann_inverse(scalar(0, 0.5), 10)
    assert np.allclose(inv.coeffs[:, 0, 0], 0.5 ** np.arange(11))
    with pytest.raises(OperatorError):
        op_neumann_inverse(scalar(1.2), 5)


def test_norm_examples():
    assert norm_linf_induced(FirOperator.zeros(2, 3)) == 0.0
    assert norm_linf_induced(FirOperator.from_list([[[1, -2]], [[0.5, 0]]])) == 3.5


def test_apply_examples():
    u = Signal(np.array([[1.0], [2.0], [3.0]]))
    assert np.array_equal(op_apply(FirOperator.identity(1), u).samples, u.samples)
    assert np.array_equal(op_apply(op_delay(FirOperator.identity(1)), u).samples.ravel(), [0, 1, 2])


@CASES
@given(fir(1, 1))
def test_worst_case_sign_input_attains_norm(t):
    N = t.order
    T = N + 3
    taps = np.concatenate([t.coeffs[:, 0, 0], np.zeros(T + 1 - len(t))])
    u = np.sign(taps[T - np.arange(T + 1)])
    y = op_apply(t, Signal(u[:, None])).samples
    assert abs(y[T, 0] - t.norm()) <= 1e-12


def test_block_examples():
    t = FirOperator.from_list([[[1, 2], [3, 4]], [[5, 6], [7, 8]]])
    b = block_assemble([[t]])
    assert block_flatten(b).equals(t)
    z = block_assemble([[FirOperator.zeros(1, 2), FirOperator.zeros(1, 1)],
                        [FirOperator.zeros(2, 2), FirOperator.zeros(2, 1)]])
    assert block_flatten(z).is_zero() and block_flatten(z).shape == (3, 3)
    q = [[op_delay(scalar(1, 1)), op_delay(scalar(2))], [scalar(3, 1), op_delay(scalar(4))]]
    lag0 = block_flatten(block_assemble(q)).lag(0)
    assert lag0[1, 0] == 3 and np.count_nonzero(lag0) == 1
    with pytest.raises(OperatorError):
        block_assemble([[FirOperator.zeros(1, 1), FirOperator.zeros(2, 1)]])


@CASES
@given(fir(3, 3), st.sampled_from([(1, 2), (2, 1), (3,)]), st.sampled_from([(1, 2), (3,), (1, 1, 1)]))
def test_block_round_trip(t, rp, cp):
    b = split(t, rp, cp)
    assert block_flatten(b).equals(t, 0.0)
    assert block_assemble([[b[i, j] for j in range(len(cp))] for i in range(len(rp))]).equals(b)


@CASES
@given(fir_triple())
def test_associativity(abc):
    a, b, c = abc
    assert op_mul(op_mul(a, b), c).equals(op_mul(a, op_mul(b, c)), 1e-12)


@CASES
@given(st.data())
def test_distributivity(data):
    r, k, c = (data.draw(st.integers(1, 3)) for _ in range(3))
    a = data.draw(fir(r, k))
    b1, b2 = data.draw(fir(k, c)), data.draw(fir(k, c))
    d = data.draw(fir(c, r))
    assert op_mul(a, b1 + b2).equals(op_mul(a, b1) + op_mul(a, b2), 1e-12)
    assert op_mul(b1 + b2, d).equals(op_mul(b1, d) + op_mul(b2, d), 1e-12)


@CASES
@given(fir(3, 3, 6), st.integers(0, 12))
def test_truncated_inverse_identity(t, H):
    coeffs = t.coeffs.copy()
    coeffs[0] += 3 * np.eye(3)  # well-conditioned lag 0
    t = FirOperator(coeffs)
    s = op_inverse_truncated(t, H)
    assert op_mul(t, s).truncate(H).equals(FirOperator.identity(3), 1e-9)


@CASES
@given(fir(2, 3), fir(2, 3), st.floats(-5, 5))
def test_norm_axioms(a, b, s):
    assert (a + b).norm() <= a.norm() + b.norm() + 1e-12
    assert abs((s * a).norm() - abs(s) * a.norm()) <= 1e-12 * max(1.0, a.norm())
    assert a.norm() >= 0.0


@CASES
@given(st.data())
def test_submultiplicative(data):
    r, k, c = (data.draw(st.integers(1, 3)) for _ in range(3))
    a, b = data.draw(fir(r, k)), data.draw(fir(k, c))
    assert op_mul(a, b).norm() <= a.norm() * b.norm() + 1e-12


@CASES
@given(fir(), st.integers(1, 15), st.integers(0, 2**31))
def test_apply_matches_dense_matrix(t, T, seed):
    u = np.random.default_rng(seed).normal(size=(T, t.cols))
    big = np.zeros((T * t.rows, T * t.cols))
    for i in range(T):
        for j in range(i + 1):
            if i - j < len(t):
                big[i * t.rows:(i + 1) * t.rows, j * t.cols:(j + 1) * t.cols] = t.coeffs[i - j]
    y = (big @ u.reshape(-1)).reshape(T, t.rows)
    assert np.allclose(op_apply(t, Signal(u)).samples, y, atol=1e-12, rtol=0)


@CASES
@given(fir(2, 2, 4), st.floats(0.0, 0.95))
def test_neumann_norm_bound(e, eps):
    if e.norm() == 0:
        return
    e = (eps / e.norm()) * e
    inv, tail = op_neumann_inverse(e, 40)
    assert inv.norm() <= 1.0 / (1.0 - eps) + 1e-9
