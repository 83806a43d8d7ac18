import numpy as np
import pytest
from hypothesis import given, strategies as st

from tflow import _core
from tflow.algebra import G_MINUS, G_PLUS, ModelParams, propagator_infinity
from tflow.blocks import SOp, add_shift, nnz, orbital_shift, pattern, product

shifts = st.sampled_from([(0, 0), (1, 1), (1, -1), (-1, 1), (-1, -1)])


def test_pattern_sizes():
    assert nnz((0, 0)) == 36
    for k in range(4):
        assert nnz(orbital_shift(k)) == 24


def test_superfermions_respect_their_shift():
    for k in range(4):
        rows, cols = pattern(orbital_shift(k))
        mask = np.zeros((16, 16), bool)
        mask[rows, cols] = True
        assert np.all(G_PLUS[k][~mask] == 0)
        rows, cols = pattern(orbital_shift(k))
        assert np.all(G_MINUS[k][~mask] == 0)


def test_semigroup_is_charge_and_spin_conserving():
    P = propagator_infinity(ModelParams.symmetric(0.4, 2.0, bias=1.0), 0.7)
    rows, cols = pattern((0, 0))
    mask = np.zeros((16, 16), bool)
    mask[rows, cols] = True
    assert np.all(P[~mask] == 0)


def _random(rng, batch, shift):
    return SOp(rng.normal(size=batch + (nnz(shift),)) + 1j * rng.normal(size=batch + (nnz(shift),)), shift)


@given(shifts, shifts, st.integers(0, 2**31))
def test_packed_product_matches_dense(sa, sb, seed):
    rng = np.random.default_rng(seed)
    A = _random(rng, (3, 2), sa)
    B = _random(rng, (2,), sb)
    C = A @ B
    assert C.shift == add_shift(sa, sb)
    assert np.allclose(C.dense(), A.dense() @ B.dense())


@given(shifts, shifts, st.integers(0, 2**31))
def test_compiled_and_numpy_products_agree(sa, sb, seed):
    if not _core.HAVE_COMPILED:
        pytest.skip("compiled kernel not built")
    rng = np.random.default_rng(seed)
    X = _random(rng, (4, 1, 3), sa).data
    Y = _random(rng, (1, 5, 3), sb).data
    fast = product(X, sa, Y, sb)
    try:
        _core.HAVE_COMPILED = False
        slow = product(X, sa, Y, sb)
    finally:
        _core.HAVE_COMPILED = True
    assert np.allclose(fast, slow, rtol=1e-14, atol=1e-13)


def test_broadcast_views_accepted():
    rng = np.random.default_rng(0)
    A = _random(rng, (5,), (0, 0))
    B = SOp(np.broadcast_to(_random(rng, (), (0, 0)).data, (5, 36)), (0, 0))
    assert np.allclose((A @ B).dense(), A.dense() @ B.dense())


def test_arithmetic_and_shift_checks():
    rng = np.random.default_rng(1)
    A = _random(rng, (2,), (1, 1))
    B = _random(rng, (2,), (1, 1))
    assert np.allclose((A - B + B).data, A.data)
    assert np.allclose((2.0 * A).dense(), 2 * A.dense())
    assert np.allclose((A * np.array([1.0, 0.0])).data[1], 0)
    with pytest.raises(ValueError):
        A + _random(rng, (2,), (0, 0))
    assert np.allclose(SOp.from_dense(A.dense(), A.shift).data, A.data)
