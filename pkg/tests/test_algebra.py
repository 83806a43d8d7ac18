import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tflow.algebra import (BAR, DOWN, G_MINUS, G_PLUS, IDENTITY, ORBITALS, TRACE, UP, ModelParams,
                           Reservoir, SpinOrbital, apply_superop, check_density, density_matrix,
                           devectorize, dot_operators, hamiltonian, hermiticity_error, liouvillian,
                           liouvillian_superfermion, number_operators, propagator_infinity,
                           renormalized_generators, superfermion, trace_functional, vectorize)
from tflow.observables import current_infinity, local_observables

from conftest import random_density

UP_P = SpinOrbital(1, UP)
UP_M = SpinOrbital(-1, UP)
DN_P = SpinOrbital(1, DOWN)

energies = st.floats(-5, 5, allow_nan=False)


def anti(A, B):
    return A @ B + B @ A


# ------------------------------------------------------------------ dot operators

def test_dot_operators_anticommute_canonically():
    ops, _ = dot_operators()
    assert np.allclose(anti(ops[(1, UP)], ops[(-1, UP)]), np.eye(4))
    for (a, b) in itertools.product(ops, repeat=2):
        expected = np.eye(4) if (a[1] == b[1] and a[0] == -b[0]) else np.zeros((4, 4))
        assert np.allclose(anti(ops[a], ops[b]), expected)


def test_parity_eigenvalues():
    _, parity = dot_operators()
    up = np.array([0, 1, 0, 0.0])
    dbl = np.array([0, 0, 0, 1.0])
    assert np.allclose(parity @ up, -up)
    assert np.allclose(parity @ dbl, dbl)


def test_pauli_principle():
    ops, _ = dot_operators()
    assert np.allclose(ops[(1, UP)] @ ops[(1, UP)], 0)


# ------------------------------------------------------------------ superfermions

def test_superfermion_conjugate_pair_example():
    assert np.allclose(anti(superfermion(1, UP_P), superfermion(-1, UP_M)), IDENTITY)
    assert np.allclose(superfermion(1, UP_P) @ superfermion(1, UP_P), 0)
    assert np.allclose(anti(superfermion(1, UP_P), superfermion(1, DN_P)), 0)


def test_all_superfermion_anticommutators():
    gens = {(p, k): (G_PLUS if p == 1 else G_MINUS)[k] for p in (1, -1) for k in range(4)}
    count = 0
    for (p1, k1), (p2, k2) in itertools.product(gens, repeat=2):
        expected = IDENTITY if (p1 == -p2 and k2 == BAR[k1]) else 0 * IDENTITY
        assert np.max(np.abs(anti(gens[p1, k1], gens[p2, k2]) - expected)) <= 1e-14
        count += 1
    assert count == 64


def test_super_pauli_principle():
    for G in list(G_PLUS) + list(G_MINUS):
        assert np.max(np.abs(G @ G)) <= 1e-14


def test_trace_annihilates_creation_superfermions_on_every_basis_operator():
    for k in range(4):
        for i in range(16):
            X = devectorize(IDENTITY[:, i])
            assert abs(trace_functional(apply_superop(G_PLUS[k], X))) <= 1e-14


def test_bad_sign_rejected():
    with pytest.raises(ValueError):
        superfermion(0, UP_P)
    with pytest.raises(ValueError):
        SpinOrbital(2, UP)


# ------------------------------------------------------------------ Liouvillian

def test_liouvillian_vanishes_without_hamiltonian():
    assert np.allclose(liouvillian(ModelParams.symmetric(0.0, 0.0)), 0)


@given(energies, energies)
def test_liouvillian_spectrum_is_energy_differences(eps, U):
    params = ModelParams.symmetric(eps, U)
    h = np.array([0, eps, eps, 2 * eps + U])
    expected = np.sort_complex((h[:, None] - h[None, :]).ravel().astype(complex))
    got = np.sort_complex(np.linalg.eigvals(liouvillian(params)))
    assert np.allclose(np.sort(got.real), np.sort(expected.real), atol=1e-10)
    assert np.allclose(got.imag, 0, atol=1e-10)


@given(energies, energies)
def test_superfermion_liouvillian_matches_commutator(eps, U):
    params = ModelParams.symmetric(eps, U)
    assert np.max(np.abs(liouvillian_superfermion(params) - liouvillian(params))) <= 1e-12


def test_liouvillian_kills_diagonal_states(rng):
    params = ModelParams.symmetric(-1.3, 2.2)
    rho = np.diag(rng.random(4)).astype(complex)
    rho /= np.trace(rho)
    assert np.allclose(apply_superop(liouvillian(params), rho), 0)


# ------------------------------------------------------------------ renormalized generators

def test_time_local_current_of_empty_dot():
    params = ModelParams.symmetric(0.3, 1.0, gamma=0.7, bias=1.0)
    assert current_infinity(params, 0) @ vectorize(density_matrix("empty")) == pytest.approx(0.7 * 2 * 0.5)


def test_time_local_current_vanishes_at_half_filling():
    params = ModelParams.symmetric(0.3, 1.0, gamma=0.7)
    rho = np.diag([0.25, 0.25, 0.25, 0.25]).astype(complex)
    assert abs(current_infinity(params, 0) @ vectorize(rho)) < 1e-15
    assert abs(current_infinity(params, 1) @ vectorize(density_matrix("mixed"))) < 1e-15


def test_sigma_inf_is_traceless_on_basis():
    params = ModelParams(0.4, 2.0, (Reservoir(1.0, 0.5, 0.3), Reservoir(0.2, 0.8, -0.1)))
    gens = renormalized_generators(params)
    assert np.max(np.abs(TRACE @ gens.sigma_inf)) <= 1e-14
    assert np.max(np.abs(TRACE @ gens.l_inf)) <= 1e-14


# ------------------------------------------------------------------ semigroup

def test_propagator_infinity_starts_at_identity():
    assert np.allclose(propagator_infinity(ModelParams.symmetric(1.0, 2.0), 0.0), IDENTITY)


@pytest.mark.parametrize("start", ["empty", "up", "double", "mixed"])
def test_occupation_relaxes_to_half(start):
    gamma = 0.8
    params = ModelParams.symmetric(-1.0, 3.0, gamma=gamma, bias=0.6)
    t = np.linspace(0, 3, 7)
    rho0 = density_matrix(start)
    n0 = local_observables(rho0)
    rho_t = devectorize(propagator_infinity(params, t) @ vectorize(rho0))
    n_up, n_dn, _, _ = local_observables(rho_t)
    assert np.allclose(n_up, 0.5 + np.exp(-2 * gamma * t) * (n0[0] - 0.5), atol=1e-12)
    assert np.allclose(n_dn, 0.5 + np.exp(-2 * gamma * t) * (n0[1] - 0.5), atol=1e-12)


@given(st.floats(0, 3), st.floats(0, 3))
def test_semigroup_property(t1, t2):
    params = ModelParams.symmetric(0.7, 2.5, gamma=0.5, bias=1.0)
    P1, P2, P12 = propagator_infinity(params, [t1, t2, t1 + t2])
    assert np.max(np.abs(P1 @ P2 - P12)) <= 1e-12


@given(st.floats(0, 5), st.integers(0, 2**31))
def test_semigroup_is_trace_and_hermiticity_preserving(t, seed):
    params = ModelParams.symmetric(-0.5, 4.0, gamma=1.0, bias=1.0)
    P = propagator_infinity(params, t)
    rho = random_density(np.random.default_rng(seed))
    out = apply_superop(P, rho)
    assert abs(np.trace(out) - 1) < 1e-12
    assert np.allclose(out, out.conj().T, atol=1e-12)
    assert hermiticity_error(P) < 1e-12


# ------------------------------------------------------------------ states

def test_apply_identity_and_trace(rng):
    rho = random_density(rng)
    assert np.allclose(apply_superop(IDENTITY, rho), rho)
    assert trace_functional(rho) == pytest.approx(1.0)


@given(st.integers(0, 2**31))
def test_vectorize_round_trip(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    assert np.array_equal(devectorize(vectorize(X)), X)
    assert vectorize(X)[1 + 4 * 2] == X[1, 2]


def test_density_presets_and_checks():
    assert density_matrix("empty")[0, 0] == 1
    assert np.trace(density_matrix("mixed")) == pytest.approx(1)
    with pytest.raises(ValueError):
        density_matrix("half")
    with pytest.raises(ValueError):
        check_density(np.diag([2.0, -1.0, 0.0, 0.0]))


def test_hamiltonian_levels():
    H = hamiltonian(ModelParams.symmetric(-1.0, 3.0))
    n_up, n_dn = number_operators()
    assert np.allclose(np.diag(H), [0, -1, -1, 1])
    assert np.allclose(n_up + n_dn, np.diag([0, 1, 1, 2]))


def test_model_validation():
    with pytest.raises(ValueError):
        ModelParams(0.0, 0.0, ())
    with pytest.raises(ValueError):
        ModelParams(0.0, 0.0, (Reservoir(-1.0, 1.0),))
    assert ModelParams.symmetric(1.0, 2.0, bias=3.0).energy_scale() == 2.0
    assert ORBITALS[BAR[0]] == ORBITALS[0].bar()
