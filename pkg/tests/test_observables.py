import numpy as np
import pytest
from hypothesis import given, strategies as st

from tflow import observables as obs
from tflow import perturbation as pt
from tflow.algebra import (BAR, G_PLUS, IDENTITY, ModelParams, density_matrix, propagator_infinity,
                           renormalized_generators, vectorize)
from tflow.errors import NoUnitEigenvalue
from tflow.kernels import u0_parts
from tflow.timegrid import GridFn1, TimeGrid, solve_dyson

from conftest import random_density


# ------------------------------------------------------------------ local observables

def test_doubly_occupied():
    assert np.allclose(obs.local_observables(density_matrix("double")), (1, 1, 1, 0))


def test_maximally_mixed_by_enumeration():
    # n takes the values 0, 1, 1, 2 with equal weight: <n> = 1, <n^2> = 3/2
    n_up, n_dn, n_corr, fluct = obs.local_observables(density_matrix("mixed"))
    assert (n_up, n_dn, n_corr) == pytest.approx((0.5, 0.5, 0.25))
    assert fluct == pytest.approx(1.5 - 1.0)


@given(st.integers(0, 2**31))
def test_fluctuations_match_enumeration(seed):
    rho = random_density(np.random.default_rng(seed))
    p = np.real(np.diag(rho))
    n = np.array([0, 1, 1, 2])
    n_up, n_dn, n_corr, fluct = obs.local_observables(rho)
    assert fluct == pytest.approx(p @ n ** 2 - (p @ n) ** 2, abs=1e-12)
    assert fluct >= -1e-12


def test_half_filled_stationary_fluctuations():
    params = ModelParams.symmetric(-2.0, 4.0, bias=0.0)
    rho, _ = obs.first_order_stationary(params, 2.0)
    n_up, n_dn, n_corr, fluct = obs.local_observables(rho)
    assert n_up + n_dn == pytest.approx(1.0, abs=1e-10)
    assert fluct == pytest.approx(2 * n_corr, abs=1e-10)


# ------------------------------------------------------------------ currents

@pytest.mark.parametrize("start", ["empty", "up", "double", "mixed"])
def test_current_jumps_to_time_local_value(start):
    params = ModelParams.symmetric(0.3, 2.0, gamma=0.8, bias=1.0)
    grid = TimeGrid.from_tmax(1.0, 41)
    Pi = solve_dyson(pt.next_to_leading(params, 1.0, grid), params, grid).values
    cov = np.stack([pt.current_sigma(params, 1.0, grid, r, 2).values for r in range(2)])
    I = obs.current_series(params, Pi, cov, grid.dt, start)
    n_up, n_dn, _, _ = obs.local_observables(density_matrix(start))
    expected = 0.8 * ((0.5 - n_up) + (0.5 - n_dn))
    assert I[0, 0] == pytest.approx(expected, abs=1e-14)
    assert I[1, 0] == pytest.approx(expected, abs=1e-14)


def test_no_current_in_equilibrium():
    params = ModelParams.symmetric(0.7, 3.0, bias=0.0)
    _, currents = obs.first_order_stationary(params, 1.0)
    assert np.max(np.abs(currents)) < 1e-6


def test_stationary_state_of_the_semigroup():
    params = ModelParams.symmetric(0.7, 3.0, bias=1.0)
    rho = obs.stationary_state(renormalized_generators(params).l_inf, np.zeros((16, 16)))
    late = propagator_infinity(params, 40.0) @ vectorize(density_matrix("up"))
    assert np.allclose(vectorize(rho), late, atol=1e-12)


# ------------------------------------------------------------------ plateaus

def test_plateau_of_constant_series():
    val, reached = obs.stationary_extract(np.full(50, 0.3), np.linspace(0, 10, 50))
    assert val == pytest.approx(0.3) and reached


def test_plateau_of_relaxing_series():
    t = np.linspace(0, 10, 401)
    val, reached = obs.stationary_extract(0.7 * (1 - np.exp(-t)), t, tol=1e-3)
    assert val == pytest.approx(0.7, abs=1e-3)
    assert reached


def test_ramp_is_not_stationary():
    t = np.linspace(0, 10, 101)
    val, reached = obs.stationary_extract(t, t)
    assert val == pytest.approx(np.mean(t[80:]))
    assert not reached


# ------------------------------------------------------------------ complete positivity

def test_identity_channel():
    d = obs.cp_trace_hermiticity(IDENTITY)
    assert d["choi_min"] == pytest.approx(0.0, abs=1e-15)
    assert d["trace_err"] == 0 and d["herm_err"] == 0
    C = obs.choi_matrix(IDENTITY)
    assert np.allclose(np.sort(np.linalg.eigvalsh(C))[-1], 4.0)


@given(st.floats(0, 20))
def test_semigroup_is_completely_positive(t):
    P = propagator_infinity(ModelParams.symmetric(-1.0, 3.0, bias=2.0), t)
    assert obs.cp_trace_hermiticity(P)["choi_min"] >= -1e-10


def test_choi_matrix_of_a_transposition_is_not_positive():
    T = np.zeros((16, 16))
    for i in range(4):
        for j in range(4):
            T[j + 4 * i, i + 4 * j] = 1     # X -> X^T
    assert obs.cp_trace_hermiticity(T)["choi_min"] == pytest.approx(-1.0)


def _mutated_propagator(flip_orbital=None, flip_crossing=False, factor=-1.0):
    params = ModelParams.symmetric(0.5, 0.0, bias=1.0)
    grid = TimeGrid.from_tmax(6.0, 121)
    ctx = pt.context(params, grid)
    temps = np.array([0.5, 0.5])
    s1, nested, crossing = u0_parts(ctx, temps)
    minus_i = s1 + nested + (-crossing if flip_crossing else crossing)
    if flip_orbital is not None:
        gam = ctx.gamma(temps, grid.t)
        k = flip_orbital
        term = -gam[k][:, None, None] * G_PLUS[k] @ ctx.pi_inf_dense @ G_PLUS[BAR[k]]
        term[0] = 0
        minus_i = minus_i + (factor - 1) * term
    return solve_dyson(GridFn1(grid, 1j * minus_i), params, grid).values


def test_unmutated_kernel_is_physical():
    d = obs.cp_trace_hermiticity(_mutated_propagator())
    assert d["choi_min"] >= -1e-8 and d["herm_err"] < 1e-8 and d["trace_err"] < 1e-8


@pytest.mark.parametrize("k", range(4))
def test_orbital_sign_error_breaks_hermiticity(k):
    # the Choi matrix stops being hermitian; its hermitian part stays positive
    d = obs.cp_trace_hermiticity(_mutated_propagator(flip_orbital=k))
    assert d["herm_err"] > 1e-3


@pytest.mark.parametrize("k", range(4))
def test_orbital_phase_error_breaks_complete_positivity(k):
    # a stray factor of +-i on one orbital: one of the two signs leaves the positive cone
    worst = min(obs.cp_trace_hermiticity(_mutated_propagator(flip_orbital=k, factor=f))["choi_min"]
                for f in (1j, -1j))
    assert worst < -1e-3


def test_crossing_sign_error_keeps_positivity():
    # too small to leave the positive cone at U = 0; the U = 0 oracle catches it instead
    assert obs.cp_trace_hermiticity(_mutated_propagator(flip_crossing=True))["choi_min"] >= -1e-8


# ------------------------------------------------------------------ fixed points

def test_fixed_point_of_the_semigroup_is_its_stationary_state():
    params = ModelParams.symmetric(0.7, 3.0, bias=1.0)
    rho_stat = obs.stationary_state(renormalized_generators(params).l_inf, np.zeros((16, 16)))
    rep = obs.fixed_point_state(propagator_infinity(params, 1.0), 1.0)
    assert np.allclose(rep.rho1, rho_stat, atol=1e-10)
    assert rep.return_error < 1e-12
    assert rep.eigenvalue == pytest.approx(1.0)


def test_missing_unit_eigenvalue():
    with pytest.raises(NoUnitEigenvalue):
        obs.fixed_point_state(0.5 * IDENTITY)


# ------------------------------------------------------------------ analytic references

def test_high_temperature_fluctuation_reference():
    params = ModelParams.symmetric(-4.0, 8.0, bias=1.0)
    assert obs.analytic_references(params, 100.0, "high_T_fluct") == pytest.approx(0.49)


def test_high_temperature_current_reference():
    params = ModelParams.symmetric(-2.0, 4.0, bias=1.0)
    assert obs.analytic_references(params, 100.0, "high_T_current") == pytest.approx(1 / 400)


def test_short_time_occupation_reference():
    params = ModelParams.symmetric(-2.0, 4.0, bias=1.0)
    coef = obs.analytic_references(params, 1.0, "short_time_occ", rho0="empty")
    assert np.allclose(coef, 4.0 / (2 * np.pi))


def test_short_time_current_reference():
    params = ModelParams.symmetric(-2.0, 4.0, bias=1.0)
    I0, slope = obs.analytic_references(params, 1.0, "short_time_current", rho0="up", r=0)
    assert I0 == 0
    assert slope == pytest.approx(1.0 / np.pi)


def test_low_temperature_fit_recovers_parabola():
    T = np.linspace(0.05, 0.3, 8)
    fit = obs.analytic_references(ModelParams.symmetric(-4.0, 8.0), None, "low_T_fluct_fit",
                                  T_values=T, values=0.4 * (1 - 2.0 * T ** 2))
    assert fit["f0"] == pytest.approx(0.4) and fit["c"] == pytest.approx(2.0) and fit["r2"] == pytest.approx(1.0)


def test_unknown_regime():
    with pytest.raises(ValueError):
        obs.analytic_references(ModelParams.symmetric(0, 0), 1.0, "nonsense")
