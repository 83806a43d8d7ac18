"""Observables, stationary values and validation diagnostics.

Currents follow ``I_r(t) = I_{r,inf}(rho(t)) + int_0^t <Tr|(-i Sigma_{I_r})(t - s)|rho(s)> ds``
where the time-local part ``I_{r,inf}(rho) = sum_sigma Gamma_{r sigma} (1/2 - <n_sigma>)``
is the instantaneous rise at ``t = 0+``.

The Choi matrix of a superoperator ``S`` (column-stacked vectorization,
``vec(X)[i + 4 j] = X[i, j]``) is ``C[(i, a), (j, b)] = S(|i><j|)[a, b]``.
For a single qubit the identity channel gives ``C = sum_ij |i><j| (x) |i><j|``,
a rank-one projector onto ``|00> + |11>`` times 2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.integrate
import scipy.linalg

from .algebra import (BAR, DIM, DOWN, ETA, G_MINUS, G_PLUS, ORBITALS, TRACE, UP, ModelParams,
                      density_matrix, devectorize, hermiticity_error, number_operators,
                      renormalized_generators, vectorize)
from .errors import NoUnitEigenvalue

_N_UP, _N_DOWN = number_operators()


@dataclass(frozen=True)
class ObservableRecord:
    T: float
    t: float
    n_up: float
    n_down: float
    n_corr: float
    fluct: float
    I_L: float
    I_R: float
    choi_min: float
    trace_err: float


@dataclass(frozen=True)
class ReentranceReport:
    t_r: float
    rho1: np.ndarray
    eigenvalue: complex
    return_error: float


# ------------------------------------------------------------------ local observables

def local_observables(rho):
    """``(n_up, n_down, n_corr, fluct)`` for a density matrix or a stack ``(..., 4, 4)``."""
    rho = np.asarray(rho)
    n_up = np.real(np.einsum("...ii,i->...", rho, np.diag(_N_UP)))
    n_dn = np.real(np.einsum("...ii,i->...", rho, np.diag(_N_DOWN)))
    n_corr = np.real(rho[..., 3, 3])
    n = n_up + n_dn
    fluct = n + 2 * n_corr - n ** 2        # <n^2> = <n> + 2 <n_up n_down>
    return n_up, n_dn, n_corr, fluct


def propagate(Pi, rho0):
    """``rho(t_k) = Pi(t_k) rho0`` for ``Pi`` of shape ``(N, 16, 16)``."""
    v = Pi @ vectorize(density_matrix(rho0))
    return np.moveaxis(v.reshape(-1, DIM, DIM), -1, -2)


def current_infinity(params: ModelParams, r: int) -> np.ndarray:
    """Covector of the time-local current ``sum_sigma Gamma_{r sigma} (1/2 - <n_sigma>)``."""
    res = params.reservoirs[r]
    out = np.zeros(16, dtype=complex)
    for sigma, n_op in ((UP, _N_UP), (DOWN, _N_DOWN)):
        out += res.gamma(sigma) * (0.5 * TRACE - vectorize(n_op))
    return out


def current_series(params, Pi, cov, dt, rho0):
    """``I_r(t_k)`` for all reservoirs; ``cov`` holds ``<Tr|Sigma_{I_r}(t)`` with shape ``(R, N, 16)``."""
    rho_v = Pi @ vectorize(density_matrix(rho0))
    minus_i = -1j * np.asarray(cov)
    out = []
    for r in range(params.n_reservoirs):
        local = rho_v @ current_infinity(params, r)
        n = rho_v.shape[0]
        conv = np.zeros(n, dtype=complex)
        for k in range(1, n):
            terms = np.einsum("ni,ni->n", minus_i[r, k::-1], rho_v[:k + 1])
            conv[k] = dt * (terms.sum() - 0.5 * (terms[0] + terms[-1]))
        out.append(np.real(local + conv))
    return np.array(out)


def current(result_record, params, r, rho0):
    """Current into the dot from reservoir ``r`` on the grid of a flow record."""
    return current_series(params, result_record.Pi, result_record.current_sigma,
                          result_record.grid.dt, rho0)[r]


# ------------------------------------------------------------------ stationary values

def stationary_extract(series, t=None, scale=1.0, window=0.2, tol=1e-3):
    """Plateau value: mean over the last ``window`` fraction; reached if the slope there is small."""
    y = np.asarray(series, dtype=float)
    t = np.arange(y.size, dtype=float) if t is None else np.asarray(t, dtype=float)
    start = int(np.floor((1 - window) * y.size))
    start = min(start, y.size - 2)
    tail_y, tail_t = y[start:], t[start:]
    slope = np.max(np.abs(np.diff(tail_y) / np.diff(tail_t)))
    return float(np.mean(tail_y)), bool(slope < tol * scale)


def stationary_state(l_inf, sigma_hat):
    """Null vector of ``L_inf + Sigma_hat`` as a normalized density matrix."""
    M = l_inf + sigma_hat
    w, v = np.linalg.eig(M)
    k = int(np.argmin(np.abs(w)))
    rho = devectorize(v[:, k])
    rho = rho / np.trace(rho)
    return 0.5 * (rho + rho.conj().T)


def zero_frequency(values, dt):
    """Trapezoidal ``int_0^{t_max} f(t) dt`` of grid samples."""
    values = np.asarray(values)
    return dt * (values.sum(axis=0) - 0.5 * (values[0] + values[-1]))


def stationary_from_kernels(params: ModelParams, sigma, cov, dt):
    """Stationary state and currents from kernels sampled on a grid that covers their decay."""
    l_inf = renormalized_generators(params).l_inf
    rho = stationary_state(l_inf, zero_frequency(sigma, dt))
    rv = vectorize(rho)
    cov_hat = zero_frequency(-1j * np.moveaxis(np.asarray(cov), 1, 0), dt)
    currents = np.array([np.real((current_infinity(params, r) + cov_hat[r]) @ rv)
                         for r in range(params.n_reservoirs)])
    return rho, currents


def stationary_from_record(params, record):
    return stationary_from_kernels(params, record.sigma, record.current_sigma, record.grid.dt)


def first_order_stationary(params: ModelParams, T):
    """Stationary state and currents of the first-order kernel, integrated adaptively in time.

    Used at high temperature, where the kernel decays on ``1/(pi T)`` and a
    uniform grid cannot resolve it.
    """
    l_inf = renormalized_generators(params).l_inf
    w, V = np.linalg.eig(l_inf)
    Vinv = np.linalg.inv(V)
    temps = np.broadcast_to(np.asarray(T, dtype=float), (params.n_reservoirs,))
    pairs = [(G_PLUS[k] @ V, Vinv @ G_PLUS[BAR[k]]) for k in range(4)]
    cur_left = [ETA[k] / 2 * (TRACE @ G_MINUS[k] @ V) for k in range(4)]

    def gam(t, r, k):
        x = np.pi * t * temps[r]
        th = 1 / (np.pi * t) if temps[r] == 0 else temps[r] / np.sinh(x)
        o = ORBITALS[k]
        return -1j * params.reservoirs[r].gamma(o.sigma) * th * np.exp(-1j * o.eta * params.reservoirs[r].mu * t)

    def integrand(t):
        ph = np.exp(-1j * w * t)
        sig = np.zeros((16, 16), dtype=complex)
        cov = np.zeros((params.n_reservoirs, 16), dtype=complex)
        for k in range(4):
            A, B = pairs[k]
            core = (A * ph) @ B
            for r in range(params.n_reservoirs):
                g = gam(t, r, k)
                sig += -g * core
                cov[r] += -g * (cur_left[k] * ph) @ B
        return np.concatenate([sig.ravel(), cov.ravel()])

    t_end = 60.0 / (np.pi * max(float(np.min(temps)), 1e-3))
    val, _ = scipy.integrate.quad_vec(integrand, 0.0, t_end, epsabs=1e-12, epsrel=1e-10)
    sigma_hat = 1j * val[:256].reshape(16, 16)
    cov_hat = val[256:].reshape(params.n_reservoirs, 16)
    rho = stationary_state(l_inf, sigma_hat)
    rv = vectorize(rho)
    currents = np.array([np.real((current_infinity(params, r) + cov_hat[r]) @ rv)
                         for r in range(params.n_reservoirs)])
    return rho, currents


# ------------------------------------------------------------------ diagnostics

def choi_matrix(S):
    S4 = np.asarray(S).reshape(S.shape[:-2] + (DIM, DIM, DIM, DIM))     # [b, a, j, i]
    C = np.moveaxis(S4, (-1, -3, -2, -4), (-4, -3, -2, -1))              # [i, a, j, b]
    return C.reshape(S.shape[:-2] + (16, 16))


def cp_trace_hermiticity(Pi):
    """``{'choi_min', 'trace_err', 'herm_err'}`` over a superoperator or a stack of them."""
    Pi = np.asarray(Pi)
    C = choi_matrix(Pi)
    C = 0.5 * (C + np.conj(np.swapaxes(C, -1, -2)))
    choi_min = float(np.min(np.linalg.eigvalsh(C)))
    trace_err = float(np.max(np.abs(TRACE @ Pi - TRACE)))
    return {"choi_min": choi_min, "trace_err": trace_err, "herm_err": hermiticity_error(Pi)}


def fixed_point_state(Pi_tr, t_r=float("nan"), tol=1e-6) -> ReentranceReport:
    """State left invariant by the propagator at ``t_r``."""
    w, v = np.linalg.eig(np.asarray(Pi_tr))
    ok = np.abs(w) <= 1 + 1e-8
    if not np.any(ok):
        raise NoUnitEigenvalue("every eigenvalue lies outside the unit disc")
    cand = np.flatnonzero(ok)
    k = cand[np.argmin(np.abs(w[cand] - 1))]
    if abs(w[k] - 1) > tol:
        raise NoUnitEigenvalue(f"closest eigenvalue {w[k]:.6g} misses 1 by {abs(w[k] - 1):.3g}")
    rho = devectorize(v[:, k])
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    after = devectorize(Pi_tr @ vectorize(rho))
    err = max(abs(a - b) for a, b in zip(local_observables(after), local_observables(rho)))
    return ReentranceReport(t_r, rho, complex(w[k]), float(err))


# ------------------------------------------------------------------ analytic references

def analytic_references(params: ModelParams, T, regime, **kw):
    """Closed-form reference values.

    ``high_T_current``: ``Gamma V/(4 T)``; ``high_T_fluct``:
    ``(1/2)(1 - (4 eps + 3U)/(4T))``; ``short_time_occ`` (keyword ``rho0``):
    quadratic coefficient of ``<n_sigma>`` beyond the semigroup decay, per
    spin; ``short_time_current`` (keyword ``rho0``, ``r``): ``I_r(0+)`` and the
    initial slope; ``quartic_dPi``: the ``dt^4`` coefficient matrix of
    ``dPi/dT``; ``low_T_fluct_fit`` (keywords ``T_values``, ``values``): the fit
    ``f0 (1 - c T^2)`` with its ``R^2``.
    """
    gamma = params.reservoirs[0].gamma_up
    eps, U = params.epsilon, params.U
    V = params.reservoirs[0].mu - params.reservoirs[-1].mu
    if regime == "high_T_current":
        return gamma * V / (4 * T)
    if regime == "high_T_fluct":
        return 0.5 * (1 - (4 * eps + 3 * U) / (4 * T))
    if regime == "short_time_occ":
        n_up, n_dn, _, _ = local_observables(density_matrix(kw.get("rho0", "empty")))
        coef = lambda nbar: (U * (0.5 - nbar) - (U + 2 * eps) / 2) * gamma / np.pi
        return np.array([coef(n_dn), coef(n_up)])
    if regime == "short_time_current":
        rho0 = density_matrix(kw.get("rho0", "up"))
        n = sum(local_observables(rho0)[:2])
        r = kw.get("r", 0)
        mu = params.reservoirs[r].mu
        # left lead at mu = V/2: (V - U - 2 eps) generalizes to 2 mu_r - U - 2 eps
        slope = (2 * mu - U - 2 * eps) * gamma / np.pi + (1 - n) * gamma * (U - 2 * np.pi * gamma) / np.pi
        return (1 - n) * gamma, slope
    if regime == "quartic_dPi":
        L = renormalized_generators(params).l_inf
        temps = np.broadcast_to(np.asarray(T, dtype=float), (params.n_reservoirs,))
        out = np.zeros((16, 16), dtype=complex)
        for r, res in enumerate(params.reservoirs):
            for k, o in enumerate(ORBITALS):
                Gk, Gb = G_PLUS[k], G_PLUS[BAR[k]]
                out += -np.pi / 36 * temps[r] * res.gamma(o.sigma) * (Gk @ L @ Gb + o.eta * res.mu * Gk @ Gb)
        return out
    if regime == "low_T_fluct_fit":
        Ts = np.asarray(kw["T_values"], dtype=float)
        ys = np.asarray(kw["values"], dtype=float)
        A = np.stack([np.ones_like(Ts), Ts ** 2], axis=1)
        (a, b), *_ = np.linalg.lstsq(A, ys, rcond=None)
        pred = A @ np.array([a, b])
        ss_res = float(np.sum((ys - pred) ** 2))
        ss_tot = float(np.sum((ys - ys.mean()) ** 2))
        r2 = 1 - ss_res / ss_tot if ss_tot > 0 else 1.0
        return {"f0": a, "c": -b / a, "r2": r2}
    raise ValueError(f"unknown regime {regime!r}")
