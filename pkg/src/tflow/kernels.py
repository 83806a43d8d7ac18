"""Diagram building blocks shared by perturbation theory and the flow.

Every kernel diagram has the form ``V_1 D_1(t)`` with a leftmost vertex
``V_1`` (``G+_1`` for the memory kernel, ``(eta_1/2) G-_1`` for current
kernels) and a remainder

    D_1(t) = -f_1(t) Pi(t) G+_{1bar} - int_0^t dx f_1(x) J_{1bar}(x, t - x),
    J_1(x, w) = int_0^x du Pi(u) R_1(x - u, w),

where ``f_1`` is a contraction, ``Pi`` the propagator and ``R_1`` the regular
part of the effective vertex.  The ``x`` integral is done after the ``u``
integral, so ``J = O(x)`` cancels the ``1/x`` of the contraction and the
value at ``x = 0`` is the limit ``c_1 R_1(0, w)``.

All superoperators are sector-packed (:mod:`tflow.blocks`).
"""
from __future__ import annotations

import numpy as np

from .algebra import (BAR, ETA, G_MINUS, G_PLUS, ORBITALS, TRACE, ModelParams,
                      propagator_infinity, renormalized_generators)
from .blocks import SOp, orbital_shift
from .contractions import _thermal, _thermal_dT
from .timegrid import TimeGrid, conv_packed, triangle_sum

ZERO = (0, 0)


class Context:
    """Constant superoperators and contraction tables for one model and grid."""

    def __init__(self, params: ModelParams, grid: TimeGrid, n_vertex: int = 32):
        self.params = params
        self.grid = grid
        self.vgrid, self.stride = grid.coarsen(min(n_vertex, grid.n_points))
        self.shift = [orbital_shift(k) for k in range(4)]
        self.bar_shift = [orbital_shift(BAR[k]) for k in range(4)]
        self.gp = [SOp.from_dense(G_PLUS[k], self.shift[k]) for k in range(4)]
        gens = renormalized_generators(params)
        self.l_inf_dense = gens.l_inf
        self.l_inf = SOp.from_dense(gens.l_inf, ZERO)
        self.pi_inf_dense = propagator_infinity(params, grid.t)
        self.pi_inf = SOp.from_dense(self.pi_inf_dense, ZERO)
        self.tr_gm = np.array([TRACE @ G_MINUS[k] for k in range(4)])
        self.rates = np.array([[res.gamma(o.sigma) for o in ORBITALS] for res in params.reservoirs])
        self.mus = np.array([res.mu for res in params.reservoirs])
        self.n_res = params.n_reservoirs

    # contractions -------------------------------------------------------

    def gamma(self, temps, t, reservoir=None):
        """``gamma^-_1(t)`` per orbital, shape ``(4, len(t))``; 0 at ``t = 0``."""
        t = np.asarray(t, dtype=float)
        out = np.zeros((4, t.size), dtype=complex)
        pos = t > 0
        rs = range(self.n_res) if reservoir is None else [reservoir]
        for r in rs:
            th = _thermal(t[pos], temps[r])
            for k in range(4):
                out[k, pos] += -1j * self.rates[r, k] * th * np.exp(-1j * ETA[k] * self.mus[r] * t[pos])
        return out

    def gamma_dalpha(self, temps, vel, t, reservoir=None):
        """``sum_r (dT_r/dalpha) d gamma^-_{1r}/dT_r``, shape ``(4, len(t))``."""
        t = np.asarray(t, dtype=float)
        out = np.zeros((4, t.size), dtype=complex)
        rs = range(self.n_res) if reservoir is None else [reservoir]
        for r in rs:
            if vel[r] == 0:
                continue
            th = _thermal_dT(t, temps[r])
            for k in range(4):
                out[k] += vel[r] * -1j * self.rates[r, k] * th * np.exp(-1j * ETA[k] * self.mus[r] * t)
        return out

    def residue(self, reservoir=None):
        """``c_1`` with ``gamma^-_1(t) ~ c_1/t``."""
        rates = self.rates if reservoir is None else self.rates[[reservoir]]
        return -1j * rates.sum(axis=0) / np.pi

    # zero-time limits ---------------------------------------------------

    def zero_time_sigma(self):
        """``-i Sigma(0) = sum_{r,1} (Gamma_{r sigma_1}/pi) G+_1 (L_inf + eta_1 mu_r) G+_{1bar}``."""
        out = np.zeros((16, 16), dtype=complex)
        for r in range(self.n_res):
            for k in range(4):
                M = self.l_inf_dense + ETA[k] * self.mus[r] * np.eye(16)
                out += self.rates[r, k] / np.pi * G_PLUS[k] @ M @ G_PLUS[BAR[k]]
        return out

    def zero_time_current(self, r):
        """Covector ``<Tr| (-i Sigma_{I_r})(0)``."""
        out = np.zeros(16, dtype=complex)
        for k in range(4):
            M = self.l_inf_dense + ETA[k] * self.mus[r] * np.eye(16)
            out += ETA[k] / 2 * self.rates[r, k] / np.pi * self.tr_gm[k] @ M @ G_PLUS[BAR[k]]
        return out

    def lead_origin(self):
        """Diagonal limit of the lead vertex part at ``a = b = 0`` per orbital (dense)."""
        out = []
        for k1 in range(4):
            acc = np.zeros((16, 16), dtype=complex)
            for r in range(self.n_res):
                for k2 in range(4):
                    c = -1j * self.rates[r, k2] / np.pi
                    G2, G1, G2b = G_PLUS[k2], G_PLUS[k1], G_PLUS[BAR[k2]]
                    acc += c * (-1j * ETA[k2] * self.mus[r] * G2 @ G1 @ G2b
                                - 0.5j * (G2 @ self.l_inf_dense @ G1 @ G2b + G2 @ G1 @ self.l_inf_dense @ G2b))
            out.append(acc)
        return out


# ------------------------------------------------------------- assembly

def bare_part(ctx: Context, f, Pi: SOp, k):
    """``-f_k(t) Pi(t) G+_{kbar}`` on the grid, packed with the shift of ``G+_{kbar}``."""
    return (Pi @ ctx.gp[BAR[k]]) * (-f[k])


def j_conv(ctx: Context, A: SOp, R: SOp, dt):
    """``J(x, w) = int_0^x du A(u) R(x - u, w)`` for ``R`` on an ``(n, n)`` grid."""
    return conv_packed(SOp(A.data[:, None], A.shift), R, dt, axis=0)


def triangle_term(f_k, c_k, J: SOp, limit: SOp, dt):
    """``-int_0^t dx f(x) J(x, t - x)`` with the ``x = 0`` row replaced by ``c * limit``."""
    h = J.data * f_k[:, None, None]
    h[0] = c_k * limit.data
    return SOp(-triangle_sum(h, dt), J.shift)


def assemble_sigma(ctx: Context, D, zero_value=None):
    """``sum_1 G+_1 D_1``, dense ``(N, 16, 16)``; row 0 replaced by ``zero_value``."""
    acc = None
    for k in range(4):
        term = ctx.gp[k] @ D[k]
        acc = term if acc is None else acc + term
    out = acc.dense()
    out[0] = 0 if zero_value is None else zero_value
    return out


def assemble_current(ctx: Context, D, zero_value=None):
    """``sum_1 (eta_1/2) <Tr|G-_1 D_1`` as covectors ``(N, 16)``."""
    out = 0
    for k in range(4):
        out = out + ETA[k] / 2 * np.einsum("i,nij->nj", ctx.tr_gm[k], D[k].dense())
    out = np.array(out)
    out[0] = 0 if zero_value is None else zero_value
    return out


def lead_vertex(ctx: Context, Pa: SOp, Pb: SOp, gam_ext, k1, origin=None):
    """``sum_2 gamma_2(a + b) G+_2 Pa(a) G+_1 Pb(b) G+_{2bar}`` on an ``(n, n)`` grid.

    ``gam_ext`` holds the contraction on ``2n - 1`` points of the same spacing.
    The ``(0, 0)`` entry is replaced by ``origin`` (packed, or 0 if ``None``).
    """
    n = Pa.data.shape[0]
    idx = np.add.outer(np.arange(n), np.arange(n))
    acc = None
    for k2 in range(4):
        B = ctx.gp[k2] @ Pa @ ctx.gp[k1]
        C = Pb @ ctx.gp[BAR[k2]]
        term = (B[:, None] @ C[None, :]) * gam_ext[k2][idx]
        acc = term if acc is None else acc + term
    acc.data[0, 0] = 0 if origin is None else origin.data
    return acc


def u0_parts(ctx: Context, temps):
    """``(-i Sigma)`` of the exact non-interacting kernel and its pieces (dense arrays)."""
    grid = ctx.grid
    dt, n = grid.dt, grid.n_points
    gam = ctx.gamma(temps, grid.t)
    c = ctx.residue()
    Pi = ctx.pi_inf
    D1 = [bare_part(ctx, gam, Pi, k) for k in range(4)]
    z = ctx.zero_time_sigma()
    s1 = assemble_sigma(ctx, D1, z)
    s1p = SOp.from_dense(s1, ZERO)
    corr = conv_packed(conv_packed(Pi, s1p, dt), Pi, dt)
    nested = assemble_sigma(ctx, [bare_part(ctx, gam, corr, k) for k in range(4)], 0)
    gam_ext = ctx.gamma(temps, np.arange(2 * n - 1) * dt)
    origin = [SOp.from_dense(o, ctx.shift[k]) for k, o in enumerate(ctx.lead_origin())]
    D = []
    for k in range(4):
        kb = BAR[k]
        R = lead_vertex(ctx, Pi, Pi, gam_ext, kb, origin[kb])
        J = j_conv(ctx, Pi, R, dt)
        D.append(triangle_term(gam[k], c[k], J, R[0], dt))
    crossing = assemble_sigma(ctx, D, 0)
    return s1, nested, crossing
