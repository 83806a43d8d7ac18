"""Renormalized perturbation theory around infinite temperature.

Kernels are returned as ``Sigma`` (not ``-i Sigma``).  Current kernels are only
meaningful under the trace, and their superoperator form diverges at
``t = 0``, so they are returned as trace covectors ``<Tr| Sigma_{I_r}(t)``.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .algebra import BAR, G_PLUS, ModelParams, renormalized_generators
from .blocks import SOp
from .errors import BadTemperature, BadTemperatureWarning, NotApplicable, UnsupportedCouplings
from .kernels import (ZERO, Context, assemble_current, assemble_sigma, bare_part, j_conv,
                      lead_vertex, triangle_term, u0_parts)
from .timegrid import GridFn1, GridFn2, GridFn3, TimeGrid, conv_packed, dyson

WARN_RATIO = 20.0
ERROR_RATIO = 5.0


class KernelOrder(enum.Enum):
    FIRST = 1
    NEXT_TO_LEADING = 2


@dataclass(frozen=True)
class CovectorFn:
    """Covector-valued function of one time difference, values ``(N, 16)``."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def apply(self, rho_vecs):
        """``<c(t_k)| rho_k>`` for a stack of vectorized states ``(N, 16)``."""
        return np.einsum("ni,ni->n", self.values, rho_vecs)


@lru_cache(maxsize=8)
def context(params: ModelParams, grid: TimeGrid, n_vertex: int = 32) -> Context:
    return Context(params, grid, n_vertex)


def _temps(params, T):
    if T is None:
        return np.array([res.T for res in params.reservoirs])
    T = np.broadcast_to(np.asarray(T, dtype=float), (params.n_reservoirs,)).copy()
    if np.any(T < 0):
        raise ValueError("temperatures must be non-negative")
    return T


def _order(order):
    return order if isinstance(order, KernelOrder) else KernelOrder(int(order))


def sigma_order1(params: ModelParams, T, grid: TimeGrid) -> GridFn1:
    """First-order kernel ``-i Sigma = -gamma_1 G+_1 Pi_inf G+_{1bar}``; ``t = 0`` is the analytic limit."""
    ctx = context(params, grid)
    gam = ctx.gamma(_temps(params, T), grid.t)
    D = [bare_part(ctx, gam, ctx.pi_inf, k) for k in range(4)]
    return GridFn1(grid, 1j * assemble_sigma(ctx, D, ctx.zero_time_sigma()))


def sigma_order2(params: ModelParams, T, grid: TimeGrid) -> GridFn1:
    """The nested and the crossing two-contraction diagrams (their sum)."""
    ctx = context(params, grid)
    _, nested, crossing = u0_parts(ctx, _temps(params, T))
    return GridFn1(grid, 1j * (nested + crossing))


def next_to_leading(params, T, grid) -> GridFn1:
    ctx = context(params, grid)
    s1, nested, crossing = u0_parts(ctx, _temps(params, T))
    return GridFn1(grid, 1j * (s1 + nested + crossing))


def current_sigma(params: ModelParams, T, grid: TimeGrid, r: int, order=KernelOrder.FIRST) -> CovectorFn:
    """``<Tr| Sigma_{I_r}(t)`` with the leftmost vertex replaced by ``(eta/2) G-`` and ``gamma -> gamma_r``."""
    if not 0 <= r < params.n_reservoirs:
        raise ValueError(f"no reservoir {r}")
    order = _order(order)
    ctx = context(params, grid)
    temps = _temps(params, T)
    dt, n = grid.dt, grid.n_points
    fr = ctx.gamma(temps, grid.t, reservoir=r)
    Pi = ctx.pi_inf
    if order is KernelOrder.NEXT_TO_LEADING:
        gam = ctx.gamma(temps, grid.t)
        s1 = assemble_sigma(ctx, [bare_part(ctx, gam, Pi, k) for k in range(4)], ctx.zero_time_sigma())
        corr = conv_packed(conv_packed(Pi, SOp.from_dense(s1, ZERO), dt), Pi, dt)
        Pi_line = Pi + corr
    else:
        Pi_line = Pi
    D = [bare_part(ctx, fr, Pi_line, k) for k in range(4)]
    if order is KernelOrder.NEXT_TO_LEADING:
        gam_ext = ctx.gamma(temps, np.arange(2 * n - 1) * dt)
        origin = lead_origins(ctx)
        cr = ctx.residue(r)
        for k in range(4):
            kb = BAR[k]
            R = lead_vertex(ctx, Pi, Pi, gam_ext, kb, origin[kb])
            J = j_conv(ctx, Pi, R, dt)
            D[k] = D[k] + triangle_term(fr[k], cr[k], J, R[0], dt)
    return CovectorFn(grid, 1j * assemble_current(ctx, D, ctx.zero_time_current(r)))


def lead_origins(ctx):
    return [SOp.from_dense(o, ctx.shift[k]) for k, o in enumerate(ctx.lead_origin())]


def u0_exact_kernel(params: ModelParams, T, grid: TimeGrid) -> GridFn1:
    """Exact non-interacting kernel: first order plus the nested and crossing diagrams."""
    if params.U != 0:
        raise NotApplicable("the closed-form kernel exists only for U = 0")
    return next_to_leading(params, T, grid)


def zero_time_kernel(params: ModelParams) -> np.ndarray:
    """Temperature-independent ``Sigma(t = 0)`` for uniform tunnel rates."""
    if not params.is_uniform():
        raise UnsupportedCouplings("the zero-time kernel is only available for uniform rates")
    gamma = params.reservoirs[0].gamma_up
    l_inf = renormalized_generators(params).l_inf
    out = np.zeros((16, 16), dtype=complex)
    for k in range(4):
        out += params.n_reservoirs / np.pi * gamma * G_PLUS[k] @ l_inf @ G_PLUS[BAR[k]]
    for res in params.reservoirs:
        for sigma_up in (0, 2):
            # G+_{+sigma} G+_{-sigma}; positions 0/1 (up) and 2/3 (down) in ORBITALS
            out += 2 / np.pi * gamma * res.mu * G_PLUS[sigma_up] @ G_PLUS[sigma_up + 1]
    return 1j * out


# ------------------------------------------------------------------ vertices

@dataclass
class VertexOne:
    """Effective one-point vertex.

    The bare part ``G+_1`` is fixed.  The regular part is split into the lead
    diagram, rebuilt from the current propagator and contraction whenever it
    is needed, and the correction ``delta`` (shape ``(4, n, n, nnz)``) sampled
    on the vertex grid.
    """

    grid: TimeGrid
    delta: np.ndarray = field(repr=False)

    @property
    def bare(self):
        return [G_PLUS[k] for k in range(4)]

    def regular(self, ctx, Pi: SOp, temps, k) -> GridFn2:
        """Full regular part of component ``k`` on the vertex grid (dense values)."""
        m = ctx.stride
        n = self.grid.n_points
        gam_ext = ctx.gamma(temps, np.arange(2 * n - 1) * self.grid.dt)
        R = lead_vertex(ctx, Pi[::m], Pi[::m], gam_ext, k, lead_origins(ctx)[k])
        R = SOp(R.data + self.delta[k], R.shift)
        return GridFn2(self.grid, R.dense())


@dataclass
class VertexTwo:
    """Effective two-point vertex on the vertex grid, ``values[4*k1 + k2]`` of shape ``(n, n, n, nnz)``.

    Only the simplex ``a + b + c <= t_max`` carries data.
    """

    grid: TimeGrid
    values: list = field(repr=False)

    def component(self, ctx, k1, k2) -> GridFn3:
        """Dense samples of ``G_12`` for the ordered pair ``(k1, k2)`` (zero off the simplex)."""
        from .blocks import add_shift
        from .vertex import scatter
        shift = add_shift(ctx.shift[k1], ctx.shift[k2])
        cube = scatter(self.values[4 * k1 + k2], self.grid.n_points)
        return GridFn3(self.grid, SOp(cube, shift).dense())


def check_start_temperature(params: ModelParams, T_inf: float):
    ratio = T_inf / params.energy_scale()
    if ratio < ERROR_RATIO:
        raise BadTemperature(f"T_inf = {T_inf} is only {ratio:.3g} times the largest model scale")
    if ratio < WARN_RATIO:
        warnings.warn(f"T_inf = {T_inf} is only {ratio:.3g} times the largest model scale",
                      BadTemperatureWarning, stacklevel=2)


def init_vertices(params: ModelParams, T_inf, grid: TimeGrid, n_vertex: int = 32, Pi=None):
    """Vertices at the starting temperature: ``G1`` = bare + lead diagram, ``G12`` = first diagram."""
    temps = _temps(params, T_inf)
    check_start_temperature(params, float(np.max(temps)))
    ctx = context(params, grid, n_vertex)
    if Pi is None:
        Pi = SOp.from_dense(dyson(-1j * next_to_leading(params, temps, grid).values,
                                  ctx.pi_inf_dense, grid.dt), ZERO)
    from .vertex import g12_lead
    vg = ctx.vgrid
    n = vg.n_points
    from .blocks import nnz
    delta = np.zeros((4, n, n, nnz(ctx.shift[0])), dtype=complex)
    G1 = VertexOne(vg, delta)
    G12 = VertexTwo(vg, g12_lead(ctx, Pi[::ctx.stride], ctx.gamma(temps, np.arange(3 * n) * vg.dt)))
    return {"G1": G1, "G12": G12}
