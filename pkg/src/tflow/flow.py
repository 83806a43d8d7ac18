"""Temperature flow of the memory kernel, the current kernels and the vertices.

The flow runs in a path parameter ``alpha in [0, 1]`` that lowers the
reservoir temperatures from ``T_inf`` (where renormalized perturbation theory
is accurate) to the target temperatures.  The integrated state consists of

* ``-i Sigma(t)`` on the fine grid (sector packed),
* the current covectors ``<Tr| (-i Sigma_{I_r})(t)`` per reservoir,
* the correction ``dR_1(a, b)`` of the one-point vertex on the vertex grid,
* the two-point vertex ``G_12(a, b, c)`` on the vertex-grid simplex.

The propagator is not integrated: it is re-solved from ``Sigma`` by the Dyson
equation inside every right-hand-side evaluation.  Right-hand sides depend on
the derivative they produce (through ``dPi/dalpha`` and ``d dR/dalpha``), so
every evaluation takes a guess of that derivative and the stepper iterates to
self-consistency.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .algebra import BAR, ModelParams
from .blocks import SOp, nnz
from .contractions import TemperaturePath
from .errors import FlowStalled, NonPhysical, StepRejected
from .kernels import ZERO, assemble_current, assemble_sigma
from .perturbation import (check_start_temperature, context, current_sigma, init_vertices,
                           lead_origins, next_to_leading, KernelOrder)
from .timegrid import TimeGrid, conv_packed, conv_packed_sum, dyson, interp_matrix, triangle_sum
from .vertex import g12_lead, pair_shift, simplex, delta_rhs

log = logging.getLogger(__name__)

# BDF2 local error constant relative to the AB2 predictor difference
ERR_CONST = 8.0 / 23.0


@dataclass
class StepperConfig:
    """Step control, in temperature units along the path."""

    dT_init: float = 0.5
    dT_min: float = 1e-6
    dT_max: float = 10.0
    error_tol: float = 1e-3
    T_floor: float = 0.01
    max_iter: int = 20
    iter_tol: float = 1e-8

    def __post_init__(self):
        if not 0 < self.dT_min <= self.dT_init <= self.dT_max:
            raise ValueError("need 0 < dT_min <= dT_init <= dT_max")
        if not self.error_tol > 0 or not self.iter_tol > 0:
            raise ValueError("tolerances must be positive")
        if self.T_floor < 0:
            raise ValueError("T_floor must be non-negative")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class FlowOptions:
    n_vertex: int = 17
    include_rr: bool = False
    check_cp: bool = True


# ------------------------------------------------------------------ state layout

class Layout:
    """Packing of the flow state into one complex vector."""

    def __init__(self, ctx):
        N = ctx.grid.n_points
        n = ctx.vgrid.n_points
        n_s = simplex(n)[0].size
        self.blocks = [("sigma", (N, nnz(ZERO))),
                       ("current", (ctx.n_res, N, 16)),
                       ("delta", (4, n, n, nnz(ctx.shift[0])))]
        self.blocks += [(f"g12_{p}", (n_s, nnz(pair_shift(ctx, p)))) for p in range(16)]
        self.offsets = {}
        off = 0
        for name, shape in self.blocks:
            size = int(np.prod(shape))
            self.offsets[name] = (off, off + size, shape)
            off += size
        self.size = off

    def pack(self, parts):
        y = np.empty(self.size, dtype=complex)
        for name, (lo, hi, shape) in self.offsets.items():
            y[lo:hi] = np.asarray(parts[name]).ravel()
        return y

    def view(self, y, name):
        lo, hi, shape = self.offsets[name]
        return y[lo:hi].reshape(shape)

    def g12(self, y):
        return [self.view(y, f"g12_{p}") for p in range(16)]

    def block_slices(self):
        """Groups for the error norm: sigma, currents, vertex correction, two-point vertex."""
        g_lo = self.offsets["g12_0"][0]
        return [slice(*self.offsets["sigma"][:2]), slice(*self.offsets["current"][:2]),
                slice(*self.offsets["delta"][:2]), slice(g_lo, self.size)]


@dataclass
class FlowState:
    alpha: float
    temps: np.ndarray
    y: np.ndarray = field(repr=False)


@dataclass
class FlowRecord:
    """Snapshot at one path point.  Kernels are stored as ``Sigma`` (not ``-i Sigma``)."""

    T: float
    alpha: float
    temps: np.ndarray
    grid: TimeGrid
    Pi: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    current_sigma: np.ndarray = field(repr=False)
    dsigma_dalpha: np.ndarray = field(repr=False)
    dPi_dalpha: np.ndarray = field(repr=False)
    velocity: np.ndarray

    @property
    def dsigma_dT(self):
        """Derivative along the path per unit of the (common) temperature."""
        v = float(np.sum(self.velocity))
        return self.dsigma_dalpha * (self.velocity.size / v) if v else np.zeros_like(self.sigma)

    @property
    def dPi_dT(self):
        v = float(np.sum(self.velocity))
        return self.dPi_dalpha * (self.velocity.size / v) if v else np.zeros_like(self.Pi)


@dataclass
class FlowResult:
    params: ModelParams
    grid: TimeGrid
    path: TemperaturePath
    records: list
    stats: dict

    def at(self, T):
        """Record closest to temperature ``T``."""
        return min(self.records, key=lambda r: abs(r.T - T))


# ------------------------------------------------------------------ right-hand side

class FlowEquations:
    """Right-hand side of the flow for one model, grid and path."""

    def __init__(self, params: ModelParams, grid: TimeGrid, path: TemperaturePath,
                 options: FlowOptions | None = None):
        self.params = params
        self.grid = grid
        self.path = path
        self.options = options or FlowOptions()
        self.ctx = context(params, grid, self.options.n_vertex)
        self.layout = Layout(self.ctx)
        self.origins = lead_origins(self.ctx)
        ctx = self.ctx
        N, n, m = grid.n_points, ctx.vgrid.n_points, ctx.stride
        self.t = grid.t
        self.t_ext = np.arange(2 * N - 1) * grid.dt
        self.t_v = np.arange(3 * n) * ctx.vgrid.dt
        self.W = interp_matrix(N, m)
        self.n_evals = 0

    # helpers -----------------------------------------------------------

    def propagator(self, y):
        msig = SOp(self.layout.view(y, "sigma"), ZERO)
        return SOp.from_dense(dyson(msig.dense(), self.ctx.pi_inf_dense, self.grid.dt), ZERO)

    def _lead_pair(self, P, dP, gam, dgam, k1, origin, rows=None, cols=None):
        """Lead vertex part and its path derivative (the origin value is constant).

        ``rows``/``cols`` restrict the output to a block ``R[rows, cols]``.
        """
        ctx = self.ctx
        n = P.data.shape[0]
        rows = slice(0, n) if rows is None else rows
        cols = slice(0, n) if cols is None else cols
        idx = np.add.outer(np.arange(n)[rows], np.arange(n)[cols])
        R = dR = None
        for k2 in range(4):
            gb = ctx.gp[BAR[k2]]
            B = ctx.gp[k2] @ P[rows] @ ctx.gp[k1]
            C = P[cols] @ gb
            dB = ctx.gp[k2] @ dP[rows] @ ctx.gp[k1]
            dC = dP[cols] @ gb
            BC = B[:, None] @ C[None, :]
            r = BC * gam[k2][idx]
            d = BC * dgam[k2][idx] + (dB[:, None] @ C[None, :] + B[:, None] @ dC[None, :]) * gam[k2][idx]
            R = r if R is None else R + r
            dR = d if dR is None else dR + d
        if rows.start == 0 and cols.start == 0:
            R.data[0, 0] = origin.data
            dR.data[0, 0] = 0
        return R, dR

    def _blocks(self):
        """Column blocks ``[w0, w1)`` of the triangle ``x + w < N``; block rows stop at ``N - w0``."""
        N = self.grid.n_points
        nb = 4 if N >= 64 else 1
        edges = [round(N * i / nb) for i in range(nb + 1)]
        return [(N - w0, w0, w1) for w0, w1 in zip(edges[:-1], edges[1:])]

    # right-hand side ---------------------------------------------------------

    def rhs_vertices(self, Pv, dPv, temps, vel, y, ddelta_guess):
        """Path derivatives of the vertex correction and of ``G_12``."""
        ctx, L = self.ctx, self.layout
        gv = ctx.gamma(temps, self.t_v)
        dgv = ctx.gamma_dalpha(temps, vel, self.t_v)
        g12 = L.g12(y)
        dg12 = g12_lead(ctx, Pv, dgv, origin=False)
        delta = L.view(y, "delta")
        R, dR = [], []
        for k in range(4):
            r, d = self._lead_pair(Pv, dPv, gv, dgv, k, self.origins[k])
            R.append(SOp(r.data + delta[k], r.shift))
            dR.append(SOp(d.data + ddelta_guess[k], d.shift))
        out = delta_rhs(ctx, Pv, dPv, gv, dgv, R, dR, g12, dg12, include_rr=self.options.include_rr)
        return np.stack([o.data for o in out]), dg12

    def rhs_kernels(self, Pi, dPi, temps, vel, delta, ddelta):
        """``d(-i Sigma)/dalpha`` (packed) and the current covector derivatives."""
        ctx, dt = self.ctx, self.grid.dt
        gam = ctx.gamma(temps, self.t)
        dgam = ctx.gamma_dalpha(temps, vel, self.t)
        gam_ext = ctx.gamma(temps, self.t_ext)
        dgam_ext = ctx.gamma_dalpha(temps, vel, self.t_ext)
        fsets = [(gam, dgam, ctx.residue())]
        for r in range(ctx.n_res):
            fsets.append((ctx.gamma(temps, self.t, reservoir=r),
                          ctx.gamma_dalpha(temps, vel, self.t, reservoir=r), ctx.residue(r)))
        D = [[None] * 4 for _ in fsets]
        N = self.grid.n_points
        cache = {}
        blocks = [(lx, w0, w1, SOp(Pi.data[:lx, None], ZERO), SOp(dPi.data[:lx, None], ZERO))
                  for lx, w0, w1 in self._blocks()]
        for k in range(4):
            kb = BAR[k]
            shift = ctx.shift[kb]
            J = np.zeros((N, N, nnz(shift)), dtype=complex)
            dJ = np.zeros_like(J)
            dR0 = np.zeros((N, nnz(shift)), dtype=complex)
            for lx, w0, w1, Pc, dPc in blocks:
                R, dR = self._lead_pair(Pi, dPi, gam_ext, dgam_ext, kb, self.origins[kb],
                                        slice(0, lx), slice(w0, w1))
                Wr, Wc = self.W[:lx], self.W[w0:w1]
                R = SOp(R.data + np.einsum("ia,jb,abz->ijz", Wr, Wc, delta[kb], optimize=True), shift)
                dR = SOp(dR.data + np.einsum("ia,jb,abz->ijz", Wr, Wc, ddelta[kb], optimize=True), shift)
                J[:lx, w0:w1] = conv_packed_sum([(Pc, R)], dt, cache=cache).data
                dJ[:lx, w0:w1] = conv_packed_sum([(dPc, R), (Pc, dR)], dt, cache=cache).data
                dR0[w0:w1] = dR.data[0]
                for key in [id(R.data), id(dR.data)]:
                    cache.pop(key, None)
            PG, dPG = Pi @ ctx.gp[kb], dPi @ ctx.gp[kb]
            for s, (f, df, c) in enumerate(fsets):
                h = J * df[k][:, None, None] + dJ * f[k][:, None, None]
                h[0] = c[k] * dR0
                reg = SOp(-triangle_sum(h, dt), shift)
                D[s][k] = PG * (-df[k]) + dPG * (-f[k]) + reg
        dsig = SOp.from_dense(assemble_sigma(ctx, D[0], 0), ZERO).data
        dcur = np.stack([assemble_current(ctx, D[s], 0) for s in range(1, len(fsets))])
        return dsig, dcur

    def __call__(self, alpha, y, guess):
        """Derivative of the packed state; ``guess`` is the expected derivative."""
        self.n_evals += 1
        ctx, L, dt = self.ctx, self.layout, self.grid.dt
        temps = self.path.temperatures(alpha)
        vel = self.path.velocity(alpha)
        Pi = self.propagator(y)
        dmsig = SOp(L.view(guess, "sigma"), ZERO)
        dPi = conv_packed(conv_packed(Pi, dmsig, dt), Pi, dt)
        m = ctx.stride
        ddelta, dg12 = self.rhs_vertices(Pi[::m], dPi[::m], temps, vel, y, L.view(guess, "delta"))
        dsig, dcur = self.rhs_kernels(Pi, dPi, temps, vel, L.view(y, "delta"), ddelta)
        parts = {"sigma": dsig, "current": dcur, "delta": ddelta}
        parts.update({f"g12_{p}": dg12[p] for p in range(16)})
        out = L.pack(parts)
        scale = max(1.0, float(np.abs(L.view(y, "sigma")).max()))
        if not np.all(np.isfinite(out)) or np.abs(out).max() > 1e6 * scale * max(1.0, np.abs(vel).max()):
            raise FloatingPointError(f"flow right-hand side blew up at alpha = {alpha:.6g}")
        return out

    def derivative(self, alpha, y, guess=None, max_iter=20, tol=1e-8):
        """Self-consistent derivative at fixed ``y``."""
        f = np.zeros_like(y) if guess is None else guess
        for _ in range(max_iter):
            f_new = self(alpha, y, f)
            if _rel_change(f_new, f, self.layout) <= tol:
                return f_new
            f = f_new
        return f

    # initial state -----------------------------------------------------------

    def initial_state(self):
        ctx, grid = self.ctx, self.grid
        temps = self.path.temperatures(0.0)
        check_start_temperature(self.params, float(np.max(temps)))
        sigma = next_to_leading(self.params, temps, grid)
        msig = SOp.from_dense(-1j * sigma.values, ZERO)
        cur = np.stack([-1j * current_sigma(self.params, temps, grid, r, KernelOrder.NEXT_TO_LEADING).values
                        for r in range(ctx.n_res)])
        Pi = SOp.from_dense(dyson(msig.dense(), ctx.pi_inf_dense, grid.dt), ZERO)
        verts = init_vertices(self.params, temps, grid, self.options.n_vertex, Pi=Pi)
        parts = {"sigma": msig.data, "current": cur, "delta": verts["G1"].delta}
        parts.update({f"g12_{p}": verts["G12"].values[p] for p in range(16)})
        return FlowState(0.0, temps, self.layout.pack(parts))

    def record(self, alpha, y, f):
        L, dt = self.layout, self.grid.dt
        Pi = self.propagator(y)
        dmsig = SOp(L.view(f, "sigma"), ZERO)
        dPi = conv_packed(conv_packed(Pi, dmsig, dt), Pi, dt)
        temps = self.path.temperatures(alpha)
        return FlowRecord(
            T=float(np.max(temps)), alpha=alpha, temps=temps, grid=self.grid, Pi=Pi.dense(),
            sigma=1j * SOp(L.view(y, "sigma"), ZERO).dense(),
            current_sigma=1j * L.view(y, "current").copy(),
            dsigma_dalpha=1j * dmsig.dense(), dPi_dalpha=dPi.dense(),
            velocity=self.path.velocity(alpha))


def _rel_change(a, b, layout):
    return _error_norm(a - b, a, layout)


# ------------------------------------------------------------------ stepper

def _error_norm(diff, y, layout):
    """Max over blocks of ``max|diff| / max(max|y_block|, max|sigma|)``."""
    blocks = layout.block_slices()
    s_sigma = np.abs(y[blocks[0]]).max()
    err = 0.0
    for sl in blocks:
        scale = max(np.abs(y[sl]).max(), s_sigma, 1e-300)
        err = max(err, np.abs(diff[sl]).max() / scale)
    return err


def _solve_implicit(F, alpha, y_pred, explicit, coef, f_guess, cfg, layout):
    """Fixed point of ``y = explicit + coef * F(alpha, y, f)``."""
    y = y_pred
    f = f_guess
    for _ in range(cfg.max_iter):
        f = F(alpha, y, f)
        y_new = explicit + coef * f
        if _error_norm(y_new - y, y_new, layout) <= cfg.iter_tol:
            return y_new, f
        y = y_new
    raise StepRejected("fixed-point iteration did not converge", np.inf)


def bdf2_step(F, alpha, h, h_prev, y, y_prev, f, f_prev, cfg, layout):
    """One variable-step BDF2 step with an AB2 predictor.

    Returns ``(y_new, f_new, err)`` where ``err`` is the scaled estimate of the
    local error; raises :class:`StepRejected` when it exceeds the tolerance.
    """
    w = h / h_prev
    y_pred = y + h * ((1 + w / 2) * f - (w / 2) * f_prev)
    a1 = (1 + w) ** 2 / (1 + 2 * w)
    a2 = -w ** 2 / (1 + 2 * w)
    b = (1 + w) / (1 + 2 * w)
    f_guess = f + w * (f - f_prev)
    y_new, f_new = _solve_implicit(F, alpha + h, y_pred, a1 * y + a2 * y_prev, b * h, f_guess, cfg, layout)
    err = ERR_CONST * _error_norm(y_new - y_pred, y_new, layout)
    if err > cfg.error_tol:
        raise StepRejected(f"local error {err:.3g} above tolerance", err)
    return y_new, f_new, err


def trapezoid_step(F, alpha, h, y, f, cfg, layout):
    """Implicit trapezoidal step used to start the two-step method."""
    y_pred = y + h * f
    return _solve_implicit(F, alpha + h, y_pred, y + 0.5 * h * f, 0.5 * h, f, cfg, layout)


class VectorLayout:
    """Single-block layout, for driving the stepper on generic ODEs."""

    def block_slices(self):
        return [slice(None)]


def integrate_fixed(F, y0, alpha0, steps, cfg: StepperConfig | None = None):
    """March ``y' = F(alpha, y)`` through the step sizes ``steps`` without error control.

    The first two steps are trapezoidal, the rest variable-step BDF2, as in
    :func:`flow_run`.  Returns the final state.
    """
    cfg = cfg or StepperConfig(error_tol=np.inf, iter_tol=1e-15, max_iter=200)
    layout = VectorLayout()
    G = lambda a, y, guess: F(a, y)
    alpha, y = alpha0, np.asarray(y0, dtype=complex)
    f = G(alpha, y, None)
    y_prev = f_prev = h_prev = None
    for i, h in enumerate(steps):
        if i < 2:
            y_new, f_new = trapezoid_step(G, alpha, h, y, f, cfg, layout)
        else:
            y_new, f_new, _ = bdf2_step(G, alpha, h, h_prev, y, y_prev, f, f_prev, cfg, layout)
        y_prev, f_prev, h_prev = y, f, h
        alpha, y, f = alpha + h, y_new, f_new
    return y


def _path_length(path: TemperaturePath):
    T = np.asarray(path.temps)
    return float(np.sum(np.max(np.abs(np.diff(T, axis=0)), axis=1)))


def alpha_at(path: TemperaturePath, T):
    """Path parameter at which the highest reservoir temperature equals ``T``."""
    hi = np.max(path.temperatures(0.0))
    lo = np.max(path.temperatures(1.0))
    if not lo - 1e-12 <= T <= hi + 1e-12:
        raise ValueError(f"temperature {T} is not on the path [{lo}, {hi}]")
    a, b = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (a + b)
        if np.max(path.temperatures(mid)) > T:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


def flow_run(params: ModelParams, grid: TimeGrid, T_inf=None, T_target=None, record_at=(),
             config: StepperConfig | None = None, options: FlowOptions | None = None,
             path: TemperaturePath | None = None, progress=None) -> FlowResult:
    """Integrate the flow from ``T_inf`` down to ``T_target`` and record snapshots.

    ``record_at`` lists temperatures (of the hottest reservoir) at which the
    propagator and the kernels are stored; the start and the end point are
    always recorded.  A custom ``path`` overrides ``T_inf`` and ``T_target``.
    """
    cfg = config or StepperConfig()
    options = options or FlowOptions()
    if path is None:
        if T_inf is None:
            T_inf = 50.0 * params.energy_scale()
        if T_target is None:
            T_target = cfg.T_floor
        T_target = max(T_target, cfg.T_floor)
        if T_target >= T_inf:
            raise ValueError("the target temperature must lie below T_inf")
        path = TemperaturePath.linear(T_inf, T_target, params.n_reservoirs)
    eqs = FlowEquations(params, grid, path, options)
    layout = eqs.layout
    length = _path_length(path)
    to_alpha = 1.0 / length
    h_min, h_max = cfg.dT_min * to_alpha, cfg.dT_max * to_alpha
    requested = {alpha_at(path, T): float(T) for T in record_at}
    rec_alphas = set(requested) | {1.0}
    stops = sorted(a for a in rec_alphas | set(path.nodes[1:]) if a > 0)
    t_start = time.perf_counter()

    state = eqs.initial_state()
    alpha, y = 0.0, state.y
    f = eqs.derivative(alpha, y, max_iter=cfg.max_iter, tol=cfg.iter_tol)
    records = [eqs.record(alpha, y, f)]
    stats = {"accepted": 0, "rejected": 0}

    # start: two trapezoidal substeps
    h = cfg.dT_init * to_alpha / 4
    h = min(h, stops[0] - alpha)
    hist = []
    while len(hist) < 2:
        try:
            y_new, f_new = trapezoid_step(eqs, alpha, h, y, f, cfg, layout)
        except StepRejected:
            h *= 0.3
            stats["rejected"] += 1
            if h < h_min:
                raise FlowStalled(f"start-up step fell below dT_min at alpha = {alpha:.6g}")
            continue
        hist.append((alpha, y, f))
        alpha, y, f = alpha + h, y_new, f_new
        stats["accepted"] += 1
        if stops and abs(alpha - stops[0]) < 1e-14:
            if stops.pop(0) in rec_alphas:
                records.append(eqs.record(alpha, y, f))
                records[-1].T = requested.get(alpha, records[-1].T)
        if stops:
            h = min(h, stops[0] - alpha)
    _, y_prev, f_prev = hist[-1]
    h_prev = alpha - hist[-1][0]
    h = min(2 * h_prev, h_max)

    while stops:
        target = stops[0]
        h = min(h, h_max, 2.0 * h_prev)
        if alpha + h > target - 0.1 * h:
            h = target - alpha
        try:
            y_new, f_new, err = bdf2_step(eqs, alpha, h, h_prev, y, y_prev, f, f_prev, cfg, layout)
        except StepRejected as exc:
            stats["rejected"] += 1
            fac = 0.3 if not np.isfinite(exc.error) else max(0.3, 0.9 * (cfg.error_tol / exc.error) ** (1 / 3))
            h *= min(fac, 0.9)
            if h < h_min:
                raise FlowStalled(f"step fell below dT_min at T = {np.max(path.temperatures(alpha)):.6g}")
            continue
        stats["accepted"] += 1
        y_prev, f_prev, h_prev = y, f, h
        alpha, y, f = alpha + h, y_new, f_new
        if abs(alpha - target) < 1e-12:
            alpha = target
            stops.pop(0)
            if target in rec_alphas:
                rec = eqs.record(alpha, y, f)
                rec.T = requested.get(alpha, rec.T)
                records.append(rec)
                _check_record(rec, options)
        fac = min(2.0, max(0.3, 0.9 * (cfg.error_tol / max(err, 1e-12)) ** (1 / 3)))
        h = h_prev * fac
        if progress is not None:
            progress(alpha, path.temperatures(alpha), h_prev)
        log.debug("alpha=%.6f T=%s h=%.3g err=%.3g", alpha, path.temperatures(alpha), h_prev, err)

    stats["f_evals"] = eqs.n_evals
    stats["seconds"] = time.perf_counter() - t_start
    records.sort(key=lambda r: r.alpha)
    return FlowResult(params, grid, path, records, stats)


def _check_record(rec: FlowRecord, options: FlowOptions):
    if not options.check_cp:
        return
    from .observables import cp_trace_hermiticity
    chk = cp_trace_hermiticity(rec.Pi)
    norm = max(1.0, float(np.abs(rec.Pi).max()))
    if chk["choi_min"] < -1e-8 * norm:
        warnings.warn(f"propagator at T = {rec.T:.4g} is not completely positive "
                      f"(smallest Choi eigenvalue {chk['choi_min']:.3g})", NonPhysical, stacklevel=3)
    if chk["herm_err"] > 1e-8 * norm:
        warnings.warn(f"propagator at T = {rec.T:.4g} does not preserve hermiticity "
                      f"(error {chk['herm_err']:.3g})", NonPhysical, stacklevel=3)
