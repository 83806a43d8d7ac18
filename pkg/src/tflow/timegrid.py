"""Uniform time grids, convolutions, the Dyson solver and ordered double integrals.

All quadratures are trapezoidal.  Functions of one time difference are stored
as arrays whose first axis is the grid index; the packed variants operate on
:class:`tflow.blocks.SOp` data and broadcast over any further batch axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.sparse

from .algebra import IDENTITY, LDIM, ModelParams, propagator_infinity
from .blocks import SOp, product
from .errors import GridMismatch, SingularSolve

_WORKERS = None


def set_workers(n):
    """Cap the number of threads used by the FFT backend (``None`` = library default)."""
    global _WORKERS
    _WORKERS = n


@dataclass(frozen=True)
class TimeGrid:
    n_points: int
    dt: float

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 3:
            raise ValueError("a time grid needs at least 3 points")
        if not self.dt > 0 or not np.isfinite(self.dt):
            raise ValueError("dt must be positive")
        object.__setattr__(self, "n_points", int(self.n_points))
        object.__setattr__(self, "dt", float(self.dt))

    @classmethod
    def from_tmax(cls, t_max: float, n_points: int) -> "TimeGrid":
        return cls(n_points, t_max / (n_points - 1))

    @property
    def t_max(self) -> float:
        return (self.n_points - 1) * self.dt

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_points) * self.dt

    def coarsen(self, n_coarse: int) -> tuple:
        """Strided subgrid with about ``n_coarse`` points; returns ``(grid, stride)``.

        The stride must divide ``n_points - 1``; the divisor giving the count
        closest to ``n_coarse`` wins.  Raises ``ValueError`` when the best
        count is more than twice off (for instance when ``n_points - 1`` is prime).
        """
        L = self.n_points - 1
        counts = [(abs(L // m + 1 - n_coarse), m) for m in range(1, L + 1) if L % m == 0 and L // m + 1 >= 3]
        if not counts:
            return TimeGrid(self.n_points, self.dt), 1
        _, m = min(counts)
        n = L // m + 1
        if n > 2 * n_coarse or 2 * n < n_coarse:
            raise ValueError(f"no strided subgrid of {self.n_points} points has about {n_coarse} points; "
                             f"choose n_points - 1 with a divisor near {L / max(n_coarse - 1, 1):.3g}")
        return TimeGrid(n, self.dt * m), m


@dataclass(frozen=True)
class GridFn1:
    """Superoperator-valued function of one time difference, values ``(N, 16, 16)``."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (self.grid.n_points, LDIM, LDIM):
            raise GridMismatch(f"values of shape {v.shape} do not match {self.grid}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function has non-finite entries")
        object.__setattr__(self, "values", v)

    def __getitem__(self, k):
        return self.values[k]

    def __add__(self, other):
        _same(self, other)
        return GridFn1(self.grid, self.values + other.values)

    def __sub__(self, other):
        _same(self, other)
        return GridFn1(self.grid, self.values - other.values)

    def __mul__(self, c):
        return GridFn1(self.grid, self.values * c)

    __rmul__ = __mul__

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.n_points, LDIM, LDIM), dtype=complex))


@dataclass(frozen=True)
class GridFn2:
    """Samples on two time-difference axes of a (possibly coarse) grid."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def interpolate(self, a, b):
        """Bilinear interpolation at time differences ``(a, b)``."""
        return bilinear(self.values, self.grid.dt, a, b)


@dataclass(frozen=True)
class GridFn3:
    """Samples on three time-difference axes of a (possibly coarse) grid."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def interpolate(self, a, b, c):
        return trilinear(self.values, self.grid.dt, a, b, c)


def _same(A, B):
    if A.grid != B.grid:
        raise GridMismatch(f"{A.grid} vs {B.grid}")


# ----------------------------------------------------------------- convolution

def _fft_conv(X, Y, mul, dt, axis):
    """Trapezoidal ``C_k = int_0^{t_k} X(t_k - s) Y(s) ds`` along ``axis``."""
    n = X.shape[axis]
    if Y.shape[axis] != n:
        raise GridMismatch("convolution axes differ in length")
    nfft = scipy.fft.next_fast_len(2 * n - 1)
    Xf = scipy.fft.fft(X, nfft, axis=axis, workers=_WORKERS)
    Yf = scipy.fft.fft(Y, nfft, axis=axis, workers=_WORKERS)
    C = scipy.fft.ifft(mul(Xf, Yf), axis=axis, workers=_WORKERS)
    C = np.take(C, np.arange(n), axis=axis)
    X0 = np.take(X, [0], axis=axis)
    Y0 = np.take(Y, [0], axis=axis)
    C -= 0.5 * (mul(X, Y0) + mul(X0, Y))
    return dt * C


def convolve(A: GridFn1, B: GridFn1) -> GridFn1:
    """``(A * B)(t) = int_0^t A(t - s) B(s) ds`` on the common grid."""
    _same(A, B)
    return GridFn1(A.grid, _fft_conv(A.values, B.values, np.matmul, A.grid.dt, 0))


def conv_dense(A, B, dt):
    return _fft_conv(A, B, np.matmul, dt, 0)


def conv_packed(A: SOp, B: SOp, dt, axis=0) -> SOp:
    """Packed convolution along batch ``axis``; the other batch axes broadcast."""
    def mul(x, y):
        return product(x, A.shift, y, B.shift)
    return SOp(_fft_conv(A.data, B.data, mul, dt, axis), (A.shift[0] + B.shift[0], A.shift[1] + B.shift[1]))


def conv_packed_sum(terms, dt, axis=0, cache=None) -> SOp:
    """``sum_i conv_packed(A_i, B_i)`` with one inverse transform.

    Forward transforms are memoized in ``cache`` (keyed by array identity),
    so operands shared between calls are transformed once.
    """
    shifts = {add for add in ((a.shift[0] + b.shift[0], a.shift[1] + b.shift[1]) for a, b in terms)}
    if len(shifts) != 1:
        raise ValueError("terms of a convolution sum must share their shift")
    cache = {} if cache is None else cache
    n = terms[0][0].data.shape[axis]
    nfft = scipy.fft.next_fast_len(2 * n - 1)

    def spec(A):
        key = id(A.data)
        if key not in cache:
            cache[key] = (A.data, scipy.fft.fft(A.data, nfft, axis=axis, workers=_WORKERS))
        return cache[key][1]

    acc = None
    corr = None
    for A, B in terms:
        if A.data.shape[axis] != n or B.data.shape[axis] != n:
            raise GridMismatch("convolution axes differ in length")
        f = product(spec(A), A.shift, spec(B), B.shift)
        acc = f if acc is None else acc + f
        A0 = np.take(A.data, [0], axis=axis)
        B0 = np.take(B.data, [0], axis=axis)
        c = product(A.data, A.shift, B0, B.shift) + product(A0, A.shift, B.data, B.shift)
        corr = c if corr is None else corr + c
    C = np.take(scipy.fft.ifft(acc, axis=axis, workers=_WORKERS), np.arange(n), axis=axis)
    return SOp(dt * (C - 0.5 * corr), shifts.pop())


# ----------------------------------------------------------------- Dyson

def dyson_from_k(K, pi_inf, dt):
    """Solve ``Pi = Pi_inf + K * Pi`` by implicit trapezoidal time stepping."""
    n = K.shape[0]
    Pi = np.empty_like(pi_inf)
    Pi[0] = IDENTITY
    A = IDENTITY - 0.5 * dt * K[0]
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularSolve(f"Dyson step matrix has condition number {cond:.3g}")
    lu = scipy.linalg.lu_factor(A)
    # horizontal stack of K_{n-1}, ..., K_1 and vertical stack of Pi_1, ..., Pi_{n-1}
    KH = np.ascontiguousarray(K[:0:-1].transpose(1, 0, 2).reshape(LDIM, -1))
    PV = np.zeros(((n - 1) * LDIM, LDIM), dtype=complex)
    for k in range(1, n):
        rhs = pi_inf[k] + 0.5 * dt * K[k] @ Pi[0]
        if k > 1:
            rhs = rhs + dt * KH[:, (n - k) * LDIM:(n - 1) * LDIM] @ PV[:(k - 1) * LDIM]
        Pi[k] = scipy.linalg.lu_solve(lu, rhs)
        PV[(k - 1) * LDIM:k * LDIM] = Pi[k]
    return Pi


def dyson(minus_i_sigma, pi_inf, dt):
    """Propagator from ``-i Sigma`` on a grid (arrays ``(N, 16, 16)``)."""
    return dyson_from_k(conv_dense(pi_inf, minus_i_sigma, dt), pi_inf, dt)


def solve_dyson(Sigma: GridFn1, params: ModelParams, grid: TimeGrid | None = None) -> GridFn1:
    """``Pi = Pi_inf - i Pi_inf * Sigma * Pi`` solved on the grid of ``Sigma``."""
    if grid is not None and grid != Sigma.grid:
        raise GridMismatch("Sigma is sampled on a different grid")
    grid = Sigma.grid
    pi_inf = propagator_infinity(params, grid.t)
    return GridFn1(grid, dyson(-1j * Sigma.values, pi_inf, grid.dt))


def dPi_dT(Pi: GridFn1, dSigma_dT: GridFn1) -> GridFn1:
    """``-i Pi * dSigma * Pi``."""
    _same(Pi, dSigma_dT)
    dt = Pi.grid.dt
    inner = conv_dense(-1j * dSigma_dT.values, Pi.values, dt)
    return GridFn1(Pi.grid, conv_dense(Pi.values, inner, dt))


# ----------------------------------------------------------------- ordered integrals

def ordered_double_integral(body, t, s=0.0, n=129, kernel=None, kernel_residue=None):
    """``int_s^t dt1 int_s^t1 dt2 [kernel(t - t2)] body(t1, t2)`` by trapezoidal rules.

    ``body(t1, t2)`` must accept broadcast arrays and may return trailing
    matrix axes.  With a ``kernel`` that behaves as ``kernel_residue/x`` at
    ``x -> 0`` the ``t1`` integral is done first, so that the inner integral
    ``int_{t2}^t dt1 body`` vanishes linearly and the product stays finite;
    its value at ``t2 = t`` is the limit ``kernel_residue * body(t, t)``.
    """
    if t < s:
        raise ValueError("need t >= s")
    if t == s:
        return 0.0 * np.asarray(body(np.float64(t), np.float64(s)))
    x = np.linspace(s, t, n)
    h = x[1] - x[0]
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    t1, t2 = np.meshgrid(x, x, indexing="ij")
    vals = np.asarray(body(t1, t2))
    extra = vals.shape[2:]
    if kernel is None:
        # inner over t2 <= t1, then outer over t1
        inner = np.empty((n,) + extra, dtype=vals.dtype)
        for i in range(n):
            inner[i] = _trapz(vals[i, :i + 1], h)
        return np.tensordot(w, inner, axes=(0, 0))
    inner = np.empty((n,) + extra, dtype=complex)
    for j in range(n):
        inner[j] = _trapz(vals[j:, j], h)     # int_{t2}^t dt1
    k = np.zeros(n, dtype=complex)
    k[:-1] = kernel(t - x[:-1])
    hvals = k.reshape((n,) + (1,) * len(extra)) * inner
    hvals[-1] = kernel_residue * vals[-1, -1]
    return np.tensordot(w, hvals, axes=(0, 0))


def _trapz(y, h):
    if len(y) < 2:
        return np.zeros(y.shape[1:], dtype=complex if np.iscomplexobj(y) else float)
    return h * (y.sum(axis=0) - 0.5 * (y[0] + y[-1]))


def antidiagonal_matrix(n, m=None):
    """Sparse ``S`` with ``(S h.ravel())[k] = sum_{x + w = k} h[x, w]`` for ``h`` of shape ``(n, m)``."""
    m = n if m is None else m
    x, w = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    k = (x + w).ravel()
    keep = k < n
    return scipy.sparse.csr_matrix((np.ones(keep.sum()), (k[keep], np.flatnonzero(keep))),
                                   shape=(n, n * m))


def triangle_sum(h, dt):
    """``Out[k] = dt * sum_{x=0}^{k} w_x h[x, k-x]`` with trapezoid end weights.

    ``h`` has shape ``(n, n, ...)``; the weight is halved at ``x = 0`` and
    ``x = k`` and ``Out[0] = 0``.
    """
    n = h.shape[0]
    flat = h.reshape(n * n, -1)
    S = antidiagonal_matrix(n)
    out = S @ flat
    idx = np.arange(n)
    out = out.reshape((n,) + h.shape[2:])
    out -= 0.5 * (h[0, idx] + h[idx, 0])
    return dt * out


def richardson_zero(f1, f2, f3):
    """Quadratic extrapolation to ``t = 0`` from samples at ``dt, 2 dt, 3 dt``."""
    return 3 * f1 - 3 * f2 + f3


# ----------------------------------------------------------------- interpolation

def interp_matrix(n_fine, stride):
    """Linear interpolation from a strided subgrid onto the fine grid, shape ``(n_fine, n_coarse)``."""
    n_coarse = (n_fine - 1) // stride + 1
    W = np.zeros((n_fine, n_coarse))
    i = np.arange(n_fine)
    lo = np.minimum(i // stride, n_coarse - 2) if n_coarse > 1 else np.zeros_like(i)
    frac = (i - lo * stride) / stride
    W[i, lo] = 1 - frac
    if n_coarse > 1:
        W[i, lo + 1] += frac
    return W


def _lin(dt, x, n):
    x = np.asarray(x, dtype=float) / dt
    if np.any(x < -1e-12) or np.any(x > n - 1 + 1e-9):
        raise ValueError("interpolation point outside the grid")
    i = np.clip(np.floor(x).astype(int), 0, n - 2)
    return i, np.clip(x - i, 0.0, 1.0)


def bilinear(values, dt, a, b):
    n = values.shape[0]
    i, fa = _lin(dt, a, n)
    j, fb = _lin(dt, b, values.shape[1])
    out = 0
    for di, wa in ((0, 1 - fa), (1, fa)):
        for dj, wb in ((0, 1 - fb), (1, fb)):
            w = np.asarray(wa * wb)
            out = out + w.reshape(w.shape + (1,) * (values.ndim - 2)) * values[i + di, j + dj]
    return out


def trilinear(values, dt, a, b, c):
    idx = [_lin(dt, x, values.shape[k]) for k, x in enumerate((a, b, c))]
    out = 0
    for d0 in (0, 1):
        for d1 in (0, 1):
            for d2 in (0, 1):
                w = 1.0
                for (i, f), d in zip(idx, (d0, d1, d2)):
                    w = w * (f if d else 1 - f)
                w = np.asarray(w)
                out = out + w.reshape(w.shape + (1,) * (values.ndim - 3)) * values[
                    idx[0][0] + d0, idx[1][0] + d1, idx[2][0] + d2]
    return out
