"""Reservoir contraction functions and their temperature derivatives.

``gamma_minus`` is the only temperature-dependent ingredient of the theory.
Array versions (``*_grid``) return one row per spin orbital in the order of
:data:`tflow.algebra.ORBITALS`; the value at ``t = 0`` of the singular
function is reported as 0 there and must never be used directly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .algebra import ORBITALS, ModelParams, SpinOrbital
from .errors import SingularTime

_OVERFLOW = 700.0


def _thermal(t, T):
    """``T / sinh(pi t T)`` with the ``T = 0`` branch ``1/(pi t)``; ``t > 0``."""
    t = np.asarray(t, dtype=float)
    if T == 0:
        return 1.0 / (np.pi * t)
    x = np.pi * t * T
    out = np.zeros_like(x)
    ok = x <= _OVERFLOW
    out[ok] = T / np.sinh(x[ok])
    return out


def _thermal_dT(t, T):
    """``d/dT [T / sinh(pi t T)]``, finite at ``t = 0`` (value 0) and zero at ``T = 0``."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    if T == 0:
        return out
    x = np.pi * t * T
    small = x < 1e-3
    mid = (~small) & (x <= _OVERFLOW)
    # (1 - x coth x)/sinh x, series for small x avoids cancellation
    xs = x[small]
    out[small] = -xs / 3 + 7 * xs**3 / 90
    xm = x[mid]
    out[mid] = (1.0 - xm / np.tanh(xm)) / np.sinh(xm)
    return out


def gamma_minus(gamma: float, mu: float, T: float, eta: int, t) -> np.ndarray:
    """``-i Gamma T/sinh(pi t T) exp(-i eta mu t)`` for ``t > 0``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise SingularTime("gamma_minus is singular at t = 0")
    if T < 0:
        raise ValueError("temperature must be non-negative")
    return -1j * gamma * _thermal(t, T) * np.exp(-1j * eta * mu * t)


def gamma_minus_dT(gamma: float, mu: float, T: float, eta: int, t) -> np.ndarray:
    """Temperature derivative of :func:`gamma_minus`; regular for all ``t >= 0``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    return -1j * gamma * _thermal_dT(t, T) * np.exp(-1j * eta * mu * t)


def contraction(params: ModelParams, r: int, idx: SpinOrbital, t, T=None):
    """Per-reservoir contraction ``gamma^-_{eta sigma r}(t)`` at the reservoir's (or given) temperature."""
    res = params.reservoirs[r]
    return gamma_minus(res.gamma(idx.sigma), res.mu, res.T if T is None else T, idx.eta, t)


def gamma_grid(params: ModelParams, t: np.ndarray, temps=None, reservoir=None) -> np.ndarray:
    """Contractions on a grid, shape ``(4, len(t))``; the ``t = 0`` entry is set to 0.

    ``reservoir=None`` sums over all reservoirs; ``temps`` overrides reservoir
    temperatures.
    """
    t = np.asarray(t, dtype=float)
    pos = t > 0
    out = np.zeros((len(ORBITALS), t.size), dtype=complex)
    rs = range(params.n_reservoirs) if reservoir is None else [reservoir]
    for r in rs:
        res = params.reservoirs[r]
        T = res.T if temps is None else temps[r]
        for k, o in enumerate(ORBITALS):
            out[k, pos] += gamma_minus(res.gamma(o.sigma), res.mu, T, o.eta, t[pos])
    return out


def gamma_dT_grid(params: ModelParams, t: np.ndarray, weights: Sequence[float], temps=None,
                  reservoir=None) -> np.ndarray:
    """``sum_r w_r dgamma_r/dT_r`` on a grid, shape ``(4, len(t))``.

    With ``w_r = dT_r/dalpha`` this is the derivative along a temperature path.
    """
    t = np.asarray(t, dtype=float)
    out = np.zeros((len(ORBITALS), t.size), dtype=complex)
    rs = range(params.n_reservoirs) if reservoir is None else [reservoir]
    for r in rs:
        if weights[r] == 0:
            continue
        res = params.reservoirs[r]
        T = res.T if temps is None else temps[r]
        for k, o in enumerate(ORBITALS):
            out[k] += weights[r] * gamma_minus_dT(res.gamma(o.sigma), res.mu, T, o.eta, t)
    return out


def gamma_singular_limit(params: ModelParams, reservoir=None) -> np.ndarray:
    """Coefficient ``c`` with ``gamma^-_1(t) ~ c/t`` as ``t -> 0`` for every orbital."""
    rs = range(params.n_reservoirs) if reservoir is None else [reservoir]
    return np.array([sum(-1j * params.reservoirs[r].gamma(o.sigma) / np.pi for r in rs)
                     for o in ORBITALS])


@dataclass(frozen=True)
class TemperaturePath:
    """Piecewise-linear map ``alpha in [0, 1] -> (T_1, ..., T_n)``.

    ``nodes`` are increasing alpha values with ``nodes[0] = 0`` and
    ``nodes[-1] = 1``; ``temps[k]`` holds the reservoir temperatures at
    ``nodes[k]``.  Each reservoir temperature must be non-increasing.
    """

    nodes: tuple
    temps: tuple

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        temps = np.asarray(self.temps, dtype=float)
        if temps.ndim != 2 or temps.shape[0] != nodes.size or nodes.size < 2:
            raise ValueError("path needs one temperature vector per node")
        if nodes[0] != 0 or nodes[-1] != 1 or np.any(np.diff(nodes) <= 0):
            raise ValueError("path nodes must increase from 0 to 1")
        if np.any(temps < 0):
            raise ValueError("path temperatures must be non-negative")
        if np.any(np.diff(temps, axis=0) > 0):
            raise ValueError("path temperatures must be non-increasing")
        object.__setattr__(self, "nodes", tuple(nodes))
        object.__setattr__(self, "temps", tuple(map(tuple, temps)))

    @classmethod
    def linear(cls, T_start, T_end=0.0, n_reservoirs=2):
        """Simultaneous cooling of all reservoirs from ``T_start`` to ``T_end``."""
        return cls((0.0, 1.0), ((T_start,) * n_reservoirs, (T_end,) * n_reservoirs))

    @classmethod
    def sequential(cls, T_start: Sequence[float], T_end: Sequence[float]):
        """Cool reservoir 0 first, then reservoir 1, and so on."""
        n = len(T_start)
        nodes = np.linspace(0, 1, n + 1)
        temps = [list(T_start)]
        for r in range(n):
            nxt = list(temps[-1])
            nxt[r] = T_end[r]
            temps.append(nxt)
        return cls(tuple(nodes), tuple(map(tuple, temps)))

    @property
    def n_reservoirs(self) -> int:
        return len(self.temps[0])

    def _segment(self, alpha):
        if not 0 <= alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        k = int(np.searchsorted(self.nodes, alpha, side="right")) - 1
        return min(k, len(self.nodes) - 2)

    def temperatures(self, alpha: float) -> np.ndarray:
        k = self._segment(alpha)
        a0, a1 = self.nodes[k], self.nodes[k + 1]
        w = (alpha - a0) / (a1 - a0)
        return (1 - w) * np.asarray(self.temps[k]) + w * np.asarray(self.temps[k + 1])

    def velocity(self, alpha: float) -> np.ndarray:
        """``dT_r/dalpha`` (one-sided from the right at nodes, from the left at 1)."""
        k = self._segment(alpha)
        return (np.asarray(self.temps[k + 1]) - np.asarray(self.temps[k])) / (
            self.nodes[k + 1] - self.nodes[k])


def gamma_path_derivative(params: ModelParams, path: TemperaturePath, alpha: float,
                          idx: SpinOrbital, t) -> np.ndarray:
    """``d gamma^-_1(t) / d alpha = sum_r (dT_r/dalpha) dgamma_r/dT_r``."""
    temps = path.temperatures(alpha)
    vel = path.velocity(alpha)
    total = 0.0
    for r, res in enumerate(params.reservoirs):
        if vel[r] != 0:
            total = total + vel[r] * gamma_minus_dT(res.gamma(idx.sigma), res.mu, temps[r],
                                                    idx.eta, t)
    return np.asarray(total, dtype=complex) * np.ones_like(np.asarray(t, dtype=float))
