"""Fock-Liouville space of the single-level Anderson dot.

Conventions fixed once for the whole package:

* Fock basis ``[|0>, |up>, |dn>, |up dn>]`` with ``|up dn> = d_up^+ d_dn^+ |0>``.
* Operators are vectorized by column stacking, ``vec(X)[i + 4 j] = X[i, j]``,
  so that ``vec(A X B) = (B^T kron A) vec(X)``.
* A superoperator is a 16x16 complex matrix acting on such vectors.

Superfermions are ordered as in :data:`ORBITALS`; array-valued helpers such as
:data:`G_PLUS` follow that order and :data:`BAR` maps an orbital position to
the position of its bar-conjugate.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
import scipy.linalg

UP = 1
DOWN = -1
DIM = 4
LDIM = DIM * DIM


@dataclass(frozen=True)
class SpinOrbital:
    """Multi-index ``1 = (eta, sigma)``; ``eta=+1`` creates, ``eta=-1`` annihilates."""

    eta: int
    sigma: int

    def __post_init__(self):
        if self.eta not in (1, -1) or self.sigma not in (UP, DOWN):
            raise ValueError(f"invalid spin orbital ({self.eta}, {self.sigma})")

    def bar(self) -> "SpinOrbital":
        return SpinOrbital(-self.eta, self.sigma)

    def __str__(self):
        return ("+" if self.eta > 0 else "-") + ("up" if self.sigma == UP else "dn")


ORBITALS = (
    SpinOrbital(1, UP),
    SpinOrbital(-1, UP),
    SpinOrbital(1, DOWN),
    SpinOrbital(-1, DOWN),
)
BAR = np.array([ORBITALS.index(o.bar()) for o in ORBITALS])
ETA = np.array([o.eta for o in ORBITALS])
SIGMA = np.array([o.sigma for o in ORBITALS])


@dataclass(frozen=True)
class Reservoir:
    """Wide-band lead with spin-resolved rates, chemical potential and temperature."""

    gamma_up: float
    gamma_down: float
    mu: float = 0.0
    T: float = 0.0

    def gamma(self, sigma: int) -> float:
        return self.gamma_up if sigma == UP else self.gamma_down


@dataclass(frozen=True)
class ModelParams:
    """Dot level ``epsilon``, interaction ``U`` and the attached reservoirs."""

    epsilon: float
    U: float
    reservoirs: tuple

    def __post_init__(self):
        object.__setattr__(self, "reservoirs", tuple(self.reservoirs))
        if not self.reservoirs:
            raise ValueError("at least one reservoir is required")
        for res in self.reservoirs:
            if res.gamma_up < 0 or res.gamma_down < 0:
                raise ValueError("tunnel rates must be non-negative")
            if res.T < 0:
                raise ValueError("temperatures must be non-negative")

    @classmethod
    def symmetric(cls, epsilon, U, gamma=1.0, bias=0.0, T=0.0):
        """Two leads with rate ``gamma`` each and ``mu_L = -mu_R = bias/2``."""
        return cls(epsilon, U, (Reservoir(gamma, gamma, bias / 2, T),
                                Reservoir(gamma, gamma, -bias / 2, T)))

    @property
    def n_reservoirs(self) -> int:
        return len(self.reservoirs)

    def gamma_total(self, sigma: int) -> float:
        return sum(res.gamma(sigma) for res in self.reservoirs)

    def is_uniform(self) -> bool:
        g = self.reservoirs[0].gamma_up
        return all(res.gamma_up == g and res.gamma_down == g for res in self.reservoirs)

    def spin_symmetric(self) -> bool:
        return all(res.gamma_up == res.gamma_down for res in self.reservoirs)

    def energy_scale(self) -> float:
        """Largest of total rate, ``|epsilon|``, ``U`` and ``|mu_r|``."""
        scales = [max(self.gamma_total(UP), self.gamma_total(DOWN)), abs(self.epsilon), abs(self.U)]
        scales += [abs(res.mu) for res in self.reservoirs]
        return max(scales)

    def with_temperature(self, T) -> "ModelParams":
        """Copy with reservoir temperatures replaced (scalar or one per reservoir)."""
        temps = np.broadcast_to(np.asarray(T, dtype=float), (self.n_reservoirs,))
        res = tuple(Reservoir(r.gamma_up, r.gamma_down, r.mu, float(t))
                    for r, t in zip(self.reservoirs, temps))
        return ModelParams(self.epsilon, self.U, res)


def vectorize(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X)
    return np.swapaxes(X, -1, -2).reshape(X.shape[:-2] + (LDIM,))


def devectorize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    return np.swapaxes(v.reshape(v.shape[:-1] + (DIM, DIM)), -1, -2)


TRACE = vectorize(np.eye(DIM, dtype=complex))
IDENTITY = np.eye(LDIM, dtype=complex)


def left(A):
    """Superoperator of ``X -> A X``."""
    return np.kron(np.eye(DIM), A)


def right(B):
    """Superoperator of ``X -> X B``."""
    return np.kron(np.asarray(B).T, np.eye(DIM))


@lru_cache(maxsize=None)
def _fock():
    d_up = np.zeros((DIM, DIM))
    d_dn = np.zeros((DIM, DIM))
    d_up[0, 1] = 1.0   # |up> -> |0>
    d_up[2, 3] = 1.0   # |up dn> -> |dn>
    d_dn[0, 2] = 1.0   # |dn> -> |0>
    d_dn[1, 3] = -1.0  # |up dn> -> -|up>
    parity = np.diag([1.0, -1.0, -1.0, 1.0])
    return d_up, d_dn, parity


def dot_operators():
    """Return ``({(eta, sigma): d_{eta sigma}}, parity)`` in the Fock basis."""
    d_up, d_dn, parity = _fock()
    ops = {(1, UP): d_up.T.copy(), (-1, UP): d_up.copy(),
           (1, DOWN): d_dn.T.copy(), (-1, DOWN): d_dn.copy()}
    return ops, parity.copy()


def number_operators():
    d_up, d_dn, _ = _fock()
    return d_up.T @ d_up, d_dn.T @ d_dn


@lru_cache(maxsize=None)
def _superfermion(p: int, eta: int, sigma: int) -> np.ndarray:
    ops, parity = dot_operators()
    d = ops[(eta, sigma)]
    G = (left(d) + p * left(parity) @ right(parity @ d)) / np.sqrt(2.0)
    G = G.astype(complex)
    G.setflags(write=False)
    return G


def superfermion(p: int, idx: SpinOrbital) -> np.ndarray:
    """Matrix of ``G^p_{eta sigma}``."""
    if p not in (1, -1):
        raise ValueError("p must be +1 or -1")
    return _superfermion(p, idx.eta, idx.sigma)


G_PLUS = np.array([superfermion(1, o) for o in ORBITALS])
G_MINUS = np.array([superfermion(-1, o) for o in ORBITALS])
G_PLUS.setflags(write=False)
G_MINUS.setflags(write=False)


def hamiltonian(params: ModelParams) -> np.ndarray:
    n_up, n_dn = number_operators()
    return params.epsilon * (n_up + n_dn) + params.U * n_up @ n_dn


def liouvillian(params: ModelParams) -> np.ndarray:
    """``L = [H, .]`` built directly from the commutator."""
    H = hamiltonian(params)
    return (left(H) - right(H)).astype(complex)


def liouvillian_superfermion(params: ModelParams) -> np.ndarray:
    """``L`` assembled from superfermion strings (independent construction)."""
    eps, U = params.epsilon, params.U
    L = np.zeros((LDIM, LDIM), dtype=complex)
    for o in ORBITALS:
        ob = o.bar()
        sb = SpinOrbital(o.eta, -o.sigma)
        sbb = SpinOrbital(-o.eta, -o.sigma)
        P = lambda x: superfermion(1, x)
        M = lambda x: superfermion(-1, x)
        L += -o.eta * (eps + U / 2) * P(ob) @ M(o)
        L += U / 2 * (P(ob) @ M(o) @ M(sbb) @ M(sb) + P(sbb) @ P(sb) @ P(ob) @ M(o))
    return L


class Generators(NamedTuple):
    sigma_inf: np.ndarray
    l_inf: np.ndarray
    sigma_i_inf: tuple


def renormalized_generators(params: ModelParams) -> Generators:
    """Time-local infinite-temperature parts of the kernel and current kernels."""
    minus_i_sigma = np.zeros((LDIM, LDIM), dtype=complex)
    sigma_i = []
    for res in params.reservoirs:
        minus_i_sigma_r = np.zeros((LDIM, LDIM), dtype=complex)
        for k, o in enumerate(ORBITALS):
            g = res.gamma(o.sigma)
            minus_i_sigma += -0.5 * g * G_PLUS[k] @ G_MINUS[BAR[k]]
            minus_i_sigma_r += -0.25 * o.eta * g * G_MINUS[k] @ G_MINUS[BAR[k]]
        sigma_i.append(1j * minus_i_sigma_r)
    sigma_inf = 1j * minus_i_sigma
    return Generators(sigma_inf, liouvillian(params) + sigma_inf, tuple(sigma_i))


def propagator_infinity(params: ModelParams, t) -> np.ndarray:
    """``Pi_inf(t) = exp(-i L_inf t)`` for a scalar time or an array of times."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    l_inf = renormalized_generators(params).l_inf
    return scipy.linalg.expm(-1j * l_inf * t[..., None, None])


def apply_superop(S: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return devectorize(S @ vectorize(rho))


def trace_functional(X: np.ndarray) -> complex:
    return complex(np.trace(X))


def hermiticity_error(S: np.ndarray) -> float:
    """``max |S(X^+) - S(X)^+|`` over the basis, i.e. ``K conj(S) K - S``."""
    S4 = np.asarray(S).reshape(S.shape[:-2] + (DIM, DIM, DIM, DIM))
    # vec index i + 4 j  ->  reshape (j, i); transposition swaps the pairs
    swapped = np.conj(S4.swapaxes(-1, -2).swapaxes(-3, -4))
    return float(np.max(np.abs(swapped - S4))) if S4.size else 0.0


def density_matrix(spec) -> np.ndarray:
    """Named preset (``empty``, ``up``, ``down``, ``double``, ``mixed``) or an explicit matrix."""
    presets = {"empty": 0, "up": 1, "down": 2, "double": 3}
    if isinstance(spec, str):
        if spec == "mixed":
            return np.eye(DIM, dtype=complex) / DIM
        if spec not in presets:
            raise ValueError(f"unknown state preset {spec!r}")
        rho = np.zeros((DIM, DIM), dtype=complex)
        rho[presets[spec], presets[spec]] = 1.0
        return rho
    rho = np.asarray(spec, dtype=complex)
    if rho.shape != (DIM, DIM):
        raise ValueError("density matrix must be 4x4")
    return rho


def check_density(rho: np.ndarray, tol: float = 1e-10) -> None:
    """Raise ``ValueError`` unless ``rho`` is Hermitian, unit-trace and PSD."""
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise ValueError("density matrix does not have unit trace")
    if np.linalg.eigvalsh((rho + rho.conj().T) / 2).min() < -tol:
        raise ValueError("density matrix is not positive semidefinite")


def sector_labels() -> np.ndarray:
    """Charge and spin difference ``(q, 2m)`` of every Liouville basis element."""
    n_up, n_dn = number_operators()
    nu, nd = np.diag(n_up), np.diag(n_dn)
    lab = np.empty((LDIM, 2), dtype=int)
    for j in range(DIM):
        for i in range(DIM):
            lab[i + DIM * j] = (nu[i] + nd[i] - nu[j] - nd[j], nu[i] - nd[i] - nu[j] + nd[j])
    return lab

