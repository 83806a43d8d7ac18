"""Sector-packed superoperators.

Every superoperator appearing in the flow changes the charge difference and the
spin difference of a Liouville basis element by a fixed amount (its *shift*):
propagators and kernels have shift ``(0, 0)``, a superfermion ``G^p_{eta sigma}``
has shift ``(eta, eta*sigma)``.  Only the entries compatible with the shift can be
nonzero (36 of 256 for shift zero, 24 for a single superfermion), so products are
evaluated on packed nonzeros with precomputed index triplets.

:class:`SOp` stores ``data`` of shape ``batch + (nnz,)`` and broadcasts over the
batch axes like numpy arrays of matrices.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import _core
from .algebra import LDIM, ORBITALS, sector_labels

_LABELS = sector_labels()
_CHUNK = 1 << 22


def orbital_shift(k: int) -> tuple:
    o = ORBITALS[k]
    return (o.eta, o.eta * o.sigma)


def add_shift(a, b):
    return (a[0] + b[0], a[1] + b[1])


@lru_cache(maxsize=None)
def pattern(shift):
    """Row and column indices of the admissible entries, row-major order."""
    d = _LABELS[:, None, :] - _LABELS[None, :, :]
    mask = (d[..., 0] == shift[0]) & (d[..., 1] == shift[1])
    rows, cols = np.nonzero(mask)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def nnz(shift) -> int:
    return pattern(shift)[0].size


@lru_cache(maxsize=None)
def product_table(sx, sy):
    """Triplets ``(q, r)`` grouped by output slot for ``X @ Y``."""
    sz = add_shift(sx, sy)
    xr, xc = pattern(sx)
    yr, yc = pattern(sy)
    zr, zc = pattern(sz)
    zpos = {(i, j): p for p, (i, j) in enumerate(zip(zr, zc))}
    ycol = {}
    for r, (k, j) in enumerate(zip(yr, yc)):
        ycol.setdefault(k, []).append((r, j))
    trip = []
    for q, (i, k) in enumerate(zip(xr, xc)):
        for r, j in ycol.get(k, ()):
            trip.append((zpos[(i, j)], q, r))
    trip.sort()
    trip = np.array(trip, dtype=np.intp).reshape(-1, 3)
    p, q, r = trip.T.copy()
    slots, starts = np.unique(p, return_index=True)
    return sz, q, r, p, slots, starts, zr.size


class SOp:
    """Packed superoperator (or batch of them) with a definite sector shift."""

    __slots__ = ("data", "shift")
    __array_priority__ = 100

    def __init__(self, data, shift):
        self.data = data
        self.shift = tuple(shift)

    @classmethod
    def from_dense(cls, M, shift):
        rows, cols = pattern(tuple(shift))
        return cls(np.ascontiguousarray(np.asarray(M)[..., rows, cols], dtype=complex), shift)

    @classmethod
    def zeros(cls, batch, shift):
        return cls(np.zeros(tuple(batch) + (nnz(shift),), dtype=complex), shift)

    def dense(self):
        rows, cols = pattern(self.shift)
        out = np.zeros(self.data.shape[:-1] + (LDIM, LDIM), dtype=complex)
        out[..., rows, cols] = self.data
        return out

    @property
    def batch(self):
        return self.data.shape[:-1]

    def __getitem__(self, key):
        if not isinstance(key, tuple):
            key = (key,)
        return SOp(self.data[key + (slice(None),)], self.shift)

    def __matmul__(self, other):
        if not isinstance(other, SOp):
            return NotImplemented
        return SOp(product(self.data, self.shift, other.data, other.shift), add_shift(self.shift, other.shift))

    def _check(self, other):
        if self.shift != other.shift:
            raise ValueError(f"shift mismatch {self.shift} vs {other.shift}")

    def __add__(self, other):
        self._check(other)
        return SOp(self.data + other.data, self.shift)

    def __sub__(self, other):
        self._check(other)
        return SOp(self.data - other.data, self.shift)

    def __neg__(self):
        return SOp(-self.data, self.shift)

    def __mul__(self, c):
        """Multiply by a scalar or by an array broadcasting over the batch axes."""
        c = np.asarray(c)
        return SOp(self.data * (c[..., None] if c.ndim else c), self.shift)

    __rmul__ = __mul__

    def conj_free_copy(self):
        return SOp(self.data.copy(), self.shift)


def product(X, sx, Y, sy):
    """Packed ``X @ Y`` broadcasting over leading axes."""
    sz, q, r, p, slots, starts, nz = product_table(tuple(sx), tuple(sy))
    batch = np.broadcast_shapes(X.shape[:-1], Y.shape[:-1])
    out = np.zeros(batch + (nz,), dtype=complex)
    if q.size == 0:
        return out
    X = np.broadcast_to(X, batch + X.shape[-1:])
    Y = np.broadcast_to(Y, batch + Y.shape[-1:])
    if _core.HAVE_COMPILED and len(batch) <= 3:
        shape3 = (1,) * (3 - len(batch)) + batch
        _core.packed_product(X.reshape(shape3 + X.shape[-1:]), Y.reshape(shape3 + Y.shape[-1:]),
                             q, r, p, out.reshape(shape3 + (nz,)))
        return out
    _numpy_product(X, Y, q, r, slots, starts, out)
    return out


def _numpy_product(X, Y, q, r, slots, starts, out):
    size = int(np.prod(out.shape[:-1])) * q.size
    if size <= _CHUNK or out.ndim == 1:
        out[..., slots] = np.add.reduceat(X[..., q] * Y[..., r], starts, axis=-1)
        return
    n0 = out.shape[0]
    step = max(1, (n0 * _CHUNK) // size)
    for lo in range(0, n0, step):
        _numpy_product(X[lo:lo + step], Y[lo:lo + step], q, r, slots, starts, out[lo:lo + step])
