"""Effective vertices on the coarse vertex grid.

The regular part of ``G_1`` is ``R_1 = R^lead_1 + dR_1``.  The lead diagram
``R^lead_1(a, b) = sum_2 gamma_2(a+b) G+_2 Pi(a) G+_1 Pi(b) G+_{2bar}`` is
rebuilt from the current propagator whenever it is needed (its flow is the
slashed-contraction and slashed-propagator diagrams), so only ``dR`` is
integrated.  Its right-hand side collects

* the derivative of ``G+_2 Pi [G_1 - G+_1] Pi G_{2bar}`` style diagrams in
  which at least one of the two effective vertices is regular (terms ii-iv),
* the two insertions of ``G_12`` with a slashed contraction or a slashed
  ``G_12`` (terms B and C).

``G_12`` lives on the simplex ``a + b + c <= t_max`` of the vertex grid.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .algebra import BAR, ETA, G_PLUS
from .blocks import SOp, add_shift
from .timegrid import conv_packed, triangle_sum


@lru_cache(maxsize=None)
def simplex(n):
    """Index arrays ``(i, j, k)`` of the points with ``i + j + k <= n - 1``."""
    i, j, k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    keep = (i + j + k) <= n - 1
    out = (i[keep], j[keep], k[keep])
    for a in out:
        a.setflags(write=False)
    return out


def scatter(vals, n):
    i, j, k = simplex(n)
    cube = np.zeros((n, n, n) + vals.shape[1:], dtype=complex)
    cube[i, j, k] = vals
    return cube


def pair_shift(ctx, p):
    return add_shift(ctx.shift[p // 4], ctx.shift[p % 4])


def g12_origin(ctx, k1, k2):
    """Symmetric limit of the first ``G_12`` diagram at ``a = b = c = 0`` (dense)."""
    L = ctx.l_inf_dense
    acc = np.zeros((16, 16), dtype=complex)
    for r in range(ctx.n_res):
        for k3 in range(4):
            c = -1j * ctx.rates[r, k3] / np.pi
            G3, G1, G2, G3b = G_PLUS[k3], G_PLUS[k1], G_PLUS[k2], G_PLUS[BAR[k3]]
            acc += c * (-1j * ETA[k3] * ctx.mus[r] * G3 @ G1 @ G2 @ G3b
                        - 1j / 3 * (G3 @ L @ G1 @ G2 @ G3b + G3 @ G1 @ L @ G2 @ G3b
                                    + G3 @ G1 @ G2 @ L @ G3b))
    return -acc


def g12_lead(ctx, Pv: SOp, gam_ext, origin=True):
    """``-sum_3 g_3(a+b+c) G+_3 Pi(a) G+_1 Pi(b) G+_2 Pi(c) G+_{3bar}`` on the simplex.

    ``gam_ext`` is a contraction (or its path derivative) sampled at
    ``0, h, 2h, ...`` (at least ``n`` points).  Returns 16 packed arrays in
    pair order ``4*k1 + k2``.
    """
    n = Pv.data.shape[0]
    si, sj, sk = simplex(n)
    ssum = si + sj + sk
    Y = [Pv @ ctx.gp[k2] for k2 in range(4)]
    Z = [Pv @ ctx.gp[BAR[k3]] for k3 in range(4)]
    out = []
    for k1 in range(4):
        X = [ctx.gp[k3] @ Pv @ ctx.gp[k1] for k3 in range(4)]
        for k2 in range(4):
            acc = None
            for k3 in range(4):
                term = (X[k3][si] @ Y[k2][sj]) @ Z[k3][sk]
                term = term * (-gam_ext[k3][ssum])
                acc = term if acc is None else acc + term
            data = acc.data
            data[0] = (SOp.from_dense(g12_origin(ctx, k1, k2), acc.shift).data if origin else 0)
            out.append(data)
    return out


def _shear_weights(n, dt):
    w = np.full((n, n), dt)
    idx = np.arange(n)
    w[0, :] -= dt / 2
    w[idx, idx] -= dt / 2
    return np.triu(w)          # zero where b < x


def hankel_sum(g, E: SOp, dt, batched):
    """``Y[a, b] = sum_{x<=b} w_{x,b} g(a + x) E[(a,) x, b - x]`` (trapezoid in ``x``).

    ``g`` is sampled on ``2n - 1`` points; ``E`` has axes ``(x, w)`` or,
    with ``batched``, ``(a, x, w)``.
    """
    data = E.data
    n = data.shape[-2]
    shear = np.zeros_like(data)
    for x in range(n):
        shear[..., x, x:, :] = data[..., x, :n - x, :]
    shear *= _shear_weights(n, dt)[:, :, None]
    G = g[np.add.outer(np.arange(n), np.arange(n))]
    if batched:
        Y = np.einsum("ax,axbz->abz", G, shear)
    else:
        Y = np.tensordot(G, shear, axes=(1, 0))
    return SOp(Y, E.shift)


def conv0(P: SOp, X: SOp, dt):
    """Convolution of a one-time function ``P`` with ``X`` along ``X``'s first axis."""
    extra = X.data.ndim - 2
    return conv_packed(SOp(P.data.reshape(P.data.shape[:1] + (1,) * extra + P.data.shape[1:]), P.shift),
                       X, dt, axis=0)


def conv1_right(X: SOp, P: SOp, dt):
    """``int_0^b X(a, b - v) P(v) dv`` along the second axis."""
    return conv_packed(X, SOp(P.data[None], P.shift), dt, axis=1)


def delta_rhs(ctx, Pv, dPv, gam, dgam, R, dR, g12, dg12, include_rr=True):
    """Path derivative of ``dR_1`` for all four components on the vertex grid.

    ``R``/``dR`` are the full regular parts and their derivatives (lists of
    packed ``(n, n)`` arrays), ``gam``/``dgam`` the contraction and its path
    derivative on ``2n - 1`` points, ``g12``/``dg12`` the two-point vertex and
    its derivative on the simplex.
    """
    h = ctx.vgrid.dt
    n = Pv.data.shape[0]
    c = ctx.residue()
    idx2 = np.add.outer(np.arange(n), np.arange(n))
    half = np.full(n, h / 2)
    half[0] = 0.0
    A = [conv0(Pv, R[k], h) for k in range(4)]
    dA = [conv0(dPv, R[k], h) + conv0(Pv, dR[k], h) for k in range(4)]
    out = []
    cubes = [conv0(Pv, SOp(scatter(g12[p], n), pair_shift(ctx, p)), h) for p in range(16)]
    dcubes_raw = [scatter(dg12[p], n) for p in range(16)]
    dcubes = [conv0(Pv, SOp(dcubes_raw[p], pair_shift(ctx, p)), h) for p in range(16)]
    for k1 in range(4):
        M = conv1_right(A[k1], Pv, h)
        dM = conv1_right(dA[k1], Pv, h) + conv1_right(A[k1], dPv, h)
        acc = SOp.zeros((n, n), ctx.shift[k1])
        for k2 in range(4):
            kb = BAR[k2]
            G2, G2b = ctx.gp[k2], ctx.gp[kb]
            # (ii): both lines around a regular G_1
            acc = acc + G2 @ (M * dgam[k2][idx2] + dM * gam[k2][idx2]) @ G2b
            # (iii): bare G_1, regular G_2bar
            Q = G2 @ Pv @ ctx.gp[k1]
            dQ = G2 @ dPv @ ctx.gp[k1]
            Y1 = hankel_sum(dgam[k2], A[kb], h, False) + hankel_sum(gam[k2], dA[kb], h, False)
            Y1.data[0] += c[k2] * half[:, None] * dR[kb].data[0]
            Y2 = hankel_sum(gam[k2], A[kb], h, False)
            acc = acc + Q[:, None] @ Y1 + dQ[:, None] @ Y2
            # (iv): both effective vertices regular
            if include_rr:
                left = SOp(A[k1].data[:, :, None], A[k1].shift)
                dleft = SOp(dA[k1].data[:, :, None], dA[k1].shift)
                right = SOp(A[kb].data[None], A[kb].shift)
                dright = SOp(dA[kb].data[None], dA[kb].shift)
                P = conv_packed(left, right, h, axis=1)
                dP = conv_packed(dleft, right, h, axis=1) + conv_packed(left, dright, h, axis=1)
                acc = acc + G2 @ (hankel_sum(dgam[k2], P, h, True) + hankel_sum(gam[k2], dP, h, True))
            # B: G_12 with the 2bar line latest
            p = 4 * kb + k1
            K, dK = cubes[p], dcubes[p]
            hB = K.data * dgam[k2][:n, None, None, None] + dK.data * gam[k2][:n, None, None, None]
            hB[0] = c[k2] * dcubes_raw[p][0]
            acc = acc - G2 @ SOp(triangle_sum(hB, h), K.shift)
            # C: G_12 with the 2bar line after the uncontracted one
            p = 4 * k1 + kb
            L, dL = cubes[p], dcubes[p]
            acc = acc + G2 @ (hankel_sum(dgam[k2], L, h, True) + hankel_sum(gam[k2], dL, h, True))
        out.append(acc)
    return out
