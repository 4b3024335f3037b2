"""Cell kernels for the Taylor-Hood Bingham forms.

Each kernel exists as a numba loop (``*_nb``) and a vectorised numpy version
(``*_np``).  The public names dispatch on :data:`binghamopt._accel.USE_NUMBA`.

Local mixed ordering (15 entries per cell): ``[ux(6), uy(6), p(3)]``.

Pointwise inputs are sampled at the quadrature points of every cell:

``alpha``
    effective viscosity ``2 mu + g gamma / M`` with ``M`` the (smoothed) max.
``kappa``
    coefficient of the rank-one correction ``-kappa (eps : eps_hat) eps``.
"""
import numpy as np

from . import _accel
from ._accel import njit


def tangent_np(G2, N2, N1, wdet, alpha, kappa, eps, gy, yq, rho):
    """Local linearised Bingham-Stokes matrices, shape (nc, 15, 15)."""
    nc = G2.shape[0]
    K = np.zeros((nc, 15, 15))
    wa = wdet * alpha
    GG = np.einsum("cq,cqaj,cqbj->cab", wa, G2, G2)
    # E[c, q, i, a] = sum_j eps_ij d_j phi_a
    E = np.einsum("cqij,cqaj->cqia", eps, G2)
    wk = wdet * kappa
    for i in range(2):
        for k in range(2):
            blk = 0.5 * np.einsum("cq,cqa,cqb->cab", wa, G2[..., k], G2[..., i])
            if i == k:
                blk = blk + 0.5 * GG
            blk = blk - np.einsum("cq,cqa,cqb->cab", wk, E[:, :, i, :], E[:, :, k, :])
            if rho != 0.0:
                blk = blk + rho * np.einsum("cq,qa,qb,cq->cab", wdet, N2, N2, gy[..., i, k])
                if i == k:
                    adv = np.einsum("cqj,cqbj->cqb", yq, G2)
                    blk = blk + rho * np.einsum("cq,qa,cqb->cab", wdet, N2, adv)
            K[:, 6 * i : 6 * i + 6, 6 * k : 6 * k + 6] = blk
        B = np.einsum("cq,cqa,qb->cab", wdet, G2[..., i], N1)
        K[:, 6 * i : 6 * i + 6, 12:15] = -B
        K[:, 12:15, 6 * i : 6 * i + 6] = B.transpose(0, 2, 1)
    return K


@njit
def tangent_nb(G2, N2, N1, wdet, alpha, kappa, eps, gy, yq, rho):
    nc, nq = wdet.shape
    K = np.zeros((nc, 15, 15))
    E = np.zeros((2, 6))
    adv = np.zeros(6)
    for c in range(nc):
        for q in range(nq):
            w = wdet[c, q]
            wa = w * alpha[c, q]
            wk = w * kappa[c, q]
            for i in range(2):
                for a in range(6):
                    E[i, a] = eps[c, q, i, 0] * G2[c, q, a, 0] + eps[c, q, i, 1] * G2[c, q, a, 1]
            for b in range(6):
                adv[b] = yq[c, q, 0] * G2[c, q, b, 0] + yq[c, q, 1] * G2[c, q, b, 1]
            for a in range(6):
                for b in range(6):
                    gg = G2[c, q, a, 0] * G2[c, q, b, 0] + G2[c, q, a, 1] * G2[c, q, b, 1]
                    nn = N2[q, a] * N2[q, b]
                    for i in range(2):
                        for k in range(2):
                            v = 0.5 * wa * G2[c, q, a, k] * G2[c, q, b, i]
                            v -= wk * E[i, a] * E[k, b]
                            if i == k:
                                v += 0.5 * wa * gg
                            if rho != 0.0:
                                v += rho * w * nn * gy[c, q, i, k]
                                if i == k:
                                    v += rho * w * N2[q, a] * adv[b]
                            K[c, 6 * i + a, 6 * k + b] += v
                for r in range(3):
                    for i in range(2):
                        v = w * G2[c, q, a, i] * N1[q, r]
                        K[c, 6 * i + a, 12 + r] -= v
                        K[c, 12 + r, 6 * i + a] += v
    return K


def residual_np(G2, N2, N1, wdet, T, body, pq, divy):
    """Local residual vectors, shape (nc, 15).

    ``T`` is the symmetric stress-like tensor paired with ``eps(v)``, ``body``
    the vector paired with ``v`` and ``pq``/``divy`` the pressure and velocity
    divergence at the quadrature points.
    """
    nc = G2.shape[0]
    r = np.zeros((nc, 15))
    for i in range(2):
        r[:, 6 * i : 6 * i + 6] = (
            np.einsum("cq,cqj,cqaj->ca", wdet, T[:, :, i, :], G2)
            + np.einsum("cq,cq,qa->ca", wdet, body[..., i], N2)
            - np.einsum("cq,cq,cqa->ca", wdet, pq, G2[..., i])
        )
    r[:, 12:] = np.einsum("cq,cq,qb->cb", wdet, divy, N1)
    return r


@njit
def residual_nb(G2, N2, N1, wdet, T, body, pq, divy):
    nc, nq = wdet.shape
    r = np.zeros((nc, 15))
    for c in range(nc):
        for q in range(nq):
            w = wdet[c, q]
            for a in range(6):
                for i in range(2):
                    v = T[c, q, i, 0] * G2[c, q, a, 0] + T[c, q, i, 1] * G2[c, q, a, 1]
                    v += body[c, q, i] * N2[q, a] - pq[c, q] * G2[c, q, a, i]
                    r[c, 6 * i + a] += w * v
            for b in range(3):
                r[c, 12 + b] += w * divy[c, q] * N1[q, b]
    return r


def tangent(*args, use_numba=None):
    fast = _accel.USE_NUMBA if use_numba is None else use_numba
    return (tangent_nb if fast else tangent_np)(*args)


def residual(*args, use_numba=None):
    fast = _accel.USE_NUMBA if use_numba is None else use_numba
    return (residual_nb if fast else residual_np)(*args)


def covector_p1(G1, wdet, Q):
    """Cell covectors ``sum_q w sum_j Q_kj d_j psi_b`` over P1-vector2 dofs.

    Returns shape (nc, 6) in the order ``[x-comp(3), y-comp(3)]``.
    """
    out = np.einsum("cq,cqkj,cbj->ckb", wdet, Q, G1)
    return out.reshape(len(wdet), 6)
