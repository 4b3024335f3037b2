"""Eulerian derivative of the augmented Lagrangian as a P1 covector.

The volume part is written per quadrature point as ``Q : grad V`` so that a
deformation basis field ``W = psi_b e_k`` receives ``sum_q w sum_j Q_kj
d_j psi_b``.  Deformation dofs are blocked ``[Vx (nv), Vy (nv)]``.

The shape normal ``n`` is the outward normal of the fluid domain, i.e. it
points into the obstacle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .bingham import (
    EQUALITY_RTOL,
    PhysicsParams,
    _as_vector,
    assemble_residual,
    branch_coefficients,
    evaluate,
    frobenius,
    max_delta,
)
from .errors import PreconditionError
from .fem import CellGeometry, assemble_vector, FunctionSpace
from .mesh import constraint_vector, volume, barycenter

_GAUSS2 = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


def _sym_product(grad_y, grad_V):
    gv = np.einsum("...ik,...kj->...ij", grad_y, grad_V)
    return gv + np.swapaxes(gv, -1, -2)


def q_tilde_kernel(eps_y, grad_y, grad_V, params: PhysicsParams):
    """Linearised q-term: nonzero only where ``g < gamma ||eps||`` strictly."""
    eps_y = np.asarray(eps_y, dtype=float)
    nrm = frobenius(eps_y)
    s = params.gamma * nrm
    act = (s > params.g) & ~(np.abs(s - params.g) <= EQUALITY_RTOL * params.g)
    safe = np.where(nrm > 0, nrm, 1.0)
    proj = np.sum(eps_y * _sym_product(grad_y, grad_V), axis=(-2, -1))
    coef = np.where(act, params.g * proj / (2 * safe**3), 0.0)
    return np.asarray(coef)[..., None, None] * eps_y


def q_delta_kernel(eps_y, grad_y, grad_V, params: PhysicsParams):
    """Smoothed-max counterpart of :func:`q_tilde_kernel`."""
    eps_y = np.asarray(eps_y, dtype=float)
    nrm = frobenius(eps_y)
    _, kappa = branch_coefficients(nrm, params, "regularized")
    proj = np.sum(eps_y * _sym_product(grad_y, grad_V), axis=(-2, -1))
    return np.asarray(0.5 * kappa * proj)[..., None, None] * eps_y


@dataclass
class ShapeDerivative:
    """Covector over the P1-vector2 deformation dofs (blocked components)."""

    covector: np.ndarray
    volume_coef: float = 0.0
    barycenter_coef: np.ndarray = field(default_factory=lambda: np.zeros(2))
    perimeter_coef: float = 0.0
    bulk: np.ndarray = None
    geometric: np.ndarray = None

    def apply(self, W):
        """Directional value for a nodal field ``W`` of shape ``(nv, 2)``."""
        W = np.asarray(W, dtype=float)
        flat = W.T.ravel() if W.ndim == 2 else W
        return float(self.covector @ flat)

    def as_nodal(self):
        return self.covector.reshape(2, -1).T


def bulk_integrand(mesh, state, adjoint, params: PhysicsParams, regularized=False):
    """Per-quadrature-point tensor ``Q`` with volume term ``int Q : grad V``."""
    ps = evaluate(mesh, _as_vector(state))
    pa = evaluate(mesh, _as_vector(adjoint))
    model = "regularized" if regularized else "semismooth"
    s = params.gamma * ps.nrm
    M = max_delta(s, params) if regularized else np.maximum(params.g, s)
    alpha = 2 * params.mu + params.g * params.gamma / M
    _, kappa = branch_coefficients(ps.nrm, params, model)
    gy, gt = ps.gy, pa.gy
    gyT = np.swapaxes(gy, -1, -2)
    gtT = np.swapaxes(gt, -1, -2)
    eps, eps_t = ps.eps, pa.eps
    e_et = np.einsum("cqij,cqij->cq", eps, eps_t)
    a = alpha[..., None, None]
    Q = -params.mu * np.einsum("cqki,cqij->cqkj", gyT, gy)
    Q -= a * np.einsum("cqki,cqij->cqkj", gyT, eps_t)
    Q -= a * np.einsum("cqki,cqij->cqkj", gtT, eps)
    Q += (kappa * e_et)[..., None, None] * np.einsum("cqki,cqij->cqkj", gyT, eps)
    if params.rho != 0.0:
        gyT_yt = np.einsum("cqik,cqi->cqk", gy, pa.yq)
        Q -= params.rho * np.einsum("cqk,cqj->cqkj", gyT_yt, ps.yq)
    Q += ps.pq[..., None, None] * gtT
    Q -= pa.pq[..., None, None] * gyT
    conv = np.einsum("cqij,cqj,cqi->cq", gy, ps.yq, pa.yq)
    S = (
        0.5 * params.mu * np.einsum("cqij,cqij->cq", gy, gy)
        + alpha * e_et
        + params.rho * conv
        - ps.pq * pa.divy
        - pa.yq @ np.asarray(params.f)
        + pa.pq * ps.divy
    )
    Q[..., 0, 0] += S
    Q[..., 1, 1] += S
    return Q, ps.geom


def geometric_derivative_terms(shape, mesh, auglag):
    """Constraint (multiplier and penalty) part of the shape derivative.

    Returns ``(covector, (a_vol, a_bary, a_peri))`` where the coefficients
    multiply the volume, barycenter and perimeter boundary integrals.
    """
    nv = mesh.n_vertices
    c = constraint_vector(shape, mesh, auglag.targets)
    lam, nu = np.asarray(auglag.lam, dtype=float), auglag.nu
    vol = volume(shape, mesh)
    bary = barycenter(shape, mesh)
    a_vol = lam[0] - nu * c[0]
    a_bary = (nu * c[1:3] - lam[1:3]) / vol
    a_peri = lam[3] - nu * c[3]
    normals, lengths = shape.edge_normals(mesh)
    X = mesh.vertices
    geom = CellGeometry.on(mesh, 1)
    out = np.zeros((2, nv))
    for e, ((i, j), cell) in enumerate(zip(shape.edges, shape.edge_cells)):
        n, L = normals[e], lengths[e]
        xi, xj = X[i], X[j]
        for s in _GAUSS2:
            x = (1 - s) * xi + s * xj
            w = 0.5 * L
            phi = {i: 1 - s, j: s}
            scal = a_vol + a_bary @ (bary - x)
            for v, ph in phi.items():
                out[:, v] += w * scal * ph * n
        G = geom.G1[cell]  # (3, 2) gradients of the cell's hat functions
        for loc, v in enumerate(mesh.cells[cell]):
            gn = G[loc] @ n
            out[:, v] += a_peri * L * (n * gn - G[loc])
    return out.ravel(), (float(a_vol), a_bary, float(a_peri))


def assemble_shape_derivative(
    mesh, state, adjoint, params: PhysicsParams, auglag, regularized=False, *, check_tol=None
) -> ShapeDerivative:
    """Approximate (or, regularised, exact discrete-level) shape derivative.

    ``check_tol`` enables the stale-state guard: a residual above
    ``10 * check_tol`` raises :class:`PreconditionError`.
    """
    if check_tol is not None:
        rn = float(np.linalg.norm(assemble_residual(mesh, state, params, regularized)))
        if rn > 10 * check_tol:
            raise PreconditionError(f"state residual {rn:.3e} exceeds {10 * check_tol:.1e}")
    Q, geom = bulk_integrand(mesh, state, adjoint, params, regularized)
    space = FunctionSpace.on(mesh, "P1-vector2")
    local = kernels.covector_p1(geom.G1, geom.wdet, Q)
    bulk = assemble_vector(local, space.cell_dofs, space.dim)
    if mesh.has_shape():
        geo, (av, ab, ap) = geometric_derivative_terms(mesh.shape_boundary(), mesh, auglag)
    else:
        geo, (av, ab, ap) = np.zeros_like(bulk), (0.0, np.zeros(2), 0.0)
    return ShapeDerivative(bulk + geo, av, ab, ap, bulk=bulk, geometric=geo)
