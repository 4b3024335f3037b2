"""Deformation equation: linear elasticity with a harmonic stiffness field."""
from __future__ import annotations

import numpy as np

from .errors import SingularSystemError
from .fem import (
    CellGeometry,
    FunctionSpace,
    SparseSystem,
    apply_dirichlet,
    assemble,
    p1_mass_local,
    p1_stiffness_local,
    solve_constrained,
    solve_linear,
    vector_block,
)

SHAPE_STIFFNESS = 5.0
OUTER_STIFFNESS = 1.0


def _outer_vertices(mesh):
    topo = mesh.topology
    shape = set(topo.tagged_vertices("shape").tolist())
    outer = np.unique(topo.facets[topo.facet_tags != "shape"].ravel())
    return np.array([v for v in outer if v not in shape], dtype=np.int64)


def interpolate_mu_hat(mesh, shape_value=SHAPE_STIFFNESS, outer_value=OUTER_STIFFNESS):
    """Harmonic extension of ``shape_value`` on the shape, ``outer_value`` elsewhere.

    Returns P1 nodal values.
    """
    P1 = FunctionSpace.on(mesh, "P1")
    K = assemble(p1_stiffness_local, mesh, P1, P1, degree=1)
    shape = mesh.topology.tagged_vertices("shape")
    outer = _outer_vertices(mesh)
    dofs = np.concatenate([shape, outer])
    vals = np.concatenate([np.full(len(shape), shape_value), np.full(len(outer), outer_value)])
    system = SparseSystem(K, np.zeros(P1.dim), dofs, vals)
    return solve_constrained(system)


def elasticity_matrix(mesh, mu_hat):
    """``a(V, W) = int 2 mu_hat eps(V) : eps(W)`` on P1-vector2 (blocked dofs)."""
    PV = FunctionSpace.on(mesh, "P1-vector2")
    mu_cell = np.asarray(mu_hat)[mesh.cells].mean(axis=1)  # exact mean of the P1 field

    def kernel(geom):
        G = geom.G1
        w = 2.0 * mu_cell * geom.area
        nc = len(G)
        out = np.zeros((nc, 6, 6))
        GG = np.einsum("caj,cbj->cab", G, G)
        for i in range(2):
            for k in range(2):
                blk = 0.5 * np.einsum("ca,cb->cab", G[:, :, k], G[:, :, i])
                if i == k:
                    blk = blk + 0.5 * GG
                out[:, 3 * i : 3 * i + 3, 3 * k : 3 * k + 3] = w[:, None, None] * blk
        return out

    return assemble(kernel, mesh, PV, PV, degree=1)


def clamped_dofs(mesh):
    nv = mesh.n_vertices
    outer = _outer_vertices(mesh)
    return np.concatenate([outer, nv + outer])


def solve_deformation(mesh, dL, mu_hat=None):
    """Solve ``a(V, W) = -dL[W]`` for all ``W`` vanishing on the outer boundary.

    ``dL`` is a :class:`~binghamopt.shape_gradient.ShapeDerivative` or a raw
    covector.  Returns the nodal field ``V`` with shape ``(nv, 2)``.
    """
    if mu_hat is None:
        mu_hat = interpolate_mu_hat(mesh)
    cov = np.asarray(getattr(dL, "covector", dL), dtype=float)
    A = elasticity_matrix(mesh, mu_hat)
    dofs = clamped_dofs(mesh)
    try:
        v = solve_constrained(SparseSystem(A, -cov, dofs, np.zeros(len(dofs))))
    except SingularSystemError as exc:
        raise SingularSystemError(f"deformation system is singular: {exc}") from None
    return v.reshape(2, -1).T


def h1_norm(mesh, V):
    """``(v^T (M + K) v)^(1/2)`` with P1 mass and stiffness per component."""
    PV = FunctionSpace.on(mesh, "P1-vector2")
    geom = CellGeometry.on(mesh, 1)
    local = vector_block(p1_mass_local(geom) + p1_stiffness_local(geom))
    G = assemble(lambda _g: local, mesh, PV, PV, degree=1)
    v = np.asarray(V, dtype=float)
    v = v.T.ravel() if v.ndim == 2 else v
    return float(np.sqrt(max(v @ (G @ v), 0.0)))
