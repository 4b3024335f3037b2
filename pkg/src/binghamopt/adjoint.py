"""Approximate (and regularised) adjoint of the Bingham state equation."""
from __future__ import annotations

import numpy as np

from . import kernels
from .bingham import (
    EQUALITY_RTOL,
    FlowBCs,
    MixedField,
    PhysicsParams,
    TaylorHood,
    _as_vector,
    assemble_residual,
    evaluate,
    frobenius,
    linearized_matrix,
)
from .errors import PreconditionError
from .fem import SparseSystem, apply_dirichlet, assemble_vector, solve_constrained, solve_linear


def d_tilde(eps_y, eps_dir, params: PhysicsParams):
    """Linear approximation of the nonsmooth stress derivative.

    ``g (eps : eps_dir) eps / ||eps||^3`` where ``g < gamma ||eps||`` and zero
    elsewhere, including the equality set.
    """
    eps_y = np.asarray(eps_y, dtype=float)
    eps_dir = np.asarray(eps_dir, dtype=float)
    nrm = frobenius(eps_y)
    s = params.gamma * nrm
    act = (s > params.g) & ~(np.abs(s - params.g) <= EQUALITY_RTOL * params.g)
    safe = np.where(nrm > 0, nrm, 1.0)
    proj = np.sum(eps_y * eps_dir, axis=(-2, -1))
    coef = np.where(act, params.g * proj / safe**3, 0.0)
    return np.asarray(coef)[..., None, None] * eps_y


def objective_gradient(mesh, state):
    """``int mu grad v : grad y`` over the mixed test space divided by ``mu``."""
    sp = TaylorHood.on(mesh)
    pd = evaluate(mesh, _as_vector(state))
    g = pd.geom
    z = np.zeros_like(pd.pq)
    local = kernels.residual(g.G2, g.N2, g.N1, g.wdet, pd.gy, np.zeros_like(pd.yq), z, z)
    return assemble_vector(local, sp.cell_dofs, sp.ndof)


def assemble_adjoint(
    mesh, state, params: PhysicsParams, regularized=False, *, tol=1e-6, check=True
) -> SparseSystem:
    """Adjoint system: transposed linearised state operator, objective load.

    Raises
    ------
    PreconditionError
        If the state residual exceeds ``10 * tol``.
    """
    sp = TaylorHood.on(mesh)
    x = _as_vector(state)
    if check:
        rn = float(np.linalg.norm(assemble_residual(mesh, x, params, regularized)))
        if rn > 10 * tol:
            raise PreconditionError(
                f"state residual {rn:.3e} exceeds {10 * tol:.1e}; solve the state first"
            )
    A = linearized_matrix(mesh, x, params, regularized).T.tocsr()
    b = -params.mu * objective_gradient(mesh, x)
    b[sp.V.dim :] = 0.0
    dofs = sp.dirichlet_velocity_dofs
    return SparseSystem(A, b, dofs, np.zeros(len(dofs)))


def solve_adjoint(mesh, state, params: PhysicsParams, regularized=False, **kw) -> MixedField:
    system = assemble_adjoint(mesh, state, params, regularized, **kw)
    return MixedField.from_vector(solve_constrained(system), mesh)


def adjoint_consistency_check(
    mesh, state, adjoint, params: PhysicsParams, probe, *, auglag=None, bcs=None, h=1e-7, state_tol=1e-9
):
    """Relative error of the adjoint-based derivative against central differences.

    ``probe`` is a nodal deformation field of shape ``(n_vertices, 2)``.  The
    reduced functional is the regularised augmented Lagrangian; states at the
    perturbed meshes are re-solved from ``state`` to ``state_tol``.

    Returns ``(rel_error, predicted, finite_difference)``.
    """
    from .optimizer import AugLagState, evaluate_L_A
    from .shape_gradient import assemble_shape_derivative
    from .bingham import solve_state
    from .mesh import deform_mesh

    bcs = bcs or FlowBCs()
    probe = np.asarray(probe, dtype=float).reshape(mesh.n_vertices, 2)
    if auglag is None:
        auglag = AugLagState()
    dL = assemble_shape_derivative(mesh, state, adjoint, params, auglag, regularized=True)
    pred = dL.apply(probe)
    scale = np.abs(probe).max()
    if scale == 0:
        return 0.0, pred, 0.0
    step = h / scale
    vals = []
    for t in (step, -step):
        mt = deform_mesh(mesh, probe, t) if t > 0 else deform_mesh(mesh, -probe, -t)
        st, _ = solve_state(mt, params, bcs, state, regularized=True, tol=state_tol)
        vals.append(evaluate_L_A(mt, st, auglag, params, regularized=True))
    fd = (vals[0] - vals[1]) / (2 * step)
    return abs(pred - fd) / max(1.0, abs(fd)), pred, fd
