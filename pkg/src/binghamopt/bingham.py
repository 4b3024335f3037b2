"""Bingham state equation: constitutive terms, residual and Newton solver.

State unknowns are blocked into one coefficient vector
``x = [ux (nn), uy (nn), p (nv)]`` where ``nn`` counts P2 nodes and ``nv``
vertices.  All pointwise branch decisions are taken per quadrature point.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .errors import NonConvergenceError
from .fem import (
    CellGeometry,
    FunctionSpace,
    SparseSystem,
    SparsityPattern,
    apply_dirichlet,
    assemble_vector,
    solve_constrained,
    solve_linear,
)
from .mesh import TriangleMesh

logger = logging.getLogger(__name__)

EQUALITY_RTOL = 1e-12
DIRICHLET_TAGS = ("inflow", "walls", "shape")


# ---------------------------------------------------------------------------
# parameters and fields


@dataclass(frozen=True)
class PhysicsParams:
    """Fluid and regularisation constants (defaults follow the channel benchmark)."""

    mu: float = 1.0
    rho: float = 0.0
    g: float = 20.0
    gamma: float = 1e3
    delta: float = 0.1
    f: tuple = (0.0, 0.0)

    def __post_init__(self):
        for name in ("mu", "g", "gamma", "delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not self.rho >= 0:
            raise ValueError(f"rho must be nonnegative, got {self.rho!r}")
        f = tuple(float(v) for v in self.f)
        if len(f) != 2 or not all(np.isfinite(f)):
            raise ValueError("f must be a finite constant 2-vector")
        object.__setattr__(self, "f", f)


def parabolic_inflow(x):
    """Inflow profile ``(-4 x2 (x2 - 1), 0)``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    out[..., 0] = -4.0 * x[..., 1] * (x[..., 1] - 1.0)
    return out


@dataclass(frozen=True)
class FlowBCs:
    """Velocity boundary data: ``inflow`` profile, no-slip on walls and shape.

    The outflow is left natural (do-nothing).
    """

    inflow: Callable = parabolic_inflow

    def dirichlet(self, mesh: TriangleMesh):
        """Constrained mixed dofs and their values."""
        sp = TaylorHood.on(mesh)
        V = sp.V
        xy = V.node_coordinates(mesh)
        dofs, vals = [], []
        for tag in DIRICHLET_TAGS:
            nodes = V.boundary_nodes(tag)
            if tag == "inflow":
                u = np.asarray(self.inflow(xy[nodes]), dtype=float).reshape(len(nodes), 2)
            else:
                u = np.zeros((len(nodes), 2))
            for c in range(2):
                dofs.append(c * V.n_nodes + nodes)
                vals.append(u[:, c])
        return np.concatenate(dofs).astype(np.int64), np.concatenate(vals)


class TaylorHood:
    """P2-P1 mixed space bookkeeping shared by state, adjoint and outputs."""

    def __init__(self, mesh: TriangleMesh):
        self.V = FunctionSpace.on(mesh, "P2-vector2")
        self.Q = FunctionSpace.on(mesh, "P1")
        self.nn = self.V.n_nodes
        self.nv = self.Q.n_nodes
        self.ndof = self.V.dim + self.Q.dim
        self.cell_dofs = np.hstack([self.V.cell_dofs, self.V.dim + self.Q.cell_dofs])
        self.pattern = SparsityPattern(self.cell_dofs, self.cell_dofs, (self.ndof, self.ndof))
        self.velocity_dofs = np.arange(self.V.dim)
        bd = np.concatenate([self.V.boundary_dofs(t) for t in DIRICHLET_TAGS])
        self.dirichlet_velocity_dofs = np.unique(bd)

    @classmethod
    def on(cls, mesh):
        cache = mesh.topology.cache
        if "taylor-hood" not in cache:
            cache["taylor-hood"] = cls(mesh)
        return cache["taylor-hood"]


@dataclass
class MixedField:
    """Velocity (P2-vector2) and pressure (P1) coefficients."""

    velocity: np.ndarray
    pressure: np.ndarray

    @classmethod
    def zeros(cls, mesh):
        sp = TaylorHood.on(mesh)
        return cls(np.zeros(sp.V.dim), np.zeros(sp.Q.dim))

    @classmethod
    def from_vector(cls, x, mesh):
        nvel = TaylorHood.on(mesh).V.dim
        x = np.asarray(x, dtype=float)
        return cls(x[:nvel].copy(), x[nvel:].copy())

    def vector(self):
        return np.concatenate([self.velocity, self.pressure])

    def copy(self):
        return MixedField(self.velocity.copy(), self.pressure.copy())


@dataclass
class NewtonReport:
    """History of one Newton solve (one entry per linear solve)."""

    iterations: int = 0
    residual_norms: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    update_norms: list = field(default_factory=list)
    equality_points: list = field(default_factory=list)
    converged: bool = False
    regularized: bool = False


# ---------------------------------------------------------------------------
# pointwise constitutive terms


def strain(grad_y):
    """Symmetric gradient ``(grad_y + grad_y^T) / 2`` (batched over leading axes)."""
    gy = np.asarray(grad_y, dtype=float)
    return 0.5 * (gy + np.swapaxes(gy, -1, -2))


def frobenius(t):
    t = np.asarray(t, dtype=float)
    return np.sqrt(np.sum(t * t, axis=(-2, -1)))


def h_gamma(eps, params: PhysicsParams):
    """Regularised stress term ``g gamma eps / max(g, gamma ||eps||)``."""
    eps = np.asarray(eps, dtype=float)
    m = np.maximum(params.g, params.gamma * frobenius(eps))
    return params.g * params.gamma * eps / np.asarray(m)[..., None, None]


def max_delta(s, params: PhysicsParams):
    """C1 quadratic smoothing of ``max(g, s)`` with band half-width ``1/(2 delta)``."""
    g, d = params.g, params.delta
    s_arr = np.asarray(s, dtype=float)
    h = 0.5 / d
    mid = g + 0.5 * d * (s_arr - g + h) ** 2
    out = np.where(s_arr <= g - h, g, np.where(s_arr >= g + h, s_arr, mid))
    return float(out) if out.ndim == 0 else out


def max_delta_prime(s, params: PhysicsParams):
    """Derivative of :func:`max_delta` with respect to ``s``."""
    g, d = params.g, params.delta
    s_arr = np.asarray(s, dtype=float)
    h = 0.5 / d
    out = np.where(s_arr <= g - h, 0.0, np.where(s_arr >= g + h, 1.0, d * (s_arr - g + h)))
    return float(out) if out.ndim == 0 else out


def gateaux_max0(x, v):
    """Gateaux semiderivative of ``max(0, .)`` at ``x`` in direction ``v``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    out = np.where(x > 0, v, np.where(x < 0, 0.0, np.maximum(0.0, v)))
    return float(out) if out.ndim == 0 else out


def branch_coefficients(nrm, params: PhysicsParams, model: str):
    """Quadrature-point coefficients ``(alpha, kappa)`` of the linearised stress.

    The linearised stress in direction ``eps_hat`` is
    ``alpha eps_hat - kappa (eps : eps_hat) eps``.

    ``model``:

    ``"semismooth"``
        ``alpha`` with ``max``; ``kappa = g / ||eps||^3`` on the strict active
        set only.  The equality set contributes through the previous update.
    ``"regularized-newton"``
        ``alpha`` with ``max`` and ``kappa`` from the smoothed max, as used by
        the regularised Newton iteration.
    ``"regularized"``
        exact derivative of the smoothed stress (``alpha`` with ``max_delta``).
    """
    g, gam, d = params.g, params.gamma, params.delta
    nrm = np.asarray(nrm, dtype=float)
    s = gam * nrm
    safe = np.where(nrm > 0, nrm, 1.0)
    if model == "semismooth":
        eq = np.abs(s - g) <= EQUALITY_RTOL * g
        act = (s > g) & ~eq
        alpha = 2 * params.mu + g * gam / np.maximum(g, s)
        kappa = np.where(act, g / safe**3, 0.0)
        return alpha, kappa
    if model not in ("regularized-newton", "regularized"):
        raise ValueError(f"unknown model {model!r}")
    h = 0.5 / d
    md = max_delta(s, params)
    deep = s >= g + h
    mid = (np.abs(s - g) <= h) & ~deep
    kappa = np.where(
        deep, g / safe**3, np.where(mid, g * gam**2 * d * (s - g + h) / (md**2 * safe), 0.0)
    )
    denom = np.maximum(g, s) if model == "regularized-newton" else md
    return 2 * params.mu + g * gam / denom, kappa


# ---------------------------------------------------------------------------
# field evaluation


@dataclass
class PointData:
    geom: CellGeometry
    gy: np.ndarray
    eps: np.ndarray
    nrm: np.ndarray
    yq: np.ndarray
    pq: np.ndarray
    divy: np.ndarray


def evaluate(mesh, x, degree=4) -> PointData:
    """Velocity gradient, strain, velocity and pressure at quadrature points."""
    sp = TaylorHood.on(mesh)
    geom = CellGeometry.on(mesh, degree)
    x = np.asarray(x, dtype=float)
    loc = x[sp.cell_dofs]
    Y = loc[:, :12].reshape(-1, 2, 6)
    P = loc[:, 12:]
    gy = np.einsum("cia,cqaj->cqij", Y, geom.G2)
    eps = strain(gy)
    return PointData(
        geom=geom,
        gy=gy,
        eps=eps,
        nrm=frobenius(eps),
        yq=np.einsum("cia,qa->cqi", Y, geom.N2),
        pq=P @ geom.N1.T,
        divy=gy[..., 0, 0] + gy[..., 1, 1],
    )


def _as_vector(state):
    return state.vector() if isinstance(state, MixedField) else np.asarray(state, dtype=float)


def _tangent(mesh, pd: PointData, alpha, kappa, rho):
    g = pd.geom
    local = kernels.tangent(g.G2, g.N2, g.N1, g.wdet, alpha, kappa, pd.eps, pd.gy, pd.yq, float(rho))
    return TaylorHood.on(mesh).pattern.assemble(local)


def _stress_vector(mesh, pd: PointData, T):
    """Assemble ``int T : eps(v)`` over the mixed test space."""
    g = pd.geom
    z = np.zeros_like(pd.pq)
    local = kernels.residual(g.G2, g.N2, g.N1, g.wdet, T, np.zeros_like(pd.yq), z, z)
    sp = TaylorHood.on(mesh)
    return assemble_vector(local, sp.cell_dofs, sp.ndof)


def assemble_residual(mesh, state, params: PhysicsParams, regularized=False, *, point_data=None):
    """Weak residual over all test functions; Dirichlet velocity rows are zeroed."""
    sp = TaylorHood.on(mesh)
    pd = point_data if point_data is not None else evaluate(mesh, _as_vector(state))
    s = params.gamma * pd.nrm
    M = max_delta(s, params) if regularized else np.maximum(params.g, s)
    T = (2 * params.mu + params.g * params.gamma / M)[..., None, None] * pd.eps
    body = params.rho * np.einsum("cqij,cqj->cqi", pd.gy, pd.yq) - np.asarray(params.f)
    g = pd.geom
    local = kernels.residual(g.G2, g.N2, g.N1, g.wdet, T, body, pd.pq, pd.divy)
    R = assemble_vector(local, sp.cell_dofs, sp.ndof)
    R[sp.dirichlet_velocity_dofs] = 0.0
    return R


def _dirichlet_update(mesh, x, bcs):
    dofs, vals = bcs.dirichlet(mesh)
    return dofs, vals - x[dofs]


def assemble_newton_step(mesh, state, prev_update, params: PhysicsParams, bcs=None, *, point_data=None):
    """Semismooth Newton system for the update of the unregularised state.

    On the equality set the semiderivative of ``max`` is evaluated with the
    previous update, so that term moves to the right-hand side.
    """
    bcs = bcs or FlowBCs()
    x = _as_vector(state)
    pd = point_data if point_data is not None else evaluate(mesh, x)
    alpha, kappa = branch_coefficients(pd.nrm, params, "semismooth")
    A = _tangent(mesh, pd, alpha, kappa, params.rho)
    b = -assemble_residual(mesh, x, params, False, point_data=pd)
    eq = np.abs(params.gamma * pd.nrm - params.g) <= EQUALITY_RTOL * params.g
    if np.any(eq) and prev_update is not None:
        prev = evaluate(mesh, _as_vector(prev_update))
        proj = np.einsum("cqij,cqij->cq", pd.eps, prev.eps)
        safe = np.where(pd.nrm > 0, pd.nrm, 1.0)
        coef = np.where(eq, params.g * np.maximum(0.0, proj) / safe**3, 0.0)
        b += _stress_vector(mesh, pd, coef[..., None, None] * pd.eps)
    sp = TaylorHood.on(mesh)
    b[sp.dirichlet_velocity_dofs] = 0.0
    dofs, vals = _dirichlet_update(mesh, x, bcs)
    system = SparseSystem(A, b, dofs, vals)
    system.equality_points = int(np.count_nonzero(eq))
    return system


def assemble_newton_step_regularized(mesh, state, params: PhysicsParams, bcs=None, *, point_data=None):
    """Newton system of the smoothed-max state equation.

    The viscous coefficient of the update keeps the plain ``max`` as in the
    semismooth iteration, while the rank-one term and the residual use the
    smoothed max.
    """
    bcs = bcs or FlowBCs()
    x = _as_vector(state)
    pd = point_data if point_data is not None else evaluate(mesh, x)
    alpha, kappa = branch_coefficients(pd.nrm, params, "regularized-newton")
    A = _tangent(mesh, pd, alpha, kappa, params.rho)
    b = -assemble_residual(mesh, x, params, True, point_data=pd)
    dofs, vals = _dirichlet_update(mesh, x, bcs)
    system = SparseSystem(A, b, dofs, vals)
    system.equality_points = 0
    return system


def linearized_matrix(mesh, state, params: PhysicsParams, regularized=False):
    """State Jacobian with the linear approximation of the nonsmooth term.

    Unregularised: ``d`` replaced by ``d_tilde`` (zero on the equality set).
    Regularised: exact derivative of the smoothed residual.
    """
    pd = evaluate(mesh, _as_vector(state))
    model = "regularized" if regularized else "semismooth"
    alpha, kappa = branch_coefficients(pd.nrm, params, model)
    return _tangent(mesh, pd, alpha, kappa, params.rho)


# ---------------------------------------------------------------------------
# solves


def solve_stokes_initial(mesh, params: PhysicsParams, bcs=None) -> MixedField:
    """Linear Stokes solve (viscous, pressure, divergence and force terms)."""
    bcs = bcs or FlowBCs()
    sp = TaylorHood.on(mesh)
    pd = evaluate(mesh, np.zeros(sp.ndof))
    alpha = np.full_like(pd.nrm, 2 * params.mu)
    A = _tangent(mesh, pd, alpha, np.zeros_like(alpha), 0.0)
    g = pd.geom
    body = np.broadcast_to(np.asarray(params.f, dtype=float), pd.yq.shape)
    z = np.zeros_like(pd.pq)
    local = kernels.residual(g.G2, g.N2, g.N1, g.wdet, np.zeros_like(pd.eps), body, z, z)
    b = assemble_vector(local, sp.cell_dofs, sp.ndof)
    dofs, vals = bcs.dirichlet(mesh)
    x = solve_constrained(SparseSystem(A, b, dofs, vals))
    return MixedField.from_vector(x, mesh)


def residual_norm(mesh, state, params, regularized=False):
    return float(np.linalg.norm(assemble_residual(mesh, state, params, regularized)))


def solve_state(
    mesh,
    params: PhysicsParams,
    bcs=None,
    initial: MixedField | None = None,
    regularized=False,
    *,
    tol=1e-6,
    beta=1e-4,
    max_iter=200,
    min_step=2.0**-30,
):
    """Damped (semismooth) Newton solve of the state equation.

    Each iteration solves the Newton system for an update ``d`` and stops
    once ``||d||_1 < tol`` (the full step is taken).  Otherwise the step
    ``alpha`` is halved from 1 until
    ``||R(x + alpha d)||^2 <= (1 - 2 beta alpha) ||R(x)||^2``.

    Returns
    -------
    (MixedField, NewtonReport)

    Raises
    ------
    NonConvergenceError
        On step-size underflow or when ``max_iter`` is exceeded; ``report``
        holds the partial history.
    """
    bcs = bcs or FlowBCs()
    report = NewtonReport(regularized=regularized)
    if initial is None:
        initial = solve_stokes_initial(mesh, params, bcs)
    x = _as_vector(initial).copy()
    dofs, vals = bcs.dirichlet(mesh)
    x[dofs] = vals
    prev = np.zeros_like(x)
    pd = evaluate(mesh, x)
    R = assemble_residual(mesh, x, params, regularized, point_data=pd)
    rn2 = float(R @ R)
    for _ in range(max_iter):
        report.residual_norms.append(np.sqrt(rn2))
        if regularized:
            system = assemble_newton_step_regularized(mesh, x, params, bcs, point_data=pd)
        else:
            system = assemble_newton_step(mesh, x, prev, params, bcs, point_data=pd)
        report.equality_points.append(system.equality_points)
        d = solve_constrained(system)
        report.iterations += 1
        unorm = float(np.abs(d).sum())
        report.update_norms.append(unorm)
        if unorm < tol:
            x = x + d
            report.step_sizes.append(1.0)
            report.converged = True
            return MixedField.from_vector(x, mesh), report
        alpha = 1.0
        while True:
            xt = x + alpha * d
            pdt = evaluate(mesh, xt)
            Rt = assemble_residual(mesh, xt, params, regularized, point_data=pdt)
            rt2 = float(Rt @ Rt)
            if rt2 <= (1.0 - 2.0 * beta * alpha) * rn2:
                break
            alpha *= 0.5
            if alpha < min_step:
                report.step_sizes.append(alpha)
                raise NonConvergenceError(
                    f"Newton step size underflow after {report.iterations} iterations", report
                )
        report.step_sizes.append(alpha)
        x, pd, rn2 = xt, pdt, rt2
        prev = d
        logger.debug("newton %d: |R|=%.3e alpha=%g |d|_1=%.3e", report.iterations, np.sqrt(rn2), alpha, unorm)
    raise NonConvergenceError(f"Newton did not converge in {max_iter} iterations", report)


def dissipation(mesh, state, params: PhysicsParams, point_data=None):
    """Objective ``int mu/2 grad y : grad y``."""
    pd = point_data if point_data is not None else evaluate(mesh, _as_vector(state))
    dens = 0.5 * params.mu * np.einsum("cqij,cqij->cq", pd.gy, pd.gy)
    return float(np.sum(pd.geom.wdet * dens))


def active_indicator(mesh, state, params: PhysicsParams):
    """Cellwise quadrature average of ``gamma ||eps(y)|| - g``."""
    pd = evaluate(mesh, _as_vector(state))
    ind = params.gamma * pd.nrm - params.g
    w = pd.geom.weights
    return ind @ w / w.sum()
