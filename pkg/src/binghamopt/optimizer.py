"""Augmented Lagrangian shape optimisation with a regularised safeguard."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .adjoint import solve_adjoint
from .bingham import (
    FlowBCs,
    MixedField,
    PhysicsParams,
    assemble_residual,
    dissipation,
    evaluate,
    solve_stokes_initial,
    solve_state,
)
from .deformation import h1_norm, interpolate_mu_hat, solve_deformation
from .errors import GeometryError, NonConvergenceError, SingularSystemError
from .mesh import constraint_vector, deform_mesh, mesh_quality
from .shape_gradient import assemble_shape_derivative

logger = logging.getLogger(__name__)

DEFAULT_TARGETS = (0.04, (0.3, 0.45), 0.76)


@dataclass
class AugLagState:
    """Multipliers, penalty and schedule of the augmented Lagrangian."""

    lam: np.ndarray = field(default_factory=lambda: np.zeros(4))
    nu: float = 1e5
    targets: tuple = DEFAULT_TARGETS
    tau: float = 0.9
    xi: float = 2.0
    c1: float = np.inf

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float).reshape(4).copy()
        v, b, p = self.targets
        self.targets = (float(v), (float(b[0]), float(b[1])), float(p))
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if not self.xi > 1:
            raise ValueError("xi must exceed 1")

    def copy(self):
        return replace(self, lam=self.lam.copy())


@dataclass
class OptSettings:
    inner: int = 2000
    outer: int = 10
    t_max: float = 6.25e-6
    beta: float = 1e-4
    max_halvings: int = 20
    newton_tol: float = 1e-6
    newton_beta: float = 1e-4
    newton_max_iter: int = 200
    regularized: bool = False
    v_floor: float = 1e-12
    c_tol: float = 1e-10
    quality_floor: float = 0.05
    mu_hat_shape: float = 5.0
    mu_hat_outer: float = 1.0
    # fault injection: called as inject(iteration, V) -> V before the line search
    inject: Optional[Callable] = None


@dataclass
class OptTrace:
    """Per-iteration history; ``rows`` holds one dict per inner iteration."""

    rows: list = field(default_factory=list)
    outer: list = field(default_factory=list)
    status: str = "running"
    newton_reports: list = field(default_factory=list)

    def column(self, name):
        return np.array([r[name] for r in self.rows])


@dataclass
class OptResult:
    trace: OptTrace
    mesh: object
    state: MixedField
    adjoint: MixedField
    auglag: AugLagState


def evaluate_L_A(mesh, state, auglag: AugLagState, params: PhysicsParams, regularized=False, adjoint=None):
    """``J + R[adjoint] - lam^T c + nu/2 |c|^2``; the R term uses the zero pair if no adjoint."""
    x = state.vector() if isinstance(state, MixedField) else np.asarray(state)
    pd = evaluate(mesh, x)
    val = dissipation(mesh, x, params, point_data=pd)
    if adjoint is not None:
        a = adjoint.vector() if isinstance(adjoint, MixedField) else np.asarray(adjoint)
        val += float(assemble_residual(mesh, x, params, regularized, point_data=pd) @ a)
    if mesh.has_shape():
        c = constraint_vector(mesh.shape_boundary(), mesh, auglag.targets)
        val += float(-auglag.lam @ c + 0.5 * auglag.nu * (c @ c))
    return val


@dataclass
class Candidate:
    """Direction data at the current iterate for one model."""

    regularized: bool
    state: MixedField
    adjoint: MixedField
    V: np.ndarray
    dLV: float
    V_H1: float
    L_A: float


def _newton(mesh, params, bcs, initial, regularized, s: OptSettings):
    return solve_state(
        mesh,
        params,
        bcs,
        initial,
        regularized,
        tol=s.newton_tol,
        beta=s.newton_beta,
        max_iter=s.newton_max_iter,
    )


def descent_direction(mesh, state, params, auglag, regularized, s: OptSettings):
    adjoint = solve_adjoint(mesh, state, params, regularized, tol=s.newton_tol, check=False)
    dL = assemble_shape_derivative(mesh, state, adjoint, params, auglag, regularized)
    mu_hat = interpolate_mu_hat(mesh, s.mu_hat_shape, s.mu_hat_outer)
    V = solve_deformation(mesh, dL, mu_hat)
    return adjoint, dL, V


def armijo_shape_step(mesh, V, L_eval, L0, dLV, t_max, beta=1e-4, max_halvings=20):
    """Backtracking on ``t in {t_max, t_max/2, ...}``.

    ``L_eval(trial_mesh)`` returns ``(value, payload)`` or raises on a failed
    state solve.  Returns ``(t, trial_mesh, payload, value, trials)`` or ``None``
    when no step is accepted.
    """
    if not dLV < 0:
        return None
    t = t_max
    trials = 0
    for _ in range(max_halvings + 1):
        trials += 1
        try:
            trial = deform_mesh(mesh, V, t)
            val, payload = L_eval(trial)
        except (GeometryError, NonConvergenceError, SingularSystemError) as exc:
            logger.debug("trial t=%g failed: %s", t, exc)
        else:
            if val <= L0 + beta * t * dLV:
                return t, trial, payload, val, trials
        t *= 0.5
    return None


def _line_search(mesh, cand: Candidate, params, auglag, bcs, s: OptSettings):
    reg = cand.regularized

    def L_eval(trial):
        st, rep = _newton(trial, params, bcs, cand.state, reg, s)
        return evaluate_L_A(trial, st, auglag, params, reg, cand.adjoint), (st, rep)

    return armijo_shape_step(mesh, cand.V, L_eval, cand.L_A, cand.dLV, s.t_max, s.beta, s.max_halvings)


def _candidate(mesh, state, params, auglag, regularized, s, inject=None, it=None):
    adjoint, dL, V = descent_direction(mesh, state, params, auglag, regularized, s)
    if inject is not None:
        V = np.asarray(inject(it, V), dtype=float)
    L0 = evaluate_L_A(mesh, state, auglag, params, regularized, adjoint)
    return Candidate(regularized, state, adjoint, V, dL.apply(V), h1_norm(mesh, V), L0)


def safeguard_step(mesh, state, params, auglag, bcs, s: OptSettings):
    """Regularised state, adjoint, derivative and line search on ``L_A^delta``.

    Returns ``(candidate, step)`` where ``step`` is ``None`` on failure.
    """
    reg_state, _ = _newton(mesh, params, bcs, state, True, s)
    cand = _candidate(mesh, reg_state, params, auglag, True, s)
    return cand, _line_search(mesh, cand, params, auglag, bcs, s)


def optimize(mesh, params: PhysicsParams, auglag: AugLagState, settings: OptSettings, bcs=None, sink=None, initial=None):
    """Run the outer/inner loop.

    ``sink(row)`` is called after each inner iteration.  Raises
    :class:`NonConvergenceError` (with the trace as ``report``) when a state
    solve fails under the safeguard, no step is found, or the mesh quality
    drops below the floor.
    """
    s = settings
    bcs = bcs or FlowBCs()
    auglag = auglag.copy()
    trace = OptTrace()
    base_reg = s.regularized
    if initial is None:
        initial = solve_stokes_initial(mesh, params, bcs)
    state, rep = _newton(mesh, params, bcs, initial, base_reg, s)
    trace.newton_reports.append(rep)
    newton_iters = rep.iterations
    adjoint = None
    it = 0
    shape = mesh.shape_boundary()

    def abort(status, msg):
        trace.status = status
        err = NonConvergenceError(msg, trace)
        err.result = OptResult(trace, mesh, state, adjoint, auglag)
        raise err

    for k in range(s.outer):
        c = constraint_vector(shape, mesh, auglag.targets)
        auglag.c1 = float(np.linalg.norm(c))
        trace.outer.append({"outer": k, "lam": auglag.lam.copy(), "nu": auglag.nu, "c_norm": auglag.c1})
        if auglag.c1 < s.c_tol:
            trace.status = "constraints-met"
            break
        stop_inner = False
        for _ in range(s.inner):
            try:
                cand = _candidate(mesh, state, params, auglag, base_reg, s, s.inject, it)
            except SingularSystemError as exc:
                abort("singular", f"iteration {it}: {exc}")
            adjoint = cand.adjoint
            c_norm = float(np.linalg.norm(constraint_vector(shape, mesh, auglag.targets)))
            row = {
                "iter": it,
                "outer": k,
                "L_A": cand.L_A,
                "c_norm": c_norm,
                "V_H1": cand.V_H1,
                "dLV": cand.dLV,
                "newton_iters": newton_iters,
                "safeguard": False,
                "t": 0.0,
                "L_A_new": np.nan,
                "equality_points": int(sum(rep.equality_points)),
            }
            if cand.V_H1 < s.v_floor:
                trace.rows.append(row)
                if sink:
                    sink(row)
                trace.status = "stationary"
                stop_inner = True
                break
            step = _line_search(mesh, cand, params, auglag, bcs, s)
            if step is None and not base_reg:
                row["safeguard"] = True
                try:
                    cand, step = safeguard_step(mesh, state, params, auglag, bcs, s)
                except (NonConvergenceError, SingularSystemError) as exc:
                    trace.rows.append(row)
                    abort("safeguard-failed", f"iteration {it}: safeguard state solve failed: {exc}")
            if step is None:
                trace.rows.append(row)
                abort("line-search-failed", f"iteration {it}: no acceptable step size")
            t, new_mesh, (new_state, rep), L_new, _trials = step
            if cand.regularized and not base_reg:
                # resume the unregularised model from the accepted regularised state
                try:
                    new_state, rep = _newton(new_mesh, params, bcs, new_state, False, s)
                except NonConvergenceError as exc:
                    trace.rows.append(row)
                    abort("state-failed", f"iteration {it}: {exc}")
            row.update(t=t, L_A_new=L_new, newton_iters=rep.iterations)
            mesh, state = new_mesh, new_state
            newton_iters = rep.iterations
            trace.rows.append(row)
            if sink:
                sink(row)
            it += 1
            q = mesh_quality(mesh)
            if q < s.quality_floor:
                abort("mesh-quality", f"iteration {it}: mesh quality {q:.3g} below {s.quality_floor}")
        c = constraint_vector(shape, mesh, auglag.targets)
        cn = float(np.linalg.norm(c))
        auglag.lam = auglag.lam - auglag.nu * c
        if cn >= auglag.tau * auglag.c1:
            auglag.nu *= auglag.xi
        trace.outer[-1].update(c_norm_end=cn, lam_end=auglag.lam.copy(), nu_end=auglag.nu)
        if stop_inner or cn < s.c_tol:
            trace.status = trace.status if stop_inner else "constraints-met"
            break
    else:
        trace.status = "budget"
    return OptResult(trace, mesh, state, adjoint, auglag)


def run(config, mesh=None, sink=None):
    """Run from a :class:`~binghamopt.config.RunConfig`; returns the :class:`OptTrace`."""
    return run_full(config, mesh, sink).trace


def run_full(config, mesh=None, sink=None) -> OptResult:
    if mesh is None:
        mesh = config.load_mesh()
    return optimize(mesh, config.physics(), config.auglag(), config.settings(), config.bcs(), sink)
