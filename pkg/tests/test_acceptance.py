"""Acceptance criteria at desk scale; each test records one PASS/FAIL line."""
import numpy as np
import pytest

from binghamopt import bingham as B
from binghamopt import optimizer as O
from binghamopt.adjoint import adjoint_consistency_check, assemble_adjoint, solve_adjoint
from binghamopt.output import write_trace
from conftest import record

P0 = B.PhysicsParams()
P10 = B.PhysicsParams(rho=10.0)


def check(number, ok, detail):
    record(number, ok, detail)
    assert ok, detail


@pytest.fixture(scope="module")
def long_runs(desk_mesh):
    """3 outer x 200 inner iterations in both modes (shared by criteria 7 to 10)."""
    out = {}
    for mode in ("unregularized", "regularized"):
        s = O.OptSettings(inner=200, outer=3, regularized=mode == "regularized")
        out[mode] = O.optimize(desk_mesh, P0, O.AugLagState(), s)
    return out


def test_criterion_01_poiseuille(empty_channel):
    x = B.solve_stokes_initial(empty_channel, P0)
    sp = B.TaylorHood.on(empty_channel)
    exact = B.parabolic_inflow(sp.V.node_coordinates(empty_channel))
    err = max(np.abs(x.velocity[: sp.nn] - exact[:, 0]).max(), np.abs(x.velocity[sp.nn :]).max())
    slope = np.polyfit(empty_channel.vertices[:, 0], x.pressure, 1)[0]
    ok = err <= 1e-10 and abs(slope + 8 * P0.mu) <= 1e-8
    check(1, ok, f"velocity error {err:.3e} (<= 1e-10), pressure slope {slope:.6f} (target -8)")


@pytest.mark.parametrize("rho", [0.0, 10.0])
def test_criterion_02_state_convergence(desk_mesh, rho):
    p = B.PhysicsParams(rho=rho)
    _, rep = B.solve_state(desk_mesh, p, tol=1e-6)
    r = np.array(rep.residual_norms)
    ratios = r[1:] / r[:-1]
    last3 = ratios[-3:]
    ok = (
        rep.converged
        and rep.iterations <= 60
        and rep.update_norms[-1] < 1e-6
        and np.all(np.diff(last3) < 0)
        and rep.step_sizes[-2:] == [1.0, 1.0]
    )
    check(
        2,
        ok,
        f"rho={rho:g}: {rep.iterations} iterations, last ratios {np.array2string(last3, precision=3)}, "
        f"last steps {rep.step_sizes[-2:]}",
    )


def test_criterion_03_warm_start_ordering(desk_mesh):
    counts = {}
    for reg in (False, True):
        x, _ = B.solve_state(desk_mesh, P0, regularized=reg)
        s = O.OptSettings(regularized=reg)
        cand = O._candidate(desk_mesh, x, P0, O.AugLagState(), reg, s)
        moved = O.deform_mesh(desk_mesh, cand.V, s.t_max)
        _, rep = B.solve_state(moved, P0, initial=x, regularized=reg)
        counts[reg] = (rep.iterations, rep.residual_norms[-1])
    ok = counts[False][0] < counts[True][0]
    (nu, ru), (nr, rr) = counts[False], counts[True]
    check(3, ok, f"warm re-solve: unregularized {nu} vs regularized {nr} iterations (final residuals {ru:.1e}, {rr:.1e})")


def test_criterion_04_gradient_fidelity(desk_mesh):
    x, _ = B.solve_state(desk_mesh, P0, regularized=True, tol=1e-9)
    adj = solve_adjoint(desk_mesh, x, P0, True)
    rng = np.random.default_rng(0)
    shape = desk_mesh.topology.tagged_vertices("shape")
    errs = []
    for _ in range(10):
        W = np.zeros((desk_mesh.n_vertices, 2))
        W[shape] = rng.standard_normal((len(shape), 2))
        errs.append(adjoint_consistency_check(desk_mesh, x, adj, P0, W, h=1e-7)[0])
    check(4, max(errs) <= 1e-3, f"max relative error {max(errs):.3e} over 10 directions (<= 1e-3)")


def test_criterion_05_adjoint_transpose(desk_mesh):
    x, _ = B.solve_state(desk_mesh, P0)
    A = assemble_adjoint(desk_mesh, x, P0).A
    L = B.linearized_matrix(desk_mesh, x, P0)
    rel = abs(A - L.T).max() / abs(L).max()
    check(5, rel <= 1e-12, f"max entrywise relative difference {rel:.3e} (<= 1e-12)")


def test_criterion_06_max_delta_smoothness():
    g, d = P0.g, P0.delta
    jumps = []
    for edge in (g - 0.5 / d, g + 0.5 / d):
        lo, hi = np.nextafter(edge, -np.inf), np.nextafter(edge, np.inf)
        jumps.append(abs(B.max_delta(lo, P0) - B.max_delta(hi, P0)))
        jumps.append(abs(B.max_delta_prime(lo, P0) - B.max_delta_prime(hi, P0)))
    s = np.linspace(g - 20 / d, g + 20 / d, 10_000)
    gap = np.abs(B.max_delta(s, P0) - np.maximum(g, s)).max()
    ok = max(jumps) <= 1e-12 and gap <= 1 / (8 * d) + 1e-12
    check(6, ok, f"max jump {max(jumps):.2e}, max |max_delta - max| {gap:.6f} (<= {1 / (8 * d):g})")


@pytest.mark.slow
def test_criterion_07_optimization_progress(long_runs):
    tr = long_runs["unregularized"].trace
    L, Lnew, outer = tr.column("L_A"), tr.column("L_A_new"), tr.column("outer")
    # L_A changes definition at a multiplier update, so monotonicity is per outer iteration
    rises = [np.diff(np.append(L[outer == k], Lnew[outer == k][-1])).max() for k in np.unique(outer)]
    V = tr.column("V_H1")
    ratio = V[-1] / V[0]
    ok = max(rises) <= 0 and ratio <= 1e-2
    check(7, ok, f"max L_A increase {max(rises):.3e} (<= 0), V_H1 ratio {ratio:.3e} (<= 1e-2)")


@pytest.mark.slow
def test_criterion_08_constraint_progress(long_runs):
    tr = long_runs["unregularized"].trace
    c0, cend = tr.outer[0]["c_norm"], tr.outer[-1]["c_norm_end"]
    fires = [rec["c_norm_end"] >= 0.9 * rec["c_norm"] for rec in tr.outer]
    grew = [rec["nu_end"] > rec["nu"] for rec in tr.outer]
    ok = cend <= 0.5 * c0 and fires == grew
    check(8, ok, f"|c| {c0:.4f} -> {cend:.4f}, tau-test {fires}, nu increased {grew}")


@pytest.mark.slow
def test_criterion_09_mode_agreement(long_runs):
    a, b = long_runs["unregularized"].mesh, long_runs["regularized"].mesh
    loop = a.shape_boundary().loop
    dist = np.linalg.norm(a.vertices[loop] - b.vertices[loop], axis=1).max()
    check(9, dist <= 1e-3, f"max shape vertex distance {dist:.3e} (<= 1e-3)")


@pytest.mark.slow
def test_criterion_10_safeguard(long_runs, desk_mesh):
    dormant = not any(r.trace.column("safeguard").any() for r in long_runs.values())
    flip = lambda it, V: -V if it == 0 else V
    s = O.OptSettings(inner=2, outer=1, inject=flip)
    res = O.optimize(desk_mesh, P0, O.AugLagState(), s)
    row = res.trace.rows[0]
    fired = bool(row["safeguard"]) and row["t"] > 0
    check(10, dormant and fired, f"dormant in default runs: {dormant}; injected ascent accepted via safeguard: {fired}")


def test_criterion_11_active_set(desk_mesh):
    signs = {}
    for p in (P0, P10):
        x, _ = B.solve_state(desk_mesh, p)
        ind = B.active_indicator(desk_mesh, x, p)
        signs[p.rho] = (ind.min() < 0 < ind.max(), ind.min(), ind.max())
    ok = all(v[0] for v in signs.values())
    detail = ", ".join(f"rho={k:g}: [{v[1]:.3g}, {v[2]:.3g}]" for k, v in signs.items())
    check(11, ok, f"indicator range {detail}")


def test_criterion_12_determinism(desk_mesh, tmp_path):
    paths = []
    for k in range(2):
        res = O.optimize(desk_mesh, P0, O.AugLagState(), O.OptSettings(inner=10, outer=1))
        paths.append(write_trace(res.trace, tmp_path / f"trace{k}.csv"))
    same = paths[0].read_bytes() == paths[1].read_bytes()
    check(12, same, "trace CSVs byte-identical" if same else "trace CSVs differ")
