import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from binghamopt import bingham as B
from binghamopt.errors import NonConvergenceError
from binghamopt.fem import SparseSystem, solve_constrained
from binghamopt.mesh import TriangleMesh
from binghamopt.meshgen import channel_mesh

P = B.PhysicsParams()


def slow_bcs(scale=1e-4):
    return B.FlowBCs(lambda x: scale * B.parabolic_inflow(x))


# --- pointwise terms ------------------------------------------------------


def test_strain_examples():
    np.testing.assert_array_equal(B.strain([[0, 1], [0, 0]]), [[0, 0.5], [0.5, 0]])
    np.testing.assert_array_equal(B.strain([[0, 1], [-1, 0]]), np.zeros((2, 2)))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4))
def test_strain_symmetric(vals):
    e = B.strain(np.reshape(vals, (2, 2)))
    assert e[0, 1] == e[1, 0]


def test_h_gamma_branches():
    assert np.all(B.h_gamma(np.zeros((2, 2)), P) == 0)
    small = np.array([[1e-3, 0], [0, -1e-3]])  # gamma |eps| = 1.41 < g
    np.testing.assert_allclose(B.h_gamma(small, P), P.gamma * small, rtol=1e-15)
    big = np.array([[1.0, 0.0], [0.0, -1.0]])
    out = B.h_gamma(big, P)
    assert B.frobenius(out) == pytest.approx(P.g, rel=1e-14)


def test_max_delta_examples():
    g, h = P.g, 0.5 / P.delta
    assert B.max_delta(g - h - 1, P) == g
    assert B.max_delta(g + h + 1, P) == g + h + 1
    assert B.max_delta(g, P) == pytest.approx(g + 1 / (8 * P.delta), rel=1e-15)


@pytest.mark.parametrize("delta", [0.1, 1.0, 10.0])
def test_max_delta_c1_at_band_edges(delta):
    p = B.PhysicsParams(delta=delta)
    for edge in (p.g - 0.5 / delta, p.g + 0.5 / delta):
        lo, hi = np.nextafter(edge, -np.inf), np.nextafter(edge, np.inf)
        assert abs(B.max_delta(lo, p) - B.max_delta(hi, p)) <= 1e-12 * p.g
        assert abs(B.max_delta_prime(lo, p) - B.max_delta_prime(hi, p)) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 200), st.floats(0.05, 20))
def test_max_delta_bound_and_order(s, delta):
    p = B.PhysicsParams(delta=delta)
    m = max(p.g, s)
    md = B.max_delta(s, p)
    assert m - 1e-12 <= md <= m + 1 / (8 * delta) + 1e-12
    assert 0.0 <= B.max_delta_prime(s, p) <= 1.0


def test_max_delta_prime_matches_fd():
    s = np.linspace(10, 30, 41) + 0.013
    h = 1e-6
    fd = (B.max_delta(s + h, P) - B.max_delta(s - h, P)) / (2 * h)
    np.testing.assert_allclose(B.max_delta_prime(s, P), fd, atol=1e-7)


@pytest.mark.parametrize(
    "x, v, expected", [(1.0, -2.0, -2.0), (-1.0, 3.0, 0.0), (0.0, 3.0, 3.0), (0.0, -3.0, 0.0)]
)
def test_gateaux_max0(x, v, expected):
    assert B.gateaux_max0(x, v) == expected


def test_gateaux_matches_one_sided_difference():
    for x in (-0.5, 0.0, 0.7):
        for v in (-1.0, 1.0):
            t = 1e-8
            fd = (max(0.0, x + t * v) - max(0.0, x)) / t
            assert B.gateaux_max0(x, v) == pytest.approx(fd, abs=1e-7)


def test_branch_coefficients_on_equality_point():
    # gamma ||eps|| == g exactly: the semismooth model drops kappa,
    # the smoothed model uses the mid-band value
    nrm = np.array(P.g / P.gamma)
    a, k = B.branch_coefficients(nrm, P, "semismooth")
    assert a == pytest.approx(2 * P.mu + P.gamma, rel=1e-15) and k == 0.0
    h = 0.5 / P.delta
    md = P.g + 0.5 * P.delta * h**2
    a, k = B.branch_coefficients(nrm, P, "regularized")
    assert a == pytest.approx(2 * P.mu + P.g * P.gamma / md, rel=1e-14)
    assert k == pytest.approx(P.g * P.gamma**2 * P.delta * h / (md**2 * nrm), rel=1e-14)


def test_branch_coefficients_deep_active_agree():
    nrm = np.array([1.0, 5.0])
    for model in ("semismooth", "regularized", "regularized-newton"):
        a, k = B.branch_coefficients(nrm, P, model)
        np.testing.assert_allclose(a, 2 + P.g / nrm, rtol=1e-14)
        np.testing.assert_allclose(k, P.g / nrm**3, rtol=1e-14)
    with pytest.raises(ValueError):
        B.branch_coefficients(nrm, P, "other")


def test_invalid_params():
    with pytest.raises(ValueError):
        B.PhysicsParams(g=0)
    with pytest.raises(ValueError):
        B.PhysicsParams(rho=-1)
    with pytest.raises(ValueError):
        B.PhysicsParams(f=(1.0, np.nan))


# --- residual and linearisation --------------------------------------------


def test_zero_state_residual_is_zero(coarse_mesh):
    assert np.all(B.assemble_residual(coarse_mesh, B.MixedField.zeros(coarse_mesh), P) == 0)


def test_regularized_equals_unregularized_in_slow_regime(coarse_mesh):
    x = B.solve_stokes_initial(coarse_mesh, P, slow_bcs())
    pd = B.evaluate(coarse_mesh, x.vector())
    assert np.all(P.gamma * pd.nrm <= P.g - 0.5 / P.delta)
    np.testing.assert_array_equal(
        B.assemble_residual(coarse_mesh, x, P, True), B.assemble_residual(coarse_mesh, x, P, False)
    )


@pytest.mark.parametrize("rho", [0.0, 10.0])
def test_regularized_jacobian_matches_fd(coarse_mesh, rng, rho):
    p = B.PhysicsParams(rho=rho)
    x = B.solve_stokes_initial(coarse_mesh, p).vector()
    d = rng.normal(size=x.size) * 1e-2
    A = B.linearized_matrix(coarse_mesh, x, p, regularized=True)
    sp = B.TaylorHood.on(coarse_mesh)
    h = 1e-6
    fd = (B.assemble_residual(coarse_mesh, x + h * d, p, True) - B.assemble_residual(coarse_mesh, x - h * d, p, True)) / (2 * h)
    pred = A @ d
    pred[sp.dirichlet_velocity_dofs] = 0.0
    assert np.linalg.norm(pred - fd) <= 1e-6 * np.linalg.norm(fd)


def test_semismooth_jacobian_matches_fd_off_kinks(coarse_mesh, rng):
    x = B.solve_stokes_initial(coarse_mesh, P).vector()
    d = rng.normal(size=x.size) * 1e-2
    A = B.linearized_matrix(coarse_mesh, x, P)
    sp = B.TaylorHood.on(coarse_mesh)
    h = 1e-9
    fd = (B.assemble_residual(coarse_mesh, x + h * d, P) - B.assemble_residual(coarse_mesh, x - h * d, P)) / (2 * h)
    pred = A @ d
    pred[sp.dirichlet_velocity_dofs] = 0.0
    assert np.linalg.norm(pred - fd) <= 1e-5 * np.linalg.norm(fd)


def test_frame_invariance_of_pointwise_stress(rng):
    eps = B.strain(rng.normal(size=(2, 2)))
    th = 0.7
    Q = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    for scale in (1e-4, 1.0):
        e = scale * eps
        np.testing.assert_allclose(B.h_gamma(Q @ e @ Q.T, P), Q @ B.h_gamma(e, P) @ Q.T, atol=1e-12)


# --- solves ----------------------------------------------------------------


def test_stokes_zero_data_gives_zero(coarse_mesh):
    x = B.solve_stokes_initial(coarse_mesh, P, B.FlowBCs(lambda x: np.zeros_like(x)))
    assert np.abs(x.vector()).max() == 0.0


def _dirichlet_outflow_mesh(n):
    # parabola prescribed on the outflow too: relabel it as inflow
    m = channel_mesh(n, hole=None)
    tags = ["inflow" if t == "outflow" else t for t in m.facet_tags]
    return TriangleMesh(m.vertices, m.cells, m.facets, tags)


def test_poiseuille_exact_with_dirichlet_outflow():
    mesh = _dirichlet_outflow_mesh(8)
    sp = B.TaylorHood.on(mesh)
    pd = B.evaluate(mesh, np.zeros(sp.ndof))
    A = B._tangent(mesh, pd, np.full_like(pd.nrm, 2 * P.mu), np.zeros_like(pd.nrm), 0.0)
    dofs, vals = B.FlowBCs().dirichlet(mesh)
    # pressure is only defined up to a constant: pin it at vertex 0
    dofs = np.append(dofs, sp.V.dim)
    vals = np.append(vals, 0.0)
    x = solve_constrained(SparseSystem(A, np.zeros(sp.ndof), dofs, vals))
    xy = sp.V.node_coordinates(mesh)
    exact = B.parabolic_inflow(xy)
    assert np.abs(x[: sp.nn] - exact[:, 0]).max() <= 1e-10
    assert np.abs(x[sp.nn : sp.V.dim]).max() <= 1e-10
    slope = np.polyfit(mesh.vertices[:, 0], x[sp.V.dim :], 1)[0]
    assert slope == pytest.approx(-8 * P.mu, abs=1e-8)


def test_newton_one_step_on_linear_regime(coarse_mesh):
    # below the yield threshold the residual is linear in the state
    bcs = slow_bcs()
    _, rep = B.solve_state(coarse_mesh, P, bcs, B.MixedField.zeros(coarse_mesh))
    assert rep.converged and rep.iterations == 2
    assert rep.step_sizes[0] == 1.0
    assert rep.residual_norms[1] <= 1e-12 * rep.residual_norms[0]


@pytest.mark.parametrize("rho", [0.0, 10.0])
@pytest.mark.parametrize("reg", [False, True])
def test_solve_state_converges_and_satisfies_armijo(coarse_mesh, rho, reg):
    p = B.PhysicsParams(rho=rho)
    beta = 1e-4
    x, rep = B.solve_state(coarse_mesh, p, regularized=reg, beta=beta)
    assert rep.converged and rep.update_norms[-1] < 1e-6
    r = np.array(rep.residual_norms)
    a = np.array(rep.step_sizes[:-1])
    assert np.all(r[1:] ** 2 <= (1 - 2 * beta * a) * r[:-1] ** 2 * (1 + 1e-12))
    assert B.residual_norm(coarse_mesh, x, p, reg) <= 1e-6
    dofs, vals = B.FlowBCs().dirichlet(coarse_mesh)
    np.testing.assert_array_equal(x.vector()[dofs], vals)


def test_solve_state_iteration_cap_raises_with_report(coarse_mesh):
    with pytest.raises(NonConvergenceError) as info:
        B.solve_state(coarse_mesh, P, max_iter=2)
    assert info.value.report.iterations == 2
    assert not info.value.report.converged


def test_warm_start_converges_immediately(coarse_mesh):
    x, _ = B.solve_state(coarse_mesh, P, tol=1e-9)
    _, rep = B.solve_state(coarse_mesh, P, initial=x, tol=1e-6)
    assert rep.iterations == 1


def test_dissipation_of_poiseuille():
    # int_0^1 mu/2 |U'|^2 with U' = 4 - 8 x2 over the unit square is 8/3
    mesh = channel_mesh(4, hole=None)
    sp = B.TaylorHood.on(mesh)
    xy = sp.V.node_coordinates(mesh)
    x = np.zeros(sp.ndof)
    x[: sp.nn] = B.parabolic_inflow(xy)[:, 0]
    assert B.dissipation(mesh, x, P) == pytest.approx(8 / 3, rel=1e-13)


def test_active_indicator_shapes_and_stokes_sign(coarse_mesh):
    # the Newtonian guess yields everywhere on this mesh
    x = B.solve_stokes_initial(coarse_mesh, P)
    ind = B.active_indicator(coarse_mesh, x, P)
    assert ind.shape == (coarse_mesh.n_cells,)
    assert ind.min() > 0
    zero = B.active_indicator(coarse_mesh, B.MixedField.zeros(coarse_mesh), P)
    np.testing.assert_allclose(zero, -P.g, rtol=1e-14)
