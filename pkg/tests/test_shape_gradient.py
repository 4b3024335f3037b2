import numpy as np
import pytest

from binghamopt import bingham as B
from binghamopt import shape_gradient as S
from binghamopt.adjoint import solve_adjoint
from binghamopt.errors import PreconditionError
from binghamopt.mesh import barycenter, constraint_vector, deform_mesh, perimeter, volume
from binghamopt.meshgen import polygon_annulus
from binghamopt.optimizer import AugLagState

P = B.PhysicsParams()


@pytest.fixture(scope="module")
def setup(coarse_mesh):
    out = {}
    for reg in (False, True):
        x, _ = B.solve_state(coarse_mesh, P, regularized=reg, tol=1e-9)
        out[reg] = (x, solve_adjoint(coarse_mesh, x, P, reg))
    return out


def _targets_at(mesh):
    sh = mesh.shape_boundary()
    return (volume(sh, mesh), tuple(barycenter(sh, mesh)), perimeter(sh, mesh))


def test_zero_direction(coarse_mesh, setup):
    x, adj = setup[False]
    dL = S.assemble_shape_derivative(coarse_mesh, x, adj, P, AugLagState())
    assert dL.apply(np.zeros((coarse_mesh.n_vertices, 2))) == 0.0


def test_rigid_translation_has_no_bulk_term(coarse_mesh, setup):
    x, adj = setup[True]
    dL = S.assemble_shape_derivative(coarse_mesh, x, adj, P, AugLagState(), True)
    W = np.tile([1.0, 0.0], (coarse_mesh.n_vertices, 1))
    assert abs(dL.bulk @ W.T.ravel()) <= 1e-10 * np.abs(dL.bulk).sum()


def test_apply_is_linear(coarse_mesh, setup, rng):
    x, adj = setup[False]
    dL = S.assemble_shape_derivative(coarse_mesh, x, adj, P, AugLagState())
    W1, W2 = rng.normal(size=(2, coarse_mesh.n_vertices, 2))
    assert dL.apply(W1 + 2 * W2) == pytest.approx(dL.apply(W1) + 2 * dL.apply(W2), rel=1e-12)
    np.testing.assert_array_equal(dL.as_nodal().T.ravel(), dL.covector)


def test_q_kernels(rng):
    gy = rng.normal(size=(2, 2))
    gV = rng.normal(size=(2, 2))
    eps = B.strain(gy)
    assert np.all(S.q_tilde_kernel(eps * 1e-6, gy * 1e-6, gV, P) == 0)
    # deep in the active set the smoothed and plain kernels coincide
    np.testing.assert_allclose(S.q_delta_kernel(eps, gy, gV, P), S.q_tilde_kernel(eps, gy, gV, P), rtol=1e-14)
    edge = eps * (P.g / P.gamma / B.frobenius(eps))
    assert np.all(S.q_tilde_kernel(edge, gy, gV, P) == 0)
    assert np.any(S.q_delta_kernel(edge, gy, gV, P) != 0)


def test_geometric_terms_match_fd(coarse_mesh, rng):
    aug = AugLagState(lam=rng.normal(size=4), nu=37.0)
    sh = coarse_mesh.shape_boundary()
    cov, _ = S.geometric_derivative_terms(sh, coarse_mesh, aug)
    W = np.zeros((coarse_mesh.n_vertices, 2))
    W[sh.loop] = rng.normal(size=(len(sh.loop), 2))

    def g(m):
        c = constraint_vector(m.shape_boundary(), m, aug.targets)
        return -aug.lam @ c + 0.5 * aug.nu * c @ c

    t = 1e-6
    fd = (g(deform_mesh(coarse_mesh, W, t)) - g(deform_mesh(coarse_mesh, -W, t))) / (2 * t)
    assert cov @ W.T.ravel() == pytest.approx(fd, rel=1e-6)


@pytest.mark.parametrize("which, index", [("volume", 0), ("perimeter", 3)])
def test_radial_scaling_of_64_gon(which, index):
    mesh = polygon_annulus(n_sides=64, r_inner=0.1, r_outer=0.4, rings=3, subdiv=1)
    lam = np.zeros(4)
    lam[index] = 1.0
    aug = AugLagState(lam=lam, targets=_targets_at(mesh))
    cov, _ = S.geometric_derivative_terms(mesh.shape_boundary(), mesh, aug)
    W = mesh.vertices.copy()  # x -> (1 + t) x
    peri = 64 * 2 * 0.1 * np.sin(np.pi / 64)
    area = 0.5 * 64 * 0.1**2 * np.sin(2 * np.pi / 64)
    expected = -2 * area if which == "volume" else -peri
    assert perimeter(mesh.shape_boundary(), mesh) == pytest.approx(peri, rel=1e-14)
    assert cov @ W.T.ravel() == pytest.approx(expected, rel=1e-12)


def test_zero_constraints_give_zero_geometric_terms(coarse_mesh):
    aug = AugLagState(targets=_targets_at(coarse_mesh))
    cov, (a, b, p) = S.geometric_derivative_terms(coarse_mesh.shape_boundary(), coarse_mesh, aug)
    assert np.all(cov == 0) and a == 0 and p == 0 and np.all(b == 0)


def test_models_agree_when_branches_frozen(coarse_mesh):
    # slow flow keeps every point below g - 1/(2 delta): smoothed and plain max coincide
    bcs = B.FlowBCs(lambda x: 1e-4 * B.parabolic_inflow(x))
    x, _ = B.solve_state(coarse_mesh, P, bcs, tol=1e-12)
    derivs = []
    for reg in (False, True):
        adj = solve_adjoint(coarse_mesh, x, P, reg, check=False)
        derivs.append(S.assemble_shape_derivative(coarse_mesh, x, adj, P, AugLagState(), reg).covector)
    np.testing.assert_allclose(derivs[0], derivs[1], rtol=1e-12, atol=1e-14 * np.abs(derivs[0]).max())


def test_stale_state_guard(coarse_mesh, setup):
    _, adj = setup[False]
    stokes = B.solve_stokes_initial(coarse_mesh, P)
    with pytest.raises(PreconditionError):
        S.assemble_shape_derivative(coarse_mesh, stokes, adj, P, AugLagState(), check_tol=1e-6)
