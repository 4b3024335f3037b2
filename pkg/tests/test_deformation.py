import numpy as np
import pytest

from binghamopt import deformation as D
from binghamopt.meshgen import channel_mesh, polygon_annulus
from binghamopt.shape_gradient import ShapeDerivative
from conftest import unit_square


def test_mu_hat_no_shape_is_outer_value(empty_channel):
    np.testing.assert_allclose(D.interpolate_mu_hat(empty_channel), 1.0, rtol=1e-14)


def test_mu_hat_boundary_values_and_bounds(desk_mesh):
    mu = D.interpolate_mu_hat(desk_mesh, 5.0, 1.0)
    shape = desk_mesh.topology.tagged_vertices("shape")
    np.testing.assert_allclose(mu[shape], 5.0)
    assert mu.min() >= 1.0 - 1e-12 and mu.max() <= 5.0 + 1e-12


def test_mu_hat_decreases_radially_on_annulus():
    mesh = polygon_annulus(n_sides=16, r_inner=0.1, r_outer=0.4, rings=6, subdiv=1)
    mu = D.interpolate_mu_hat(mesh, 5.0, 1.0)
    r = np.round(np.linalg.norm(mesh.vertices, axis=1), 12)
    rings = np.unique(r)
    means = [mu[r == ri].mean() for ri in rings]
    assert np.all(np.diff(means) < 0)


def test_elasticity_matrix_symmetric(desk_mesh):
    A = D.elasticity_matrix(desk_mesh, D.interpolate_mu_hat(desk_mesh))
    assert abs(A - A.T).max() <= 1e-14 * abs(A).max()


def test_rigid_motions_in_kernel():
    mesh = channel_mesh(6, hole=None)
    A = D.elasticity_matrix(mesh, np.ones(mesh.n_vertices))
    x, y = mesh.vertices.T
    for V in (np.column_stack([np.ones_like(x), 0 * x]), np.column_stack([-y, x])):
        assert np.abs(A @ V.T.ravel()).max() <= 1e-13


def test_manufactured_solution(desk_mesh, rng):
    mu = D.interpolate_mu_hat(desk_mesh)
    A = D.elasticity_matrix(desk_mesh, mu)
    V = rng.normal(size=(desk_mesh.n_vertices, 2))
    V[D._outer_vertices(desk_mesh)] = 0.0
    cov = -(A @ V.T.ravel())
    np.testing.assert_allclose(D.solve_deformation(desk_mesh, cov, mu), V, atol=1e-10)


def test_descent_identity_and_scaling(desk_mesh, rng):
    cov = rng.normal(size=2 * desk_mesh.n_vertices)
    dL = ShapeDerivative(cov)
    mu = D.interpolate_mu_hat(desk_mesh)
    V = D.solve_deformation(desk_mesh, dL, mu)
    A = D.elasticity_matrix(desk_mesh, mu)
    a_vv = V.T.ravel() @ (A @ V.T.ravel())
    assert dL.apply(V) == pytest.approx(-a_vv, rel=1e-10)
    assert dL.apply(V) < 0
    np.testing.assert_allclose(D.solve_deformation(desk_mesh, 3 * cov, mu), 3 * V, rtol=1e-12, atol=1e-15)
    assert np.all(V[D._outer_vertices(desk_mesh)] == 0)


def test_zero_derivative_gives_zero_field(desk_mesh):
    V = D.solve_deformation(desk_mesh, np.zeros(2 * desk_mesh.n_vertices))
    assert np.all(V == 0)


def test_h1_norm_examples():
    mesh = unit_square()
    x = mesh.vertices[:, 0]
    assert D.h1_norm(mesh, np.column_stack([np.ones(4), np.zeros(4)])) == pytest.approx(1.0, rel=1e-14)
    # int x^2 + |grad x|^2 = 1/3 + 1
    assert D.h1_norm(mesh, np.column_stack([x, np.zeros(4)])) == pytest.approx(np.sqrt(4 / 3), rel=1e-14)
    assert D.h1_norm(mesh, np.zeros((4, 2))) == 0.0
