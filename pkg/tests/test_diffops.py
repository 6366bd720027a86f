import numpy as np
import pytest

import meshpde.autodiff as ad
from meshpde.autodiff import backward, tensor
from meshpde.diffops import (
    AxisAlignedDegeneracyError,
    DegenerateMeshError,
    build_gradient_operator,
    element_gradient,
    naive_fd_gradient,
    node_derivative,
    node_gradient,
    second_derivative,
)
from meshpde.mesh import Mesh, NodeType, build_regular_1d, build_regular_tri_2d

from oracles import dense_element_gradient


def _random_mesh_1d(rng, n=5):
    x = np.sort(rng.uniform(-1, 1, size=n))
    x += np.arange(n) * 1e-3  # keep nodes separated
    verts = x.reshape(-1, 1)
    elems = np.column_stack([np.arange(n - 1), np.arange(1, n)])
    return Mesh(1, verts, elems, np.zeros(n, dtype=np.int64))


def test_element_gradients_match_dense_solve():
    rng = np.random.default_rng(0)
    m = build_regular_tri_2d(-1.0, 1.0, 0.5)
    op = build_gradient_operator(m)
    u = rng.normal(size=m.n_vertices)
    grads = element_gradient(op, u)
    for e in range(m.elements.shape[0]):
        want = dense_element_gradient(m.vertices[m.elements[e]], u[m.elements[e]])
        assert np.allclose(grads[e], want, atol=1e-12)


def test_linear_fields_are_differentiated_exactly():
    # gradient of a + b.x is b on every element and at every node
    for dx in (0.5, 0.25):
        m = build_regular_tri_2d(-1.0, 1.0, dx)
        op = build_gradient_operator(m)
        u = 0.7 + 2.0 * m.vertices[:, 0] - 1.3 * m.vertices[:, 1]
        ng = node_gradient(op, u)
        assert np.allclose(ng[:, 0], 2.0, atol=1e-12)
        assert np.allclose(ng[:, 1], -1.3, atol=1e-12)


def test_averaging_rows_sum_to_one():
    m = build_regular_tri_2d(-1.0, 1.0, 0.1)
    op = build_gradient_operator(m)
    ones = np.ones(m.elements.shape[0])
    assert np.allclose(op.averaging.matvec(ones), 1.0, atol=1e-12)


def test_interior_matches_central_difference_1d():
    m = build_regular_1d(-1.0, 1.0, 0.05)
    op = build_gradient_operator(m)
    rng = np.random.default_rng(1)
    u = rng.normal(size=m.n_vertices)
    d = node_derivative(op, u, 0)
    central = (u[2:] - u[:-2]) / (2 * 0.05)
    assert np.max(np.abs(d[1:-1] - central)) < 1e-12


def test_second_derivative_of_quadratic():
    m = build_regular_1d(-1.0, 1.0, 0.05)
    op = build_gradient_operator(m)
    u = m.vertices[:, 0] ** 2
    d2 = second_derivative(op, u, 0, 0)
    # composition is exact for quadratics away from the one-sided boundary rows
    assert np.allclose(d2[2:-2], 2.0, atol=1e-10)


def test_mixed_second_derivatives_on_bilinear_field():
    m = build_regular_tri_2d(-1.0, 1.0, 0.25)
    op = build_gradient_operator(m)
    x, y = m.vertices[:, 0], m.vertices[:, 1]
    u = x * y
    dxy = second_derivative(op, u, 0, 1)
    interior = (
        (np.abs(x) < 1 - 0.5 - 1e-9) & (np.abs(y) < 1 - 0.5 - 1e-9)
    )
    assert np.allclose(dxy[interior], 1.0, atol=1e-10)


def test_gradient_covariance_under_rigid_motion():
    # rotate the mesh and the probe direction together: gradients rotate too
    rng = np.random.default_rng(2)
    m = build_regular_tri_2d(-1.0, 1.0, 0.25)
    theta = 0.37
    rot = np.array(
        [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
    )
    shifted = Mesh(
        2, m.vertices @ rot.T + np.array([0.3, -0.2]), m.elements, m.node_types
    )
    g = rng.normal(size=2)
    u = m.vertices @ g
    u_rot = shifted.vertices @ (rot @ g)
    got = node_gradient(build_gradient_operator(shifted), u_rot)
    assert np.allclose(got, rot @ g, atol=1e-10)


def test_node_derivative_accepts_tensors():
    m = build_regular_1d(-1.0, 1.0, 0.1)
    op = build_gradient_operator(m)
    u0 = np.sin(m.vertices[:, 0])
    u = tensor(u0, requires_grad=True)
    d = node_derivative(op, u, 0)
    assert np.allclose(d.data, node_derivative(op, u0, 0))
    backward(ad.sum(ad.square(d)))
    assert u.grad is not None and np.any(u.grad != 0)


def test_degenerate_element_is_rejected():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])  # collinear
    elems = np.array([[0, 1, 2]])
    m = Mesh(2, verts, elems, np.zeros(3, dtype=np.int64))
    with pytest.raises(DegenerateMeshError):
        build_gradient_operator(m)


def test_random_1d_meshes_are_linear_exact():
    rng = np.random.default_rng(3)
    for _ in range(20):
        m = _random_mesh_1d(rng, n=7)
        op = build_gradient_operator(m)
        a, b = rng.normal(size=2)
        d = node_derivative(op, a + b * m.vertices[:, 0], 0)
        assert np.allclose(d, b, atol=1e-9 * max(1, abs(b)))


def test_naive_fd_works_on_generic_1d_mesh():
    rng = np.random.default_rng(4)
    m = _random_mesh_1d(rng, n=6)
    u = 2.0 * m.vertices[:, 0] + 1.0
    g = naive_fd_gradient(m, u)
    assert np.allclose(g[:, 0], 2.0, atol=1e-9)


def test_naive_fd_raises_on_regular_triangulation():
    m = build_regular_tri_2d(-1.0, 1.0, 0.5)
    u = np.zeros(m.n_vertices)
    with pytest.raises(AxisAlignedDegeneracyError) as err:
        naive_fd_gradient(m, u)
    # the message should name the offending axis so the failure is teachable
    assert "axis" in str(err.value)


def test_naive_fd_raises_on_many_regular_meshes():
    for dx in (1.0, 0.5, 0.25, 0.2, 0.125, 0.1):
        m = build_regular_tri_2d(-1.0, 1.0, dx)
        with pytest.raises(AxisAlignedDegeneracyError):
            naive_fd_gradient(m, np.zeros(m.n_vertices))


def test_operator_matrices_have_no_explicit_zeros():
    # stored sparsity should reflect the stencil, not round-tripped zeros
    m = build_regular_tri_2d(-1.0, 1.0, 0.25)
    op = build_gradient_operator(m)
    for axis in range(2):
        csr = op.node_grad[axis].csr
        assert csr.nnz > 0
        assert csr.shape == (m.n_vertices, m.n_vertices)
