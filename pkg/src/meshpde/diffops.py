"""Differential operators on simplicial meshes.

Per-element gradients come from the element Jacobian: with base vertex
``p0`` and remaining vertices ``pk``, the rows of ``J`` are ``pk - p0``
and the constant gradient on the element is ``J^{-1} @ (uk - u0)``.
Node gradients average the gradients of all elements touching a node —
a row-normalized incidence matrix applied to the element gradients.
Second derivatives compose two node-gradient applications; no
symmetrization is applied, the operator is used as composed.

All operators are assembled once into CSR matrices with sorted column
indices, so repeated applications contract in a fixed order and results
are bit-reproducible.  Everything is vectorized; no per-element Python
loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import SparseMatrix, Tensor
from .mesh import Mesh, mesh_edges

__all__ = [
    "GradientOperator",
    "DegenerateMeshError",
    "AxisAlignedDegeneracyError",
    "build_gradient_operator",
    "element_gradient",
    "node_gradient",
    "node_derivative",
    "second_derivative",
    "naive_fd_gradient",
]

DEGENERATE_REL_TOL = 1e-12  # |det J| below this times the element scale^dim

AXIS_TOL = 1e-9  # per-axis distance below which naive quotients blow up


class DegenerateMeshError(ValueError):
    """An element has (numerically) zero volume, or a node has no element."""


class AxisAlignedDegeneracyError(ValueError):
    """Naive per-axis difference quotients hit an axis-aligned node pair."""


@dataclass
class GradientOperator:
    """Precomputed gradient machinery for one mesh.

    Attributes
    ----------
    mesh : Mesh
    inv_jacobians : (n_elements, dim, dim) float64 array
        Inverse element Jacobians.
    dets : (n_elements,) float64 array
        Jacobian determinants (signed).
    averaging : SparseMatrix
        (n_vertices, n_elements) row-normalized incidence matrix; each row
        sums to one and averages the incident element values.
    element_grad : list[SparseMatrix]
        Per axis d, the (n_elements, n_vertices) map u -> d-component of
        the element gradients.
    node_grad : list[SparseMatrix]
        Per axis d, the composed (n_vertices, n_vertices) map
        ``averaging @ element_grad[d]``.
    """

    mesh: Mesh
    inv_jacobians: np.ndarray
    dets: np.ndarray
    averaging: SparseMatrix
    element_grad: list
    node_grad: list


def build_gradient_operator(mesh: Mesh) -> GradientOperator:
    """Assemble the gradient operator for a mesh.

    Raises
    ------
    DegenerateMeshError
        If an element's Jacobian determinant vanishes relative to its
        edge lengths, or if some vertex belongs to no element (its
        average would be undefined).
    """
    dim = mesh.dim
    elems = mesh.elements
    coords = mesh.vertices[elems]  # (n_elem, dim+1, dim)
    jac = coords[:, 1:, :] - coords[:, :1, :]  # rows are edge vectors

    dets = np.linalg.det(jac) if dim > 1 else jac[:, 0, 0]
    scale = np.abs(jac).max(axis=(1, 2)) if len(elems) else np.zeros(0)
    bad = np.abs(dets) <= DEGENERATE_REL_TOL * np.maximum(scale, 1e-300) ** dim
    if bad.any():
        idx = int(np.argmax(bad))
        raise DegenerateMeshError(
            f"element {idx} is degenerate (|det J| = {abs(dets[idx]):.3e})"
        )
    inv_jac = _invert(jac, dets, dim)

    n_elem, n_vert = len(elems), mesh.n_vertices
    erange = np.arange(n_elem)

    # averaging matrix: node row <- mean over incident elements
    counts = np.bincount(elems.ravel(), minlength=n_vert).astype(np.float64)
    if (counts == 0).any():
        lonely = int(np.argmax(counts == 0))
        raise DegenerateMeshError(f"vertex {lonely} belongs to no element")
    rows = elems.ravel()
    cols = np.repeat(erange, dim + 1)
    vals = 1.0 / counts[rows]
    averaging = SparseMatrix.from_coo(rows, cols, vals, (n_vert, n_elem))

    # element gradient, one sparse matrix per axis:
    #   grad_d = sum_k inv_jac[:, d, k-1] * (u[v_k] - u[v_0])
    element_grad = []
    node_grad = []
    for d in range(dim):
        w = inv_jac[:, d, :]  # (n_elem, dim) weights for vertices 1..dim
        g_rows = np.concatenate([np.tile(erange, dim), erange])
        g_cols = np.concatenate([elems[:, 1:].ravel(order="F"), elems[:, 0]])
        g_vals = np.concatenate([w.ravel(order="F"), -w.sum(axis=1)])
        gd = SparseMatrix.from_coo(g_rows, g_cols, g_vals, (n_elem, n_vert))
        element_grad.append(gd)
        node_grad.append(SparseMatrix(averaging.csr @ gd.csr))

    return GradientOperator(mesh, inv_jac, dets, averaging, element_grad, node_grad)


def _invert(jac: np.ndarray, dets: np.ndarray, dim: int) -> np.ndarray:
    """Closed-form batched inverse of 1x1 / 2x2 / 3x3 Jacobians."""
    if dim == 1:
        return 1.0 / jac
    inv = np.empty_like(jac)
    if dim == 2:
        inv[:, 0, 0] = jac[:, 1, 1]
        inv[:, 0, 1] = -jac[:, 0, 1]
        inv[:, 1, 0] = -jac[:, 1, 0]
        inv[:, 1, 1] = jac[:, 0, 0]
    else:
        for i in range(3):
            for j in range(3):
                a, b = (i + 1) % 3, (i + 2) % 3
                c, d = (j + 1) % 3, (j + 2) % 3
                # adjugate: cofactor of jac[j, i]
                inv[:, i, j] = jac[:, c, a] * jac[:, d, b] - jac[:, c, b] * jac[:, d, a]
    return inv / dets[:, None, None]


def element_gradient(op: GradientOperator, u: np.ndarray) -> np.ndarray:
    """Constant gradient per element, shape (n_elements, dim)."""
    u = _check_field(op, u)
    return np.stack([g.matvec(u) for g in op.element_grad], axis=1)


def node_derivative(op: GradientOperator, u, axis: int):
    """One component of the averaged node gradient.

    Accepts a plain array or an autodiff ``Tensor`` and returns the same
    kind, so residuals can differentiate through it.
    """
    if not 0 <= axis < op.mesh.dim:
        raise ValueError(f"axis {axis} out of range for dim {op.mesh.dim}")
    if isinstance(u, Tensor):
        return ad.sparse_matmul(op.node_grad[axis], u)
    return op.node_grad[axis].matvec(_check_field(op, u))


def node_gradient(op: GradientOperator, u: np.ndarray) -> np.ndarray:
    """Averaged gradient at every node, shape (n_vertices, dim).

    On a uniform 1D mesh the interior rows reduce exactly to the central
    difference (u[i+1] - u[i-1]) / (2 dx).
    """
    u = _check_field(op, u)
    return np.stack([g.matvec(u) for g in op.node_grad], axis=1)


def second_derivative(op: GradientOperator, u, axis_out: int, axis_in: int):
    """Composed second derivative d/d(axis_out) of d/d(axis_in) of u.

    Array in, array out; ``Tensor`` in, ``Tensor`` out.
    """
    return node_derivative(op, node_derivative(op, u, axis_in), axis_out)


def _check_field(op: GradientOperator, u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    n = op.mesh.n_vertices
    if u.shape[0] != n:
        raise ValueError(f"field has {u.shape[0]} values, mesh has {n} vertices")
    return u


def naive_fd_gradient(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """Per-axis neighbor difference quotients, averaged per node.

    For node i with mesh neighbors j, axis d:

        mean_j (u[j] - u[i]) / (p[j][d] - p[i][d])

    This diagnostic ignores the mesh geometry beyond adjacency and fails
    by construction whenever two neighbors share a coordinate: any
    neighbor pair with per-axis distance below 1e-9 raises
    ``AxisAlignedDegeneracyError``.  On a regular triangulation every
    axis-parallel edge triggers it.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (mesh.n_vertices,):
        raise ValueError("field length must match the vertex count")
    edges = mesh_edges(mesh)
    delta = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
    tiny = np.abs(delta) < AXIS_TOL
    if tiny.any():
        e, d = np.argwhere(tiny)[0]
        i, j = edges[e]
        raise AxisAlignedDegeneracyError(
            f"nodes {i} and {j} are axis-aligned along axis {d} "
            f"(|delta| = {abs(delta[e, d]):.3e} < {AXIS_TOL}); "
            "per-axis difference quotients are undefined on this mesh"
        )
    du = u[edges[:, 1]] - u[edges[:, 0]]
    quot = du[:, None] / delta  # same value seen from both endpoints
    out = np.zeros((mesh.n_vertices, mesh.dim))
    np.add.at(out, edges[:, 0], quot)
    np.add.at(out, edges[:, 1], quot)
    deg = np.bincount(edges.ravel(), minlength=mesh.n_vertices).astype(np.float64)
    if (deg == 0).any():
        lonely = int(np.argmax(deg == 0))
        raise DegenerateMeshError(f"vertex {lonely} has no neighbors")
    return out / deg[:, None]
