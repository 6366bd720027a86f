import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import meshpde.autodiff as ad
from meshpde.autodiff import SparseMatrix, Tensor, backward, tensor

from oracles import central_difference_gradients


def rel_err(got, want):
    denom = max(np.linalg.norm(np.ravel(want)), 1e-12)
    return np.linalg.norm(np.ravel(got) - np.ravel(want)) / denom


def test_forward_values_match_numpy():
    a = tensor(np.array([1.0, -2.0, 3.0]))
    b = tensor(np.array([0.5, 4.0, -1.0]))
    assert np.array_equal((a + b).data, np.array([1.5, 2.0, 2.0]))
    assert np.array_equal((a - b).data, np.array([0.5, -6.0, 4.0]))
    assert np.array_equal((a * b).data, np.array([0.5, -8.0, -3.0]))
    assert np.array_equal((a / 2.0).data, np.array([0.5, -1.0, 1.5]))
    assert np.array_equal(ad.relu(a).data, np.array([1.0, 0.0, 3.0]))
    assert np.array_equal(ad.abs(a).data, np.array([1.0, 2.0, 3.0]))
    assert ad.mean(a).data == pytest.approx(2.0 / 3.0)
    assert ad.sum(a).data == 2.0


def test_quadratic_gradient_by_hand():
    x = tensor(np.array([1.0, 2.0, -3.0]), requires_grad=True)
    f = ad.sum(x * x + x)
    backward(f)
    assert np.allclose(x.grad, 2.0 * x.data + 1.0)


def test_diamond_graph_reuse():
    # f = (x + y) * (x - y): df/dx = 2x, df/dy = -2y
    x = tensor(np.array([1.5, -0.5]), requires_grad=True)
    y = tensor(np.array([2.0, 1.0]), requires_grad=True)
    f = ad.sum((x + y) * (x - y))
    backward(f)
    assert np.allclose(x.grad, 2.0 * x.data)
    assert np.allclose(y.grad, -2.0 * y.data)


def test_grad_accumulates_when_node_reused():
    x = tensor(np.array([3.0, -1.0]), requires_grad=True)
    z = x * x
    f = ad.sum(z + z)
    backward(f)
    assert np.allclose(x.grad, 4.0 * x.data)


def test_scalar_broadcasting():
    x = tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
    f = ad.sum(3.0 * x + 1.0)
    backward(f)
    assert np.allclose(x.grad, 3.0)


def test_constant_leaves_get_no_grad():
    x = tensor(np.array([1.0, 2.0]), requires_grad=True)
    c = tensor(np.array([5.0, 6.0]))
    f = ad.sum(x * c)
    backward(f)
    assert np.allclose(x.grad, c.data)
    assert c.grad is None


def test_backward_requires_scalar():
    x = tensor(np.array([1.0, 2.0]), requires_grad=True)
    with pytest.raises(ValueError):
        backward(x * x)


def test_backward_twice_is_an_error():
    x = tensor(np.array([1.0]), requires_grad=True)
    f = ad.sum(x * x)
    backward(f)
    with pytest.raises(RuntimeError, match="re-run the forward pass"):
        backward(f)


def test_relu_and_abs_zero_subgradients():
    x = tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
    backward(ad.sum(ad.relu(x)))
    assert np.array_equal(x.grad, np.array([0.0, 0.0, 1.0]))
    y = tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
    backward(ad.sum(ad.abs(y)))
    assert np.array_equal(y.grad, np.array([-1.0, 0.0, 1.0]))


def test_matmul_gradients_match_fd():
    rng = np.random.default_rng(0)
    a0 = rng.normal(size=(3, 4))
    b0 = rng.normal(size=(4, 2))

    def f(arrays):
        a, b = arrays
        return float(np.sum((a @ b) ** 2))

    want_a, want_b = central_difference_gradients(f, [a0, b0])
    a = tensor(a0, requires_grad=True)
    b = tensor(b0, requires_grad=True)
    backward(ad.sum(ad.square(ad.matmul(a, b))))
    assert rel_err(a.grad, want_a) < 1e-7
    assert rel_err(b.grad, want_b) < 1e-7


def test_sparse_matmul_matches_dense():
    rng = np.random.default_rng(1)
    dense = np.zeros((5, 4))
    dense[rng.integers(0, 5, 8), rng.integers(0, 4, 8)] = rng.normal(size=8)
    sm = SparseMatrix.from_coo(*np.nonzero(dense), dense[np.nonzero(dense)], dense.shape)
    x0 = rng.normal(size=(4, 3))

    x = tensor(x0, requires_grad=True)
    out = ad.sparse_matmul(sm, x)
    assert np.allclose(out.data, dense @ x0)

    def f(arrays):
        return float(np.sum((dense @ arrays[0]) ** 2))

    (want,) = central_difference_gradients(f, [x0])
    backward(ad.sum(ad.square(out)))
    assert rel_err(x.grad, want) < 1e-7


def test_sparse_from_coo_sums_duplicates():
    sm = SparseMatrix.from_coo(
        np.array([0, 0]), np.array([1, 1]), np.array([2.0, 3.0]), (2, 2)
    )
    assert np.allclose(sm.matvec(np.array([0.0, 1.0])), np.array([5.0, 0.0]))


def test_scatter_mean_forward_and_empty_group():
    vals = tensor(np.array([[1.0], [3.0], [5.0]]))
    groups = np.array([0, 0, 2])
    out = ad.scatter_mean(vals, groups, 3)
    assert np.allclose(out.data, np.array([[2.0], [0.0], [5.0]]))


def test_scatter_mean_gradients_match_fd():
    rng = np.random.default_rng(2)
    v0 = rng.normal(size=(6, 2))
    groups = np.array([0, 1, 1, 3, 0, 3])

    def f(arrays):
        out = np.zeros((4, 2))
        np.add.at(out, groups, arrays[0])
        counts = np.bincount(groups, minlength=4).reshape(-1, 1)
        out = out / np.maximum(counts, 1)
        return float(np.sum(out**2))

    (want,) = central_difference_gradients(f, [v0])
    v = tensor(v0, requires_grad=True)
    backward(ad.sum(ad.square(ad.scatter_mean(v, groups, 4))))
    assert rel_err(v.grad, want) < 1e-7


def test_gather_concat_bias_reshape_gradients_match_fd():
    rng = np.random.default_rng(3)
    x0 = rng.normal(size=(4, 3))
    b0 = rng.normal(size=3)
    idx = np.array([0, 2, 2, 3, 1])

    def f(arrays):
        x, b = arrays
        g = x[idx]
        cat = np.concatenate([g, g * 2.0], axis=1)
        out = (cat[:, :3] + b).reshape(-1)
        return float(np.sum(out**3))

    want_x, want_b = central_difference_gradients(f, [x0, b0])

    x = tensor(x0, requires_grad=True)
    b = tensor(b0, requires_grad=True)
    g = ad.gather_rows(x, idx)
    cat = ad.concat_cols([g, g * 2.0])
    sliced = ad.gather_rows(ad.reshape(cat, (5, 6)), np.arange(5))
    # keep first three columns by multiplying with a selector matrix
    sel = np.zeros((6, 3))
    sel[:3, :3] = np.eye(3)
    out = ad.reshape(ad.add_bias(ad.matmul(sliced, tensor(sel)), b), (15,))
    backward(ad.sum(out * out * out))
    assert rel_err(x.grad, want_x) < 1e-6
    assert rel_err(b.grad, want_b) < 1e-6


def _random_graph_value_and_grads(seed: int, eps=1e-6):
    """A small randomized op pipeline exercised both through the package and
    through the finite-difference oracle."""
    rng = np.random.default_rng(seed)
    n, m = rng.integers(2, 6, size=2)
    x0 = rng.normal(size=(n, m))
    w0 = rng.normal(size=(m, 3))
    groups = rng.integers(0, 3, size=n)
    use_relu = bool(rng.integers(0, 2))
    use_abs = bool(rng.integers(0, 2))

    def run(arrays, module):
        x, w = arrays
        h = module.matmul(x, w) if module is ad else x @ w
        if use_relu:
            h = module.relu(h) if module is ad else np.maximum(h, 0.0)
        if module is ad:
            h = module.scatter_mean(h, groups, 3)
            h = module.abs(h) if use_abs else module.square(h)
            return module.mean(h)
        out = np.zeros((3, 3))
        np.add.at(out, groups, h)
        counts = np.maximum(np.bincount(groups, minlength=3), 1).reshape(-1, 1)
        out = out / counts
        out = np.abs(out) if use_abs else out**2
        return float(np.mean(out))

    want = central_difference_gradients(lambda ar: run(ar, np), [x0, w0], eps)
    x = tensor(x0, requires_grad=True)
    w = tensor(w0, requires_grad=True)
    backward(run([x, w], ad))
    return (x.grad, w.grad), want


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10**9))
def test_random_graphs_match_finite_differences(seed):
    got, want = _random_graph_value_and_grads(seed)
    for g, w in zip(got, want):
        assert rel_err(g, w) < 1e-5


def test_tensor_repr_mentions_shape():
    t = tensor(np.zeros((2, 3)), requires_grad=True)
    assert "(2, 3)" in repr(t)
