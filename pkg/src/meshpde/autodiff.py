"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

Just enough machinery to differentiate the graph-network surrogate and the
physics-constrained loss: tensors wrap numpy arrays, every operation
records its parents and a backward rule, and ``backward`` replays the
recording in reverse creation order (a valid reverse-topological order,
since operands always exist before their results).

Broadcasting is deliberately restricted: elementwise ops take equal shapes
or a scalar on one side, nothing else.  All data is float64.  Gradients
accumulate into ``Tensor.grad``; a graph can be traversed backward once —
differentiating again requires re-running the forward pass.
"""

from __future__ import annotations

import itertools

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Tensor",
    "SparseMatrix",
    "tensor",
    "backward",
    "add",
    "sub",
    "mul",
    "matmul",
    "sparse_matmul",
    "relu",
    "abs",
    "square",
    "mean",
    "sum",
    "scatter_mean",
    "gather_rows",
    "concat_cols",
    "add_bias",
    "reshape",
]

_counter = itertools.count()


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation.

    Attributes
    ----------
    data : np.ndarray
        The value, always float64.
    requires_grad : bool
        True for trainable leaves and anything computed from one.
    grad : np.ndarray | None
        Populated by ``backward``; accumulates across calls until reset.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_order", "_done")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()  # ((parent, backward_fn), ...)
        self._order = next(_counter)
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars allowed, tensor operands must match shapes
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported")
        return mul(self, 1.0 / float(other))

    def __abs__(self):
        return abs(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Wrap ``data`` (or pass through an existing Tensor unchanged)."""
    if isinstance(data, Tensor):
        return data
    return Tensor(data, requires_grad)


class SparseMatrix:
    """Constant CSR matrix usable in ``sparse_matmul``.

    Rows keep their column indices sorted, so the contraction order per
    output entry is fixed and results are bit-reproducible.  The transpose
    is precomputed for the backward pass.
    """

    def __init__(self, matrix):
        m = sp.csr_matrix(matrix)
        m.sort_indices()
        self.csr = m
        t = m.T.tocsr()
        t.sort_indices()
        self._csr_t = t

    @classmethod
    def from_coo(cls, rows, cols, vals, shape) -> "SparseMatrix":
        return cls(sp.coo_matrix((vals, (rows, cols)), shape=shape))

    @property
    def shape(self):
        return self.csr.shape

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.csr @ x

    def rmatvec(self, g: np.ndarray) -> np.ndarray:
        return self._csr_t @ g


def _make(data, parents) -> Tensor:
    """Result tensor; parents that need no gradient are dropped."""
    kept = tuple((p, fn) for p, fn in parents if p.requires_grad or p._parents)
    out = Tensor(data, requires_grad=bool(kept))
    out._parents = kept
    return out


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar; leaf grads accumulate into ``.grad``.

    Raises if called twice on the same recorded graph: the recording is
    consumed by the traversal and must be rebuilt by a new forward pass.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss._done:
        raise RuntimeError(
            "backward already consumed this graph; re-run the forward pass"
        )

    nodes = []
    seen = {id(loss)}
    stack = [loss]
    while stack:
        node = stack.pop()
        nodes.append(node)
        for parent, _ in node._parents:
            if id(parent) not in seen:
                seen.add(id(parent))
                stack.append(parent)
    # creation order is a topological order: parents precede children
    nodes.sort(key=lambda n: n._order, reverse=True)

    grads = {id(loss): np.ones_like(loss.data)}
    for node in nodes:
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node._done = True
        if node.requires_grad and not node._parents:
            node.grad = g if node.grad is None else node.grad + g
        for parent, fn in node._parents:
            delta = fn(g)
            acc = grads.get(id(parent))
            grads[id(parent)] = delta if acc is None else acc + delta


def _scalar(x) -> float | None:
    """Python number for scalar operands, else None."""
    if isinstance(x, (int, float, np.floating, np.integer)):
        return float(x)
    return None


def _binary_shapes(a: Tensor, b: Tensor):
    """Equal shapes, or one side a single-element tensor (scalar broadcast)."""
    if a.data.shape == b.data.shape:
        return
    if a.data.size == 1 or b.data.size == 1:
        return
    raise ValueError(f"shape mismatch {a.data.shape} vs {b.data.shape}")


def _reduce_to(shape, g):
    """Collapse a broadcast gradient back to a scalar operand's shape."""
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=np.float64).reshape(shape)


def add(a, b) -> Tensor:
    """Elementwise a + b; either side may be a scalar."""
    sa, sb = _scalar(a), _scalar(b)
    if sa is not None:
        b = tensor(b)
        return _make(sa + b.data, [(b, lambda g: g)])
    if sb is not None:
        a = tensor(a)
        return _make(a.data + sb, [(a, lambda g: g)])
    a, b = tensor(a), tensor(b)
    _binary_shapes(a, b)
    return _make(
        a.data + b.data,
        [
            (a, lambda g: _reduce_to(a.data.shape, g)),
            (b, lambda g: _reduce_to(b.data.shape, g)),
        ],
    )


def sub(a, b) -> Tensor:
    """Elementwise a - b; either side may be a scalar."""
    sa, sb = _scalar(a), _scalar(b)
    if sa is not None:
        b = tensor(b)
        return _make(sa - b.data, [(b, lambda g: -g)])
    if sb is not None:
        a = tensor(a)
        return _make(a.data - sb, [(a, lambda g: g)])
    a, b = tensor(a), tensor(b)
    _binary_shapes(a, b)
    return _make(
        a.data - b.data,
        [
            (a, lambda g: _reduce_to(a.data.shape, g)),
            (b, lambda g: _reduce_to(b.data.shape, -g)),
        ],
    )


def mul(a, b) -> Tensor:
    """Elementwise a * b; either side may be a scalar."""
    sa, sb = _scalar(a), _scalar(b)
    if sa is not None:
        b = tensor(b)
        return _make(sa * b.data, [(b, lambda g: sa * g)])
    if sb is not None:
        a = tensor(a)
        return _make(a.data * sb, [(a, lambda g: sb * g)])
    a, b = tensor(a), tensor(b)
    _binary_shapes(a, b)
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        [
            (a, lambda g: _reduce_to(ad.shape, g * bd)),
            (b, lambda g: _reduce_to(bd.shape, g * ad)),
        ],
    )


def matmul(a, b) -> Tensor:
    """2-D matrix product."""
    a, b = tensor(a), tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    ad, bd = a.data, b.data
    return _make(
        ad @ bd,
        [(a, lambda g: g @ bd.T), (b, lambda g: ad.T @ g)],
    )


def sparse_matmul(matrix: SparseMatrix, x) -> Tensor:
    """Sparse-constant times dense tensor; x is 1-D or 2-D."""
    x = tensor(x)
    if x.data.ndim not in (1, 2):
        raise ValueError("sparse_matmul expects a 1-D or 2-D dense operand")
    if x.data.shape[0] != matrix.shape[1]:
        raise ValueError(
            f"sparse_matmul shape mismatch: {matrix.shape} @ {x.data.shape}"
        )
    return _make(matrix.matvec(x.data), [(x, matrix.rmatvec)])


def relu(x) -> Tensor:
    """max(x, 0); gradient is zero where x <= 0."""
    x = tensor(x)
    keep = x.data > 0
    return _make(np.where(keep, x.data, 0.0), [(x, lambda g: g * keep)])


def abs(x) -> Tensor:  # noqa: A001 - mirrors numpy's naming
    """|x| with subgradient 0 at x == 0."""
    x = tensor(x)
    s = np.sign(x.data)
    return _make(np.abs(x.data), [(x, lambda g: g * s)])


def square(x) -> Tensor:
    """x**2 elementwise."""
    x = tensor(x)
    xd = x.data
    return _make(xd * xd, [(x, lambda g: 2.0 * xd * g)])


def mean(x) -> Tensor:
    """Mean over all entries, scalar result."""
    x = tensor(x)
    n = x.data.size
    if n == 0:
        raise ValueError("mean of an empty tensor")
    shape = x.data.shape
    return _make(
        np.asarray(x.data.mean()), [(x, lambda g: np.full(shape, float(g) / n))]
    )


def sum(x) -> Tensor:  # noqa: A001 - mirrors numpy's naming
    """Sum over all entries, scalar result."""
    x = tensor(x)
    shape = x.data.shape
    return _make(np.asarray(x.data.sum()), [(x, lambda g: np.full(shape, float(g)))])


def scatter_mean(values, groups: np.ndarray, n_groups: int) -> Tensor:
    """Per-group mean of rows: out[k] = mean of values[i] with groups[i] == k.

    Empty groups produce zeros (and propagate no gradient).  ``groups`` is a
    constant integer vector, one entry per row of ``values``.
    """
    values = tensor(values)
    groups = np.asarray(groups)
    if not np.issubdtype(groups.dtype, np.integer):
        raise ValueError("groups must be integers")
    if groups.ndim != 1 or len(groups) != values.data.shape[0]:
        raise ValueError("groups must index the first axis of values")
    if len(groups) and (groups.min() < 0 or groups.max() >= n_groups):
        raise ValueError("group index out of range")
    counts = np.bincount(groups, minlength=n_groups).astype(np.float64)
    out_shape = (n_groups,) + values.data.shape[1:]
    sums = np.zeros(out_shape)
    np.add.at(sums, groups, values.data)
    denom = np.where(counts > 0, counts, 1.0)
    if values.data.ndim > 1:
        denom = denom.reshape((-1,) + (1,) * (values.data.ndim - 1))
    out = sums / denom

    def bw(g):
        return g[groups] / denom[groups]

    return _make(out, [(values, bw)])


def gather_rows(x, idx: np.ndarray) -> Tensor:
    """Select rows x[idx]; duplicate indices accumulate gradient."""
    x = tensor(x)
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ValueError("row indices must be integers")
    xd = x.data

    def bw(g):
        out = np.zeros_like(xd)
        np.add.at(out, idx, g)
        return out

    return _make(xd[idx], [(x, bw)])


def concat_cols(parts) -> Tensor:
    """Concatenate 2-D tensors along the feature (second) axis."""
    parts = [tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat_cols needs at least one operand")
    for p in parts:
        if p.data.ndim != 2:
            raise ValueError("concat_cols expects 2-D operands")
    widths = [p.data.shape[1] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(widths)])

    def slicer(i):
        lo, hi = offsets[i], offsets[i + 1]
        return lambda g: g[:, lo:hi]

    data = np.concatenate([p.data for p in parts], axis=1)
    return _make(data, [(p, slicer(i)) for i, p in enumerate(parts)])


def add_bias(x, b) -> Tensor:
    """Add a bias row-vector b (F,) to every row of x (N, F)."""
    x, b = tensor(x), tensor(b)
    if x.data.ndim != 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise ValueError(
            f"add_bias shapes incompatible: {x.data.shape} and {b.data.shape}"
        )
    return _make(
        x.data + b.data[None, :],
        [(x, lambda g: g), (b, lambda g: g.sum(axis=0))],
    )


def reshape(x, shape) -> Tensor:
    """Reshape without copying semantics; gradient reshapes back."""
    x = tensor(x)
    old = x.data.shape
    return _make(x.data.reshape(shape), [(x, lambda g: g.reshape(old))])
