"""PDE problem presets and the physics-constrained residual loss.

Time stepping is implicit: the time derivative is ``(u_next - u_t) / dt``
and every spatial term is evaluated on ``u_next``, so driving the
residual to zero performs a backward-Euler step.  A steady problem drops
the time term entirely.

The scalar loss is

    alpha * mean(pde_residual^2)  +  beta * mean(bc_residual^2)

where the PDE mean runs over non-obstacle nodes and the boundary
residual is the field value at zero-Dirichlet nodes.  Everything is
expressed through the autodiff module, so the loss differentiates with
respect to ``u_next`` (and through it, network parameters).  Plain
arrays in, plain arrays out; tensors in, tensors out.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .diffops import GradientOperator
from .mesh import Environment, Mesh, NodeType, build_regular_1d, build_regular_tri_2d

__all__ = [
    "ProblemSpec",
    "PROBLEMS",
    "get_problem",
    "initial_condition",
    "canonical_mesh",
    "canonical_env",
    "pde_residual",
    "bc_residual",
    "loss",
    "loss_weight_vectors",
    "weighted_loss",
]


@dataclass(frozen=True)
class ProblemSpec:
    """One PDE problem: equation kind, coefficient, weights, defaults.

    ``coefficient`` is the diffusivity for heat problems and the
    viscosity for Burgers; the eikonal equation has none.  ``bc_types``
    lists the node types carrying a zero-Dirichlet condition (empty for
    the unconstrained 1D heat problem).
    """

    name: str
    dim: int
    kind: str  # "heat" | "eikonal" | "burgers"
    coefficient: float
    alpha: float
    beta: float
    bc_types: tuple[int, ...]
    domain: tuple[float, float] = (-1.0, 1.0)
    dx: float = 0.05
    dt: float = 0.01
    n_timesteps: int = 100
    steady: bool = False


PROBLEMS: dict[str, ProblemSpec] = {
    "heat1d": ProblemSpec(
        name="heat1d",
        dim=1,
        kind="heat",
        coefficient=0.4,
        alpha=1.0,
        beta=0.0,
        bc_types=(),
    ),
    # same problem with ten times smaller diffusivity
    "heat1d_slow": ProblemSpec(
        name="heat1d_slow",
        dim=1,
        kind="heat",
        coefficient=0.04,
        alpha=1.0,
        beta=0.0,
        bc_types=(),
    ),
    "eikonal1d": ProblemSpec(
        name="eikonal1d",
        dim=1,
        kind="eikonal",
        coefficient=0.0,
        alpha=1.0,
        beta=100.0,
        bc_types=(int(NodeType.WALL),),
    ),
    "burgers1d": ProblemSpec(
        name="burgers1d",
        dim=1,
        kind="burgers",
        coefficient=0.01 / np.pi,
        alpha=1.0,
        beta=10.0,
        bc_types=(int(NodeType.WALL),),
    ),
    "heat2d": ProblemSpec(
        name="heat2d",
        dim=2,
        kind="heat",
        coefficient=0.5,
        alpha=1.0,
        beta=100.0,
        bc_types=(int(NodeType.WALL), int(NodeType.OBSTACLE)),
    ),
}


def get_problem(name: str, **overrides) -> ProblemSpec:
    """Look up a preset by name, optionally overriding fields."""
    try:
        spec = PROBLEMS[name]
    except KeyError:
        raise ValueError(
            f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}"
        ) from None
    return replace(spec, **overrides) if overrides else spec


def initial_condition(spec: ProblemSpec, mesh: Mesh) -> np.ndarray:
    """Canonical initial field for the 1D presets.

    heat1d:    sin(2 pi x) / (2 pi x), value 1 at x = 0
    eikonal1d: 0
    burgers1d: -sin(pi x)

    2D heat environments get their initial field from the sampled
    sources instead; asking for one here is an error.
    """
    x = mesh.vertices[:, 0]
    if spec.kind == "heat" and spec.dim == 1:
        return np.sinc(2.0 * x)  # np.sinc(z) = sin(pi z) / (pi z)
    if spec.kind == "eikonal":
        return np.zeros_like(x)
    if spec.kind == "burgers":
        return -np.sin(np.pi * x)
    raise ValueError(f"{spec.name} has no canonical initial condition")


def canonical_mesh(spec: ProblemSpec, dx: float | None = None) -> Mesh:
    """Regular mesh of the problem domain at spacing dx (default preset dx)."""
    lo, hi = spec.domain
    dx = spec.dx if dx is None else dx
    if spec.dim == 1:
        return build_regular_1d(lo, hi, dx)
    if spec.dim == 2:
        return build_regular_tri_2d(lo, hi, dx)
    raise ValueError(f"no canonical mesh for dim {spec.dim}")


def canonical_env(spec: ProblemSpec, dx: float | None = None) -> Environment:
    """Mesh plus canonical initial condition (1D problems only)."""
    mesh = canonical_mesh(spec, dx)
    return Environment(mesh, initial_condition(spec, mesh))


def _residual_expr(spec: ProblemSpec, mats, u_t, u_next):
    """The implicit-step residual as an autodiff expression.

    ``mats`` holds one node-derivative SparseMatrix per axis; ``u_next``
    (and ``u_t`` unless steady) are tensors, 1-D or column-stacked 2-D.
    """

    def d(v, axis):
        return ad.sparse_matmul(mats[axis], v)

    if spec.kind == "heat":
        lap = d(d(u_next, 0), 0)
        for axis in range(1, spec.dim):
            lap = lap + d(d(u_next, axis), axis)
        spatial = -spec.coefficient * lap
    elif spec.kind == "eikonal":
        if spec.dim != 1:
            raise NotImplementedError("eikonal residual is 1D only")
        spatial = ad.abs(d(u_next, 0)) - 1.0
    elif spec.kind == "burgers":
        if spec.dim != 1:
            raise NotImplementedError("burgers residual is 1D only")
        du = d(u_next, 0)
        spatial = u_next * du - spec.coefficient * d(du, 0)
    else:
        raise ValueError(f"unknown problem kind {spec.kind!r}")

    if spec.steady:
        return spatial
    if u_t is None:
        raise ValueError("u_t is required unless the problem is steady")
    return (u_next - u_t) / spec.dt + spatial


def pde_residual(spec: ProblemSpec, op: GradientOperator, u_t, u_next):
    """Implicit-step PDE residual at every node.

    Arrays in, array out; a ``Tensor`` ``u_next`` gives a ``Tensor`` out
    (differentiable with respect to it).
    """
    if op.mesh.dim != spec.dim:
        raise ValueError(f"operator is {op.mesh.dim}D but problem is {spec.dim}D")
    want_tensor = isinstance(u_next, Tensor)
    r = _residual_expr(
        spec,
        op.node_grad,
        None if u_t is None else ad.tensor(u_t),
        ad.tensor(u_next),
    )
    return r if want_tensor else r.data


def bc_residual(spec: ProblemSpec, env: Environment, u_next):
    """Field values at zero-Dirichlet nodes (empty when the problem has
    no boundary condition, as for heat1d)."""
    idx = bc_node_indices(spec, env.mesh)
    if isinstance(u_next, Tensor):
        return ad.gather_rows(u_next, idx)
    return np.asarray(u_next, dtype=np.float64)[idx]


def bc_node_indices(spec: ProblemSpec, mesh: Mesh) -> np.ndarray:
    mask = np.isin(mesh.node_types, spec.bc_types)
    return np.flatnonzero(mask)


def pde_node_mask(mesh: Mesh) -> np.ndarray:
    """PDE residual mask: every node that is not inside an obstacle."""
    return mesh.node_types != int(NodeType.OBSTACLE)


def loss_weight_vectors(spec: ProblemSpec, env: Environment):
    """Per-node quadratic weights (w_pde, w_bc) such that

        loss = sum(w_pde * r_pde^2) + sum(w_bc * u_next^2)

    equals alpha * mean-square PDE residual over non-obstacle nodes plus
    beta * mean-square boundary residual.  ``w_bc`` is all zero when the
    problem has no boundary condition.
    """
    n = env.mesh.n_vertices
    pde_mask = pde_node_mask(env.mesh)
    w_pde = np.where(pde_mask, spec.alpha / pde_mask.sum(), 0.0)
    w_bc = np.zeros(n)
    bc_idx = bc_node_indices(spec, env.mesh)
    if spec.beta != 0.0 and len(bc_idx):
        w_bc[bc_idx] = spec.beta / len(bc_idx)
    return w_pde, w_bc


def weighted_loss(spec: ProblemSpec, mats, w_pde, w_bc, u_t, u_next):
    """Quadratic-form loss used by both the public ``loss`` and the
    trainer's stacked batches (where fields of several environments are
    concatenated and ``mats`` are block-diagonal)."""
    r = _residual_expr(spec, mats, u_t, u_next)
    total = ad.sum(ad.square(r) * ad.tensor(w_pde))
    if np.any(w_bc):
        total = total + ad.sum(ad.square(u_next) * ad.tensor(w_bc))
    return total


def loss(spec: ProblemSpec, env: Environment, op: GradientOperator, u_t, u_next):
    """Physics-constrained scalar loss for one implicit step.

    Differentiable with respect to ``u_next`` when it is a ``Tensor``;
    returns a plain float otherwise.
    """
    w_pde, w_bc = loss_weight_vectors(spec, env)
    want_tensor = isinstance(u_next, Tensor)
    out = weighted_loss(
        spec,
        op.node_grad,
        w_pde,
        w_bc,
        None if u_t is None else ad.tensor(u_t),
        ad.tensor(u_next),
    )
    return out if want_tensor else float(out.data)
