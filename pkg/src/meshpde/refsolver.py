"""Classical reference solutions on refined meshes.

The reference discretization is the same implicit scheme the loss
encodes — backward Euler with all spatial terms built from the composed
mesh operators — but run on a spatially refined mesh (coarse nodes are a
subset of fine nodes) with a smaller time step, then restricted back to
the coarse nodes and times.  Heat problems need one sparse linear solve
per step; the nonlinear problems take a damped Picard iteration.

The absolute value in the eikonal equation is smoothed as
``sqrt(g^2 + 1e-12)`` inside the implicit solver only; the residual
definitions elsewhere keep the exact kink.

Linear systems use conjugate gradients when the matrix is symmetric and
a cached sparse LU factorization otherwise (the one-sided boundary rows
of the composed operators make the unreduced systems non-symmetric and
not diagonally dominant, so simple stationary iterations are unsafe).
"""

from __future__ import annotations

import hashlib
import json
import os
import time

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .diffops import GradientOperator, build_gradient_operator
from .mesh import Environment, Mesh, load_field, make_environment, save_field
from .residuals import ProblemSpec, canonical_mesh, initial_condition

__all__ = [
    "ReferenceSolution",
    "ConvergenceError",
    "EIKONAL_SMOOTHING",
    "refine_mesh",
    "make_heat_stepper",
    "make_picard_stepper",
    "make_stepper",
    "solve_reference",
    "mse_vs_reference",
    "cached_reference",
]

EIKONAL_SMOOTHING = 1e-12

PICARD_TOL = 1e-10
PICARD_MAX_ITER = 500
LINEAR_RTOL = 1e-12


class ConvergenceError(RuntimeError):
    """An implicit solve failed to reach tolerance."""


@dataclass
class ReferenceSolution:
    """Reference trajectory restricted to the coarse mesh and times.

    ``fields`` has shape (n_steps + 1, n_coarse_nodes): row k is the fine
    solution at coarse time k * dt, sampled at the coarse node positions
    (``restriction`` holds their fine indices).  ``fine_fields`` keeps
    the full fine trajectory only on request.
    """

    problem: str
    fields: np.ndarray
    restriction: np.ndarray
    refine: int
    time_refine: int
    dt_fine: float
    fine_mesh: Mesh | None = None
    fine_fields: np.ndarray | None = None
    wall_seconds: float | None = None


def refine_mesh(spec: ProblemSpec, refine: int) -> tuple[Mesh, np.ndarray]:
    """Refined canonical mesh plus the coarse-to-fine node index map."""
    if refine < 1:
        raise ValueError("refine must be >= 1")
    coarse = canonical_mesh(spec)
    fine = canonical_mesh(spec, spec.dx / refine)
    if spec.dim == 1:
        n = coarse.n_vertices
        idx = np.arange(n) * refine
    else:
        n = int(round(np.sqrt(coarse.n_vertices)))
        nf = int(round(np.sqrt(fine.n_vertices)))
        i = np.arange(n)
        ii, jj = np.meshgrid(i * refine, i * refine, indexing="xy")
        idx = (jj * nf + ii).ravel()
    if not np.allclose(
        fine.vertices[idx], coarse.vertices, rtol=0.0, atol=1e-12
    ):
        raise AssertionError("fine mesh nodes do not contain the coarse nodes")
    return fine, idx


def _dirichlet_mask(mesh: Mesh, bc_types) -> np.ndarray:
    return np.isin(mesh.node_types, tuple(int(t) for t in bc_types))


def _make_linear_solver(a: sp.spmatrix):
    """Solve A x = b to relative residual 1e-12.

    Conjugate gradients for symmetric A; otherwise a cached LU
    factorization (exact, well below tolerance).
    """
    a = a.tocsr()
    asym = a - a.T
    symmetric = np.abs(asym.data).max() <= 1e-12 * np.abs(a.data).max() if asym.nnz else True
    if symmetric:
        def solve_cg(b):
            x, info = spla.cg(a, b, rtol=LINEAR_RTOL, atol=0.0, maxiter=10 * a.shape[0])
            if info != 0:
                raise ConvergenceError(f"conjugate gradients stalled (info={info})")
            return x

        return solve_cg
    lu = spla.splu(a.tocsc())
    return lu.solve


def make_heat_stepper(op: GradientOperator, kappa: float, dt: float, dirichlet_mask):
    """Backward-Euler step for the heat equation, ``(I - dt k L) u' = u``.

    Rows of Dirichlet nodes are replaced by identity with zero data, so
    tagged nodes stay exactly zero; with no mask the boundary is left
    unconstrained (zero-flux in the weak sense of the averaged
    operators).
    """
    n = op.mesh.n_vertices
    lap = sum(m.csr @ m.csr for m in op.node_grad)
    a = sp.identity(n, format="csr") - dt * kappa * lap
    mask = np.asarray(dirichlet_mask, dtype=bool)
    if mask.any():
        # replace tagged rows by identity: free-diag @ A + bc-diag
        free = sp.diags((~mask).astype(np.float64))
        a = (free @ a + sp.diags(mask.astype(np.float64))).tocsr()
    solver = _make_linear_solver(a)

    def step(u: np.ndarray) -> np.ndarray:
        b = u.copy()
        b[mask] = 0.0
        return solver(b)

    return step


def make_picard_stepper(
    spec: ProblemSpec,
    op: GradientOperator,
    dt: float,
    dirichlet_mask,
    omega: float = 0.5,
    tol: float = PICARD_TOL,
    max_iter: int = PICARD_MAX_ITER,
):
    """Damped fixed-point solver for one implicit step of a nonlinear
    problem: iterate u <- (1 - w) u + w (u_t - dt * S(u)) until the
    nonlinear residual ``max|u - (u_t - dt S(u))|`` drops below ``tol``.
    """
    d0 = op.node_grad[0].csr
    mask = np.asarray(dirichlet_mask, dtype=bool)

    if spec.kind == "eikonal":
        def spatial(u):
            g = d0 @ u
            return np.sqrt(g * g + EIKONAL_SMOOTHING) - 1.0
    elif spec.kind == "burgers":
        nu = spec.coefficient
        def spatial(u):
            du = d0 @ u
            return u * du - nu * (d0 @ du)
    else:
        raise ValueError(f"no Picard stepper for problem kind {spec.kind!r}")

    def step(u_t: np.ndarray) -> np.ndarray:
        u = u_t.copy()
        u[mask] = 0.0
        resid = np.inf
        # overflow inside a diverging iteration is expected; it surfaces as
        # a ConvergenceError below rather than a warning storm
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(max_iter):
                target = u_t - dt * spatial(u)
                target[mask] = 0.0
                resid = float(np.abs(u - target).max())
                if resid <= tol:
                    return u
                u = (1.0 - omega) * u + omega * target
        raise ConvergenceError(
            f"implicit {spec.kind} step did not converge: residual {resid:.3e} "
            f"after {max_iter} iterations"
        )

    return step


def make_stepper(spec: ProblemSpec, op: GradientOperator, dt: float, dirichlet_types=None):
    """Implicit stepper for the problem on the given operator's mesh."""
    bc = spec.bc_types if dirichlet_types is None else dirichlet_types
    mask = _dirichlet_mask(op.mesh, bc)
    if spec.kind == "heat":
        return make_heat_stepper(op, spec.coefficient, dt, mask)
    return make_picard_stepper(spec, op, dt, mask)


def solve_reference(
    spec: ProblemSpec,
    env: Environment,
    n_steps: int | None = None,
    refine: int = 10,
    time_refine: int = 10,
    dirichlet_types=None,
    keep_fine: bool = False,
) -> ReferenceSolution:
    """Reference trajectory for an environment.

    The environment must be canonical: 1D problems use the preset
    initial condition, 2D environments are re-instantiated on the fine
    mesh from their obstacle and source parameters.  The fine solve uses
    ``dt / time_refine`` and every ``time_refine``-th step is restricted
    to the coarse nodes.
    """
    if n_steps is None:
        n_steps = spec.n_timesteps
    fine_mesh, idx = refine_mesh(spec, refine)
    if env.mesh.n_vertices != len(idx):
        raise ValueError(
            f"environment has {env.mesh.n_vertices} nodes; the canonical "
            f"coarse mesh has {len(idx)}"
        )
    if spec.dim == 2:
        fine_env = make_environment(fine_mesh, env.obstacles, env.sources)
    else:
        fine_env = Environment(fine_mesh, initial_condition(spec, fine_mesh))
    u0_fine = fine_env.u0
    if np.abs(u0_fine[idx] - env.u0).max() > 1e-9:
        raise ValueError(
            "environment initial field is not the canonical one; the "
            "reference solver rebuilds initial conditions on the fine mesh"
        )

    op = build_gradient_operator(fine_env.mesh)
    dt_fine = spec.dt / time_refine
    stepper = make_stepper(spec, op, dt_fine, dirichlet_types)

    coarse_fields = np.empty((n_steps + 1, len(idx)))
    coarse_fields[0] = u0_fine[idx]
    fine_fields = [u0_fine] if keep_fine else None
    u = u0_fine
    for k in range(n_steps * time_refine):
        u = stepper(u)
        if keep_fine:
            fine_fields.append(u)
        if (k + 1) % time_refine == 0:
            coarse_fields[(k + 1) // time_refine] = u[idx]

    return ReferenceSolution(
        problem=spec.name,
        fields=coarse_fields,
        restriction=idx,
        refine=refine,
        time_refine=time_refine,
        dt_fine=dt_fine,
        fine_mesh=fine_mesh if keep_fine else None,
        fine_fields=np.array(fine_fields) if keep_fine else None,
    )


def mse_vs_reference(pred: np.ndarray, ref: ReferenceSolution) -> float:
    """Mean squared error over all timesteps and coarse nodes."""
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != ref.fields.shape:
        raise ValueError(
            f"trajectory shape {pred.shape} does not match reference "
            f"{ref.fields.shape}"
        )
    return float(((pred - ref.fields) ** 2).mean())


# ---------------------------------------------------------------------------
# disk cache: a directory of field snapshots plus a manifest


def _env_digest(spec: ProblemSpec, env: Environment, n_steps, refine, time_refine) -> str:
    h = hashlib.sha256()
    for arr in (env.mesh.vertices, env.mesh.elements, env.mesh.node_types, env.u0):
        h.update(np.ascontiguousarray(arr).tobytes())
    payload = {
        "problem": spec.name,
        "dt": spec.dt,
        "n_steps": n_steps,
        "refine": refine,
        "time_refine": time_refine,
        "obstacles": [[list(o.center), o.radius] for o in env.obstacles],
        "sources": [[s.a, s.b, list(s.center)] for s in env.sources],
    }
    h.update(json.dumps(payload, sort_keys=True).encode())
    return h.hexdigest()[:16]


def cached_reference(
    cache_dir: str,
    spec: ProblemSpec,
    env: Environment,
    n_steps: int | None = None,
    refine: int = 10,
    time_refine: int = 10,
) -> ReferenceSolution:
    """Solve, or reload a previous solve of the same inputs.

    The cache entry is a directory of field snapshot files (one per kept
    timestep, in the plain text field format) plus ``manifest.json``.
    """
    if n_steps is None:
        n_steps = spec.n_timesteps
    digest = _env_digest(spec, env, n_steps, refine, time_refine)
    entry = os.path.join(cache_dir, f"{spec.name}_{digest}")
    manifest_path = os.path.join(entry, "manifest.json")
    if os.path.exists(manifest_path):
        with open(manifest_path) as f:
            man = json.load(f)
        fields = np.stack(
            [
                load_field(os.path.join(entry, f"step_{k:05d}.field"), man["n_nodes"])
                for k in range(n_steps + 1)
            ]
        )
        _, idx = refine_mesh(spec, refine)
        return ReferenceSolution(
            problem=spec.name,
            fields=fields,
            restriction=idx,
            refine=refine,
            time_refine=time_refine,
            dt_fine=spec.dt / time_refine,
            wall_seconds=man.get("wall_seconds"),
        )
    t0 = time.perf_counter()
    ref = solve_reference(spec, env, n_steps, refine, time_refine)
    ref.wall_seconds = time.perf_counter() - t0
    os.makedirs(entry, exist_ok=True)
    for k, row in enumerate(ref.fields):
        save_field(row, os.path.join(entry, f"step_{k:05d}.field"))
    with open(manifest_path, "w") as f:
        json.dump(
            {
                "problem": spec.name,
                "digest": digest,
                "n_nodes": int(ref.fields.shape[1]),
                "n_steps": n_steps,
                "refine": refine,
                "time_refine": time_refine,
                "dt_fine": ref.dt_fine,
                "wall_seconds": ref.wall_seconds,
            },
            f,
            indent=1,
            sort_keys=True,
        )
        f.write("\n")
    return ref
