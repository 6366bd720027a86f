"""Unsupervised physics-constrained surrogates on simplicial meshes.

The package trains a small graph network to time-step PDE solutions by
minimizing the discrete residual of an implicit step — no solution data —
and ships the pieces that make that testable: mesh construction and
tagging, finite-element differential operators, residual losses, a minimal
reverse-mode autodiff, the replay-buffer training loop, classical
reference solvers, a CLI, and an HTTP demo service.
"""

from .autodiff import SparseMatrix, Tensor, backward, tensor
from .diffops import (
    DegenerateMeshError,
    GradientOperator,
    build_gradient_operator,
    naive_fd_gradient,
)
from .gnn import (
    CheckpointError,
    GNConfig,
    GNParams,
    build_graph_input,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .mesh import (
    Environment,
    EnvSpec,
    Mesh,
    MeshFormatError,
    NodeType,
    Obstacle,
    Source,
    build_regular_1d,
    build_regular_tri_2d,
    load_environment,
    make_environment,
    sample_env,
    save_environment,
)
from .refsolver import (
    ConvergenceError,
    ReferenceSolution,
    cached_reference,
    mse_vs_reference,
    solve_reference,
)
from .residuals import (
    PROBLEMS,
    ProblemSpec,
    canonical_env,
    canonical_mesh,
    get_problem,
    initial_condition,
    loss,
)
from .trainer import TrainerConfig, load_config, parse_config, rollout, train

__version__ = "0.1.0"

__all__ = [
    "SparseMatrix",
    "Tensor",
    "backward",
    "tensor",
    "DegenerateMeshError",
    "GradientOperator",
    "build_gradient_operator",
    "naive_fd_gradient",
    "CheckpointError",
    "GNConfig",
    "GNParams",
    "build_graph_input",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "Environment",
    "EnvSpec",
    "Mesh",
    "MeshFormatError",
    "NodeType",
    "Obstacle",
    "Source",
    "build_regular_1d",
    "build_regular_tri_2d",
    "load_environment",
    "make_environment",
    "sample_env",
    "save_environment",
    "ConvergenceError",
    "ReferenceSolution",
    "cached_reference",
    "mse_vs_reference",
    "solve_reference",
    "PROBLEMS",
    "ProblemSpec",
    "canonical_env",
    "canonical_mesh",
    "get_problem",
    "initial_condition",
    "loss",
    "TrainerConfig",
    "load_config",
    "parse_config",
    "rollout",
    "train",
    "__version__",
]
