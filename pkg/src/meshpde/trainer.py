"""Unsupervised replay training of the graph-network surrogate.

The dataset is a grid of field slots indexed by (environment, timestep),
every slot pre-filled with that environment's initial condition.  Each
epoch samples one timestep t and a batch of environments, predicts
u[t+1] from the stored u[t], scores the physics-constrained loss of the
implicit step, overwrites slot t+1 with the prediction, and applies one
Adam update from the batch-averaged gradient.  Slots at t = 0 are never
written, so the initial condition anchors the slow consistency sweep of
the buffer toward the trajectory.

Everything is driven by one seeded generator (numpy PCG64), so a (seed,
config) pair reproduces environments, parameters, sampling, and hence
checkpoints bit-for-bit.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from . import gnn
from .autodiff import SparseMatrix
from .diffops import GradientOperator, build_gradient_operator
from .mesh import Environment, sample_env
from .residuals import (
    ProblemSpec,
    canonical_env,
    canonical_mesh,
    get_problem,
    loss_weight_vectors,
    pde_residual,
    weighted_loss,
)

__all__ = [
    "TrainerConfig",
    "ReplayDataset",
    "AdamState",
    "TrainState",
    "TrainingDivergedError",
    "parse_config",
    "load_config",
    "config_text",
    "build_environments",
    "init_dataset",
    "init_train",
    "train_epoch",
    "train",
    "rollout",
    "adam_step",
]


class TrainingDivergedError(RuntimeError):
    """The loss became non-finite; message says where."""


@dataclass
class TrainerConfig:
    """Flat training configuration (see ``parse_config`` for the file form)."""

    problem: str
    dx: float | None = None  # None -> problem preset value
    dt: float | None = None
    n_timesteps: int = 100
    n_envs: int = 1
    batch_size: int = 1
    epochs: int = 1000
    learning_rate: float = 1e-3
    lr_min: float | None = None  # None -> constant rate; else cosine decay to lr_min
    seed: int = 0
    alpha: float | None = None
    beta: float | None = None
    processor_rounds: int = 1
    include_positions: bool = False
    checkpoint_every: int = 0  # 0 -> only the final checkpoint
    out_dir: str = "run"

    def problem_spec(self) -> ProblemSpec:
        overrides = {"n_timesteps": self.n_timesteps}
        for key in ("dx", "dt", "alpha", "beta"):
            val = getattr(self, key)
            if val is not None:
                overrides[key] = val
        return get_problem(self.problem, **overrides)


_BOOL_STRINGS = {"true": True, "false": False, "1": True, "0": False}


def parse_config(text: str) -> TrainerConfig:
    """Parse the flat ``key = value`` config format.

    One assignment per line; ``#`` starts a comment; keys match the
    ``TrainerConfig`` fields.  Unknown keys and unparsable values are
    errors.
    """
    by_name = {f.name: f for f in fields(TrainerConfig)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, _, val = (tok.strip() for tok in line.partition("="))
        if key not in by_name:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        ann = by_name[key].type
        try:
            if key == "problem" or key == "out_dir":
                values[key] = val
            elif "bool" in ann:
                values[key] = _BOOL_STRINGS[val.lower()]
            elif "int" in ann:
                values[key] = int(val)
            else:
                values[key] = float(val)
        except (ValueError, KeyError) as exc:
            raise ValueError(f"config line {lineno}: bad value for {key}: {val!r}") from exc
    if "problem" not in values:
        raise ValueError("config is missing the 'problem' key")
    cfg = TrainerConfig(**values)
    if not 1 <= cfg.batch_size <= cfg.n_envs:
        raise ValueError("need 1 <= batch_size <= n_envs")
    if cfg.epochs < 1 or cfg.n_timesteps < 1:
        raise ValueError("epochs and n_timesteps must be positive")
    if cfg.lr_min is not None and not 0.0 < cfg.lr_min <= cfg.learning_rate:
        raise ValueError("need 0 < lr_min <= learning_rate")
    return cfg


def load_config(path: str) -> TrainerConfig:
    with open(path) as f:
        return parse_config(f.read())


def config_text(cfg: TrainerConfig) -> str:
    """Render a config back to the flat key = value form."""
    lines = []
    for f in fields(TrainerConfig):
        val = getattr(cfg, f.name)
        if val is None:
            continue
        lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"


@dataclass
class ReplayDataset:
    """Replay slots, shape (n_envs, n_timesteps + 1, n_nodes).

    Row t = 0 holds the initial conditions and is never overwritten;
    training writes predictions into t + 1.
    """

    fields: np.ndarray

    @property
    def n_envs(self) -> int:
        return self.fields.shape[0]

    @property
    def n_timesteps(self) -> int:
        return self.fields.shape[1] - 1


def init_dataset(envs: list[Environment], n_timesteps: int) -> ReplayDataset:
    """Every slot of every environment starts as that environment's u0."""
    n_nodes = envs[0].mesh.n_vertices
    data = np.empty((len(envs), n_timesteps + 1, n_nodes))
    for k, env in enumerate(envs):
        data[k, :, :] = env.u0
    return ReplayDataset(data)


@dataclass
class AdamState:
    """First/second moment accumulators per named parameter."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(params: gnn.GNParams, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update; consumes and clears ``.grad``."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    for name, tensor in params.named_tensors():
        g = tensor.grad
        if g is None:
            g = np.zeros_like(tensor.data)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(tensor.data)
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        tensor.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        tensor.grad = None


def build_environments(
    spec: ProblemSpec, cfg: TrainerConfig, rng
) -> tuple[list[Environment], list[int]]:
    """Training environments for a problem, plus the seeds that made them.

    1D problems have a single canonical initial condition, replicated so
    the batched loop has one slot per batch member.  The 2D heat problem
    samples ``n_envs`` random environments with seeds drawn from the
    master generator.
    """
    if spec.dim == 1:
        env = canonical_env(spec)
        return [env] * cfg.n_envs, []
    mesh = canonical_mesh(spec)
    seeds = [int(s) for s in rng.integers(0, 2**63 - 1, size=cfg.n_envs)]
    return [sample_env(mesh, s) for s in seeds], seeds


@dataclass
class TrainState:
    """Everything the epoch loop touches."""

    cfg: TrainerConfig
    spec: ProblemSpec
    envs: list
    op: GradientOperator
    params: gnn.GNParams
    dataset: ReplayDataset
    adam: AdamState
    rng: np.random.Generator
    env_seeds: list
    # stacked-batch machinery
    batch_graph: gnn.GraphInput = None
    batch_mats: list = None
    node_const: np.ndarray = None  # (n_envs, n_nodes, n_const_feats)
    w_pde: np.ndarray = None  # (n_envs, n_nodes) loss weights
    w_bc: np.ndarray = None
    history: list = field(default_factory=list)


def init_train(cfg: TrainerConfig) -> TrainState:
    spec = cfg.problem_spec()
    rng = np.random.default_rng(cfg.seed)
    envs, env_seeds = build_environments(spec, cfg, rng)
    op = build_gradient_operator(envs[0].mesh)
    config = gnn.GNConfig(
        dim=spec.dim,
        processor_rounds=cfg.processor_rounds,
        include_positions=cfg.include_positions,
    )
    params = gnn.init_params(config, cfg.seed)
    dataset = init_dataset(envs, cfg.n_timesteps)

    # Batched stacking: all environments share one mesh, so a batch of B
    # fields is one big graph of B disjoint copies, and the per-axis
    # derivative matrices become block-diagonal.
    base = gnn.build_graph_input(envs[0].mesh, cfg.include_positions)
    n, b = base.n_nodes, cfg.batch_size
    offs = np.repeat(np.arange(b) * n, len(base.src))
    batch_graph = gnn.GraphInput(
        n_nodes=n * b,
        src=np.tile(base.src, b) + offs,
        dst=np.tile(base.dst, b) + offs,
        edge_features=np.tile(base.edge_features, (b, 1)),
        node_const=None,  # filled per epoch from the sampled batch
    )
    batch_mats = [
        SparseMatrix(sp.kron(sp.identity(b, format="csr"), m.csr, format="csr"))
        for m in op.node_grad
    ]
    node_const = np.stack(
        [gnn.build_graph_input(e.mesh, cfg.include_positions).node_const for e in envs]
    )
    weights = [loss_weight_vectors(spec, e) for e in envs]
    w_pde = np.stack([w[0] for w in weights])
    w_bc = np.stack([w[1] for w in weights])

    return TrainState(
        cfg=cfg,
        spec=spec,
        envs=envs,
        op=op,
        params=params,
        dataset=dataset,
        adam=AdamState(),
        rng=rng,
        env_seeds=env_seeds,
        batch_graph=batch_graph,
        batch_mats=batch_mats,
        node_const=node_const,
        w_pde=w_pde,
        w_bc=w_bc,
    )


def train_epoch(st: TrainState) -> float:
    """One replay epoch: sample, predict, score, write back, update.

    Returns the batch-mean loss.  Raises ``TrainingDivergedError`` with
    the offending environment, timestep, and worst node if the loss is
    not finite.
    """
    cfg, spec = st.cfg, st.spec
    n = st.dataset.fields.shape[2]
    b = cfg.batch_size
    t = int(st.rng.integers(0, cfg.n_timesteps))
    batch = np.sort(st.rng.choice(st.dataset.n_envs, size=b, replace=False))

    u_t = st.dataset.fields[batch, t, :]  # (b, n)
    graph = st.batch_graph
    graph.node_const = st.node_const[batch].reshape(b * n, -1)

    u_t_flat = ad.tensor(u_t.reshape(-1))
    u_next = u_t_flat + gnn.forward(st.params, graph, u_t_flat)
    total = weighted_loss(
        spec,
        st.batch_mats,
        st.w_pde[batch].reshape(-1) / b,
        st.w_bc[batch].reshape(-1) / b,
        u_t_flat,
        u_next,
    )
    value = float(total.data)
    if not np.isfinite(value):
        raise TrainingDivergedError(_diverged_message(st, batch, t, u_t, u_next.data))
    ad.backward(total)
    adam_step(st.params, st.adam, _learning_rate(cfg, len(st.history)))

    st.dataset.fields[batch, t + 1, :] = u_next.data.reshape(b, n)
    st.history.append(value)
    return value


def _learning_rate(cfg: TrainerConfig, epochs_done: int) -> float:
    """Rate for the update after ``epochs_done`` completed epochs.

    Constant by default; with ``lr_min`` set, cosine-annealed from
    ``learning_rate`` at epoch 0 down to ``lr_min`` at the final epoch.
    """
    if cfg.lr_min is None:
        return cfg.learning_rate
    frac = min(1.0, epochs_done / max(1, cfg.epochs - 1))
    return cfg.lr_min + 0.5 * (cfg.learning_rate - cfg.lr_min) * (
        1.0 + np.cos(np.pi * frac)
    )


def _diverged_message(st, batch, t, u_t, u_next) -> str:
    n = u_t.shape[1]
    worst = ("?", "?", np.nan)
    for i, env_idx in enumerate(batch):
        r = pde_residual(st.spec, st.op, u_t[i], u_next[i * n : (i + 1) * n])
        bad = np.abs(np.where(np.isfinite(r), r, np.inf))
        node = int(np.argmax(bad))
        if not np.isfinite(worst[2]) or bad[node] > worst[2]:
            worst = (int(env_idx), node, float(r[node]))
    return (
        f"loss diverged at epoch {len(st.history) + 1}: environment {worst[0]}, "
        f"timestep {t} -> {t + 1}, worst residual {worst[2]} at node {worst[1]}"
    )


def train(cfg: TrainerConfig, quiet: bool = True) -> TrainState:
    """Run the configured training and write artifacts to ``cfg.out_dir``:
    ``checkpoint.bin``, ``loss.csv`` (epoch,loss) and ``manifest.json``.
    """
    t0 = time.perf_counter()
    st = init_train(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    for epoch in range(1, cfg.epochs + 1):
        value = train_epoch(st)
        if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            gnn.save_checkpoint(
                st.params,
                os.path.join(cfg.out_dir, f"checkpoint_ep{epoch}.bin"),
                meta=_checkpoint_meta(cfg, st.spec),
            )
        if not quiet and (epoch % 500 == 0 or epoch == 1):
            print(f"epoch {epoch}: loss {value:.6g}")

    path = os.path.join(cfg.out_dir, "checkpoint.bin")
    gnn.save_checkpoint(st.params, path, meta=_checkpoint_meta(cfg, st.spec))
    with open(os.path.join(cfg.out_dir, "loss.csv"), "w") as f:
        f.write("epoch,loss\n")
        for i, v in enumerate(st.history, start=1):
            f.write(f"{i},{v!r}\n")
    manifest = {
        "config": {k: v for k, v in asdict(cfg).items() if v is not None},
        "problem": st.spec.name,
        "env_seeds": st.env_seeds,
        "n_parameters": st.params.n_parameters(),
        "final_loss": st.history[-1],
        "epochs_run": len(st.history),
        "wall_seconds": time.perf_counter() - t0,
        "checkpoint": "checkpoint.bin",
    }
    with open(os.path.join(cfg.out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")
    return st


def _checkpoint_meta(cfg: TrainerConfig, spec: ProblemSpec) -> dict:
    return {
        "problem": cfg.problem,
        "dx": spec.dx,
        "dt": spec.dt,
        "n_timesteps": spec.n_timesteps,
        "seed": cfg.seed,
    }


def rollout(
    params: gnn.GNParams,
    env: Environment,
    n_steps: int,
    graph: gnn.GraphInput | None = None,
) -> np.ndarray:
    """Autoregressive surrogate trajectory, shape (n_steps + 1, n_nodes)."""
    if graph is None:
        graph = gnn.build_graph_input(env.mesh, params.config.include_positions)
    out = np.empty((n_steps + 1, env.mesh.n_vertices))
    out[0] = env.u0
    u = env.u0
    for i in range(n_steps):
        u = gnn.step(params, env, u, graph)
        out[i + 1] = u
    return out
