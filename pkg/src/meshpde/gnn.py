"""Encode-process-decode graph network over mesh nodes and edges.

Node features are the current field value plus a one-hot node type
(width 6); edge features are the relative position of the sender and its
norm (width dim + 1).  A four-layer MLP (hidden and latent width 16,
ReLU between layers, none on the last) encodes nodes and edges; one
message-passing block updates edge latents from [edge, src, dst] and
node latents from [node, mean of incoming edge latents], both with
residual connections; a final MLP decodes a per-node increment, so the
prediction is ``u_next = u_t + delta``.

The block can be applied several times (``processor_rounds``), reusing
the same weights each round.  Mean aggregation keeps message scales
comparable between interior nodes and boundary nodes of lower valence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .mesh import N_NODE_TYPES, Environment, Mesh, mesh_edges

__all__ = [
    "GNConfig",
    "GNParams",
    "GraphInput",
    "CheckpointError",
    "build_graph_input",
    "init_params",
    "forward",
    "step",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"MESHGN 1\n"


class CheckpointError(ValueError):
    """A checkpoint file is missing, truncated, or malformed."""


@dataclass(frozen=True)
class GNConfig:
    """Architecture hyperparameters; fixed at init and stored in checkpoints."""

    dim: int
    latent: int = 16
    mlp_layers: int = 4
    processor_rounds: int = 1
    include_positions: bool = False

    @property
    def node_feature_width(self) -> int:
        return 1 + N_NODE_TYPES + (self.dim if self.include_positions else 0)

    @property
    def edge_feature_width(self) -> int:
        return self.dim + 1


@dataclass
class GNParams:
    """All trainable tensors, grouped per MLP in application order."""

    config: GNConfig
    blocks: dict = field(default_factory=dict)  # name -> (weights, biases)

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = []
        for name, (weights, biases) in self.blocks.items():
            for i, (w, b) in enumerate(zip(weights, biases)):
                out.append((f"{name}.{i}.weight", w))
                out.append((f"{name}.{i}.bias", b))
        return out

    def n_parameters(self) -> int:
        return sum(t.data.size for _, t in self.named_tensors())


@dataclass
class GraphInput:
    """Static graph structure for one mesh: directed edges and constant
    features.  The field value is appended to the node features at call
    time, so one GraphInput serves a whole rollout."""

    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    edge_features: np.ndarray  # (n_edges, dim + 1)
    node_const: np.ndarray  # (n_nodes, 5) one-hot types (+ positions)


def build_graph_input(mesh: Mesh, include_positions: bool = False) -> GraphInput:
    """Directed graph from the mesh: each undirected edge both ways.

    Edge (s -> d) carries [x_d - x_s, |x_d - x_s|].
    """
    und = mesh_edges(mesh)
    src = np.concatenate([und[:, 0], und[:, 1]])
    dst = np.concatenate([und[:, 1], und[:, 0]])
    rel = mesh.vertices[dst] - mesh.vertices[src]
    edge_features = np.concatenate([rel, np.linalg.norm(rel, axis=1)[:, None]], axis=1)
    onehot = np.zeros((mesh.n_vertices, N_NODE_TYPES))
    onehot[np.arange(mesh.n_vertices), mesh.node_types] = 1.0
    node_const = (
        np.concatenate([onehot, mesh.vertices], axis=1) if include_positions else onehot
    )
    return GraphInput(mesh.n_vertices, src, dst, edge_features, node_const)


def _mlp_dims(config: GNConfig, n_in: int, n_out: int) -> list[tuple[int, int]]:
    widths = [n_in] + [config.latent] * (config.mlp_layers - 1) + [n_out]
    return list(zip(widths[:-1], widths[1:]))


_BLOCK_IO = (
    # name, in-width lambda, out-width lambda (l = latent)
    ("encoder_node", lambda c: c.node_feature_width, lambda c: c.latent),
    ("encoder_edge", lambda c: c.edge_feature_width, lambda c: c.latent),
    ("processor_edge", lambda c: 3 * c.latent, lambda c: c.latent),
    ("processor_node", lambda c: 2 * c.latent, lambda c: c.latent),
    ("decoder", lambda c: c.latent, lambda c: 1),
)


def init_params(config: GNConfig, seed: int) -> GNParams:
    """Seed-deterministic init: weights uniform(-sqrt(1/fan_in),
    +sqrt(1/fan_in)), biases zero.  Draw order is the block order of
    ``_BLOCK_IO`` then layer order, so identical seeds give bit-identical
    parameters."""
    rng = np.random.default_rng(seed)
    params = GNParams(config)
    for name, f_in, f_out in _BLOCK_IO:
        weights, biases = [], []
        for fan_in, fan_out in _mlp_dims(config, f_in(config), f_out(config)):
            bound = np.sqrt(1.0 / fan_in)
            weights.append(
                Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                       requires_grad=True)
            )
            biases.append(Tensor(np.zeros(fan_out), requires_grad=True))
        params.blocks[name] = (weights, biases)
    return params


def _mlp(params: GNParams, name: str, x: Tensor) -> Tensor:
    weights, biases = params.blocks[name]
    h = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = ad.add_bias(ad.matmul(h, w), b)
        if i != last:
            h = ad.relu(h)
    return h


def forward(params: GNParams, graph: GraphInput, u) -> Tensor:
    """Predicted per-node increment delta(u) as an autodiff tensor."""
    u = ad.tensor(u)
    if u.data.shape != (graph.n_nodes,):
        raise ValueError(
            f"field has shape {u.data.shape}, graph has {graph.n_nodes} nodes"
        )
    if graph.node_const.shape[1] + 1 != params.config.node_feature_width:
        raise ValueError(
            "graph features do not match the network's configured width: "
            f"{graph.node_const.shape[1] + 1} vs {params.config.node_feature_width}"
        )
    v = ad.concat_cols([ad.reshape(u, (graph.n_nodes, 1)), ad.tensor(graph.node_const)])
    hv = _mlp(params, "encoder_node", v)
    he = _mlp(params, "encoder_edge", ad.tensor(graph.edge_features))
    for _ in range(params.config.processor_rounds):
        msg_in = ad.concat_cols(
            [he, ad.gather_rows(hv, graph.src), ad.gather_rows(hv, graph.dst)]
        )
        he = he + _mlp(params, "processor_edge", msg_in)
        agg = ad.scatter_mean(he, graph.dst, graph.n_nodes)
        hv = hv + _mlp(params, "processor_node", ad.concat_cols([hv, agg]))
    delta = _mlp(params, "decoder", hv)
    return ad.reshape(delta, (graph.n_nodes,))


def step(params: GNParams, env: Environment, u_t, graph: GraphInput | None = None):
    """One surrogate time step, u_t + delta.

    Array in, array out; ``Tensor`` in, ``Tensor`` out (for training).
    """
    if graph is None:
        graph = build_graph_input(env.mesh, params.config.include_positions)
    u = ad.tensor(u_t)
    u_next = u + forward(params, graph, u)
    return u_next if isinstance(u_t, Tensor) else u_next.data


# ---------------------------------------------------------------------------
# checkpoint format: magic line, JSON header line, then the raw float64
# little-endian tensor payloads in header order.  Round-trips bit-exactly.


def save_checkpoint(params: GNParams, path: str, meta: dict | None = None) -> None:
    names = params.named_tensors()
    header = {
        "config": {
            "dim": params.config.dim,
            "latent": params.config.latent,
            "mlp_layers": params.config.mlp_layers,
            "processor_rounds": params.config.processor_rounds,
            "include_positions": params.config.include_positions,
        },
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(t.data.shape)} for n, t in names],
    }
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for _, t in names:
            f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> tuple[GNParams, dict]:
    """Read a checkpoint; returns (params, meta).

    Raises ``CheckpointError`` for anything malformed: wrong magic, bad
    header, truncated or oversized payload, or tensor shapes that do not
    match the stored architecture config.
    """
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    rest = blob[len(CHECKPOINT_MAGIC) :]
    nl = rest.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{path}: missing header line")
    try:
        header = json.loads(rest[:nl])
        config = GNConfig(**header["config"])
        tensor_specs = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad header: {exc}") from exc

    params = init_params(config, seed=0)
    expected = dict(params.named_tensors())
    if [t["name"] for t in tensor_specs] != [n for n, _ in params.named_tensors()]:
        raise CheckpointError(f"{path}: tensor names do not match architecture")
    payload = rest[nl + 1 :]
    offset = 0
    for ts in tensor_specs:
        shape = tuple(ts["shape"])
        tens = expected[ts["name"]]
        if tens.data.shape != shape:
            raise CheckpointError(
                f"{path}: tensor {ts['name']} has shape {shape}, "
                f"architecture wants {tens.data.shape}"
            )
        nbytes = int(np.prod(shape)) * 8
        chunk = payload[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated payload at {ts['name']}")
        tens.data = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} trailing bytes")
    return params, header.get("meta", {})
