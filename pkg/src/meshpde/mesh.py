"""Simplicial meshes, node typing, and randomized problem environments.

A mesh is a set of vertices plus simplicial elements (segments in 1D,
triangles in 2D, tetrahedra in 3D).  Every vertex carries exactly one
node type; boundary conditions and loss masks are derived from these
tags.  Environments bundle a (re)tagged mesh with an initial field and
the obstacle/source parameters that produced it.

File formats
------------
Mesh (text)::

    dim n_vertices n_elements
    x [y [z]] type_tag          # one line per vertex
    i j [k [l]]                 # one line per element (vertex indices)

Field (text): one float per line, one value per vertex, same order as
the mesh vertex list.  Floats are written with ``repr`` so a write/read
cycle is bit-exact.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

__all__ = [
    "NodeType",
    "Mesh",
    "Obstacle",
    "Source",
    "EnvSpec",
    "Environment",
    "MeshFormatError",
    "build_regular_1d",
    "build_regular_tri_2d",
    "node_type_mask",
    "boundary_node_mask",
    "source_field",
    "tag_nodes",
    "make_environment",
    "sample_env",
    "environment_1d",
    "save_mesh",
    "load_mesh",
    "save_field",
    "load_field",
    "save_environment",
    "load_environment",
    "mesh_edges",
]

BOUNDARY_TOL = 1e-9  # bounding-box comparison tolerance for wall tagging
CIRCLE_TOL = 1e-12  # nodes this close to an obstacle circle count as inside


class NodeType(IntEnum):
    """Node tags. Every vertex has exactly one."""

    NORMAL = 0
    WALL = 1
    OBSTACLE = 2
    INFLOW = 3
    OUTFLOW = 4


N_NODE_TYPES = len(NodeType)


class MeshFormatError(ValueError):
    """A mesh or field file is malformed or internally inconsistent."""


@dataclass
class Mesh:
    """Simplicial mesh with per-vertex node types.

    Attributes
    ----------
    dim : int
        Spatial dimension, 1, 2 or 3.
    vertices : (n_vertices, dim) float64 array
    elements : (n_elements, dim + 1) int64 array
        Vertex indices of each simplex.  Triangles are counterclockwise.
    node_types : (n_vertices,) int64 array
        ``NodeType`` value per vertex.
    """

    dim: int
    vertices: np.ndarray
    elements: np.ndarray
    node_types: np.ndarray

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        self.node_types = np.ascontiguousarray(self.node_types, dtype=np.int64)
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.vertices.ndim != 2 or self.vertices.shape[1] != self.dim:
            raise ValueError("vertices must have shape (n_vertices, dim)")
        if self.elements.ndim != 2 or self.elements.shape[1] != self.dim + 1:
            raise ValueError("elements must have shape (n_elements, dim + 1)")
        if self.node_types.shape != (len(self.vertices),):
            raise ValueError("node_types must have one entry per vertex")
        if len(self.elements) and (
            self.elements.min() < 0 or self.elements.max() >= len(self.vertices)
        ):
            raise ValueError("element vertex index out of range")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def with_node_types(self, node_types: np.ndarray) -> "Mesh":
        """Copy of this mesh with different tags; geometry is shared."""
        return Mesh(self.dim, self.vertices, self.elements, node_types)


@dataclass
class Obstacle:
    """Circular obstacle; nodes inside are tagged ``OBSTACLE``."""

    center: tuple[float, float]
    radius: float


@dataclass
class Source:
    """Gaussian heat source: ``a * exp(-0.5 * b * ||x - center||^2)``."""

    a: float
    b: float
    center: tuple[float, float]


@dataclass
class EnvSpec:
    """Sampling ranges for randomized 2D heat environments."""

    n_obstacles: tuple[int, int] = (1, 4)
    n_sources: tuple[int, int] = (1, 4)
    center_range: tuple[float, float] = (-0.8, 0.8)
    radius_range: tuple[float, float] = (0.1, 0.3)
    amplitude_range: tuple[float, float] = (0.0, 5.0)
    width_range: tuple[float, float] = (10.0, 50.0)


@dataclass
class Environment:
    """A tagged mesh plus the initial field defined on it."""

    mesh: Mesh
    u0: np.ndarray
    obstacles: list[Obstacle] = field(default_factory=list)
    sources: list[Source] = field(default_factory=list)

    def __post_init__(self):
        self.u0 = np.ascontiguousarray(self.u0, dtype=np.float64)
        if self.u0.shape != (self.mesh.n_vertices,):
            raise ValueError("u0 must have one value per mesh vertex")
        if not np.all(np.isfinite(self.u0)):
            raise ValueError("u0 contains non-finite values")


def build_regular_1d(lo: float, hi: float, dx: float) -> Mesh:
    """Uniform segment mesh on [lo, hi]; endpoints tagged ``WALL``.

    ``(hi - lo) / dx`` must be an integer (to 1e-9 relative).
    """
    n_cells = _cell_count(lo, hi, dx)
    xs = np.linspace(lo, hi, n_cells + 1)
    vertices = xs[:, None]
    elements = np.stack([np.arange(n_cells), np.arange(1, n_cells + 1)], axis=1)
    node_types = np.full(n_cells + 1, NodeType.NORMAL, dtype=np.int64)
    node_types[0] = node_types[-1] = NodeType.WALL
    return Mesh(1, vertices, elements, node_types)


def build_regular_tri_2d(lo: float, hi: float, dx: float) -> Mesh:
    """Regular triangulation of the square [lo, hi]^2.

    Each grid cell is split into two counterclockwise triangles of area
    ``dx**2 / 2``.  Nodes on the bounding box are tagged ``WALL``.
    """
    n_cells = _cell_count(lo, hi, dx)
    n = n_cells + 1
    xs = np.linspace(lo, hi, n)
    X, Y = np.meshgrid(xs, xs, indexing="xy")  # vertex id = i + n * j
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)

    i, j = np.meshgrid(np.arange(n_cells), np.arange(n_cells), indexing="xy")
    a = (i + n * j).ravel()  # lower-left corner of each cell
    b = a + 1
    c = a + 1 + n
    d = a + n
    # both triangles wind counterclockwise
    elements = np.concatenate(
        [np.stack([a, b, c], axis=1), np.stack([a, c, d], axis=1)]
    )

    node_types = np.full(n * n, NodeType.NORMAL, dtype=np.int64)
    mesh = Mesh(2, vertices, elements, node_types)
    mesh.node_types[boundary_node_mask(mesh)] = NodeType.WALL
    return mesh


def _cell_count(lo: float, hi: float, dx: float) -> int:
    if not (hi > lo and dx > 0):
        raise ValueError("need hi > lo and dx > 0")
    n_cells = (hi - lo) / dx
    if abs(n_cells - round(n_cells)) > 1e-9 * max(1.0, abs(n_cells)):
        raise ValueError(f"dx={dx} does not evenly divide [{lo}, {hi}]")
    return int(round(n_cells))


def boundary_node_mask(mesh: Mesh) -> np.ndarray:
    """True for nodes on the bounding box of the vertex set (tol 1e-9)."""
    v = mesh.vertices
    lo = v.min(axis=0)
    hi = v.max(axis=0)
    on_box = (np.abs(v - lo) <= BOUNDARY_TOL) | (np.abs(v - hi) <= BOUNDARY_TOL)
    return on_box.any(axis=1)


def node_type_mask(mesh: Mesh, node_type: NodeType) -> np.ndarray:
    """Boolean mask of vertices carrying the given tag."""
    return mesh.node_types == int(node_type)


def source_field(sources: list[Source], points: np.ndarray) -> np.ndarray:
    """Sum of Gaussian bumps ``a * exp(-0.5 * b * ||x - c||^2)`` at points."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    out = np.zeros(len(points))
    for s in sources:
        d2 = ((points - np.asarray(s.center)) ** 2).sum(axis=1)
        out += s.a * np.exp(-0.5 * s.b * d2)
    return out


def tag_nodes(mesh: Mesh, obstacles: list[Obstacle]) -> np.ndarray:
    """Tag vertices: WALL on the domain bounding box, OBSTACLE inside any
    circle (strictly inside, or on it within 1e-12), NORMAL otherwise.

    Wall takes precedence where a circle overlaps the boundary; both tags
    impose the same zero-Dirichlet condition, so only the mask bookkeeping
    depends on the choice.
    """
    tags = np.full(mesh.n_vertices, NodeType.NORMAL, dtype=np.int64)
    for ob in obstacles:
        d = np.linalg.norm(mesh.vertices - np.asarray(ob.center), axis=1)
        tags[d <= ob.radius + CIRCLE_TOL] = NodeType.OBSTACLE
    tags[boundary_node_mask(mesh)] = NodeType.WALL
    return tags


def make_environment(
    mesh: Mesh, obstacles: list[Obstacle], sources: list[Source]
) -> Environment:
    """Retag a mesh for the given obstacles and evaluate the initial field.

    The initial field is the source sum at NORMAL nodes and exactly zero
    at WALL and OBSTACLE nodes.
    """
    tagged = mesh.with_node_types(tag_nodes(mesh, obstacles))
    u0 = source_field(sources, tagged.vertices)
    u0[tagged.node_types != NodeType.NORMAL] = 0.0
    return Environment(tagged, u0, list(obstacles), list(sources))


def sample_env(mesh: Mesh, seed: int, spec: EnvSpec | None = None) -> Environment:
    """Draw a random environment (obstacles + sources) on a 2D mesh.

    The generator is ``numpy.random.default_rng(seed)`` (PCG64) and the
    draw order is fixed: obstacle count, then per obstacle center (x, y)
    and radius; source count, then per source amplitude a, width b and
    center (x, y).  Identical seeds give bit-identical environments.
    """
    if mesh.dim != 2:
        raise ValueError("randomized environments are defined on 2D meshes")
    spec = spec or EnvSpec()
    rng = np.random.default_rng(seed)

    n_obs = int(rng.integers(spec.n_obstacles[0], spec.n_obstacles[1] + 1))
    obstacles = []
    for _ in range(n_obs):
        cx, cy = rng.uniform(*spec.center_range, size=2)
        r = rng.uniform(*spec.radius_range)
        obstacles.append(Obstacle((cx, cy), r))

    n_src = int(rng.integers(spec.n_sources[0], spec.n_sources[1] + 1))
    sources = []
    for _ in range(n_src):
        a = rng.uniform(*spec.amplitude_range)
        b = rng.uniform(*spec.width_range)
        cx, cy = rng.uniform(*spec.center_range, size=2)
        sources.append(Source(a, b, (cx, cy)))

    return make_environment(mesh, obstacles, sources)


def environment_1d(mesh: Mesh, u0: np.ndarray) -> Environment:
    """Wrap a 1D mesh and initial field; endpoints keep their WALL tags."""
    return Environment(mesh, np.asarray(u0, dtype=np.float64))


def mesh_edges(mesh: Mesh) -> np.ndarray:
    """Unique undirected edges (i < j) from the element connectivity.

    Returned sorted lexicographically so downstream consumers see a
    deterministic order.
    """
    nv = mesh.elements.shape[1]
    pairs = []
    for a in range(nv):
        for b in range(a + 1, nv):
            pairs.append(mesh.elements[:, [a, b]])
    e = np.concatenate(pairs)
    e = np.sort(e, axis=1)
    e = np.unique(e, axis=0)
    return e


# ---------------------------------------------------------------------------
# file formats


def save_mesh(mesh: Mesh, path: str) -> None:
    """Write the text mesh format described in the module docstring."""
    lines = [f"{mesh.dim} {mesh.n_vertices} {mesh.n_elements}"]
    for v, t in zip(mesh.vertices, mesh.node_types):
        lines.append(" ".join(repr(float(c)) for c in v) + f" {int(t)}")
    for el in mesh.elements:
        lines.append(" ".join(str(int(i)) for i in el))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_mesh(path: str) -> Mesh:
    """Read the text mesh format; raises ``MeshFormatError`` on bad input."""
    with open(path) as f:
        raw = [ln.strip() for ln in f]
    lines = [ln for ln in raw if ln]
    if not lines:
        raise MeshFormatError(f"{path}: empty mesh file")
    head = lines[0].split()
    if len(head) != 3:
        raise MeshFormatError(f"{path}: header must be 'dim n_vertices n_elements'")
    try:
        dim, n_vert, n_elem = (int(tok) for tok in head)
    except ValueError as exc:
        raise MeshFormatError(f"{path}: non-integer header field") from exc
    if len(lines) != 1 + n_vert + n_elem:
        raise MeshFormatError(
            f"{path}: expected {1 + n_vert + n_elem} lines, found {len(lines)}"
        )
    verts = np.empty((n_vert, dim))
    types = np.empty(n_vert, dtype=np.int64)
    for i, ln in enumerate(lines[1 : 1 + n_vert]):
        toks = ln.split()
        if len(toks) != dim + 1:
            raise MeshFormatError(f"{path}: vertex line {i} has {len(toks)} fields")
        try:
            verts[i] = [float(t) for t in toks[:dim]]
            types[i] = int(toks[dim])
        except ValueError as exc:
            raise MeshFormatError(f"{path}: bad vertex line {i}: {ln!r}") from exc
        if types[i] not in [int(t) for t in NodeType]:
            raise MeshFormatError(f"{path}: unknown node type tag {types[i]}")
    elems = np.empty((n_elem, dim + 1), dtype=np.int64)
    for i, ln in enumerate(lines[1 + n_vert :]):
        toks = ln.split()
        if len(toks) != dim + 1:
            raise MeshFormatError(f"{path}: element line {i} has {len(toks)} fields")
        try:
            elems[i] = [int(t) for t in toks]
        except ValueError as exc:
            raise MeshFormatError(f"{path}: bad element line {i}: {ln!r}") from exc
    try:
        return Mesh(dim, verts, elems, types)
    except ValueError as exc:
        raise MeshFormatError(f"{path}: {exc}") from exc


def save_field(values: np.ndarray, path: str) -> None:
    """Write a field snapshot, one ``repr`` float per line."""
    values = np.asarray(values, dtype=np.float64)
    with open(path, "w") as f:
        f.write("\n".join(repr(float(v)) for v in values) + "\n")


def load_field(path: str, n_expected: int | None = None) -> np.ndarray:
    """Read a field snapshot; optionally check the value count."""
    with open(path) as f:
        toks = f.read().split()
    try:
        values = np.array([float(t) for t in toks], dtype=np.float64)
    except ValueError as exc:
        raise MeshFormatError(f"{path}: non-numeric field entry") from exc
    if n_expected is not None and len(values) != n_expected:
        raise MeshFormatError(
            f"{path}: field has {len(values)} values, mesh has {n_expected} vertices"
        )
    return values


def save_environment(env: Environment, prefix: str) -> None:
    """Write ``<prefix>.mesh``, ``<prefix>.u0`` and ``<prefix>.env.json``."""
    save_mesh(env.mesh, prefix + ".mesh")
    save_field(env.u0, prefix + ".u0")
    meta = {
        "obstacles": [
            {"center": [float(c) for c in ob.center], "radius": float(ob.radius)}
            for ob in env.obstacles
        ],
        "sources": [
            {"a": float(s.a), "b": float(s.b), "center": [float(c) for c in s.center]}
            for s in env.sources
        ],
    }
    with open(prefix + ".env.json", "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
        f.write("\n")


def load_environment(prefix: str) -> Environment:
    """Read an environment written by ``save_environment``."""
    mesh = load_mesh(prefix + ".mesh")
    u0 = load_field(prefix + ".u0", mesh.n_vertices)
    obstacles: list[Obstacle] = []
    sources: list[Source] = []
    if os.path.exists(prefix + ".env.json"):
        with open(prefix + ".env.json") as f:
            meta = json.load(f)
        obstacles = [
            Obstacle(tuple(ob["center"]), ob["radius"]) for ob in meta["obstacles"]
        ]
        sources = [Source(s["a"], s["b"], tuple(s["center"])) for s in meta["sources"]]
    return Environment(mesh, u0, obstacles, sources)
