"""HTTP inference endpoint for a trained 2-D surrogate.

A small JSON API around one checkpoint: create a session with an
obstacle/source layout, step the rollout, edit the environment mid-flight.
Sessions are in-memory with a TTL.  Session ids are a plain counter so that
replaying the same request sequence reproduces the same bodies byte for
byte.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field as dc_field

import numpy as np
from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from . import gnn
from .mesh import (
    Environment,
    EnvSpec,
    Mesh,
    Obstacle,
    Source,
    build_regular_tri_2d,
    make_environment,
)

DEFAULT_TTL_SECONDS = 3600.0
MAX_OBSTACLES = 4
MAX_SOURCES = 4

_RANGES = EnvSpec()


class ObstacleIn(BaseModel):
    cx: float = Field(ge=_RANGES.center_range[0], le=_RANGES.center_range[1])
    cy: float = Field(ge=_RANGES.center_range[0], le=_RANGES.center_range[1])
    radius: float = Field(ge=_RANGES.radius_range[0], le=_RANGES.radius_range[1])


class SourceIn(BaseModel):
    cx: float = Field(ge=_RANGES.center_range[0], le=_RANGES.center_range[1])
    cy: float = Field(ge=_RANGES.center_range[0], le=_RANGES.center_range[1])
    amplitude: float = Field(
        ge=_RANGES.amplitude_range[0], le=_RANGES.amplitude_range[1]
    )
    sharpness: float = Field(ge=_RANGES.width_range[0], le=_RANGES.width_range[1])


class EnvBody(BaseModel):
    """Environment layout.  Empty lists are legal (e.g. all obstacles removed);
    a missing body is not."""

    obstacles: list[ObstacleIn] = Field(default_factory=list, max_length=MAX_OBSTACLES)
    sources: list[SourceIn] = Field(default_factory=list, max_length=MAX_SOURCES)


@dataclass
class SessionState:
    env: Environment
    graph: gnn.GraphInput
    u: np.ndarray
    step_count: int = 0
    last_access: float = 0.0
    lock: threading.Lock = dc_field(default_factory=threading.Lock)


def _to_domain(body: EnvBody) -> tuple[list[Obstacle], list[Source]]:
    obstacles = [Obstacle(center=(o.cx, o.cy), radius=o.radius) for o in body.obstacles]
    sources = [Source(a=s.amplitude, b=s.sharpness, center=(s.cx, s.cy)) for s in body.sources]
    return obstacles, sources


def create_app(
    params: gnn.GNParams,
    meta: dict | None = None,
    mesh_dx: float = 0.05,
    ttl_seconds: float = DEFAULT_TTL_SECONDS,
) -> FastAPI:
    """Build the app around one loaded checkpoint.

    The mesh is fixed for the app's lifetime; environment edits only retag
    nodes and reset the field.
    """
    if params.config.dim != 2:
        raise ValueError(
            f"service requires a 2-D checkpoint, got dim={params.config.dim}"
        )
    base_mesh: Mesh = build_regular_tri_2d(-1.0, 1.0, mesh_dx)

    app = FastAPI(title="meshpde surrogate service")
    # The browser UI is served from its own origin (static files), so the
    # API must answer cross-origin requests.  Nothing here is sensitive.
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    sessions: dict[str, SessionState] = {}
    store_lock = threading.Lock()
    counter = {"next": 1}

    def _purge(now: float) -> None:
        dead = [k for k, s in sessions.items() if now - s.last_access > ttl_seconds]
        for k in dead:
            del sessions[k]

    def _make_session(body: EnvBody) -> tuple[str, SessionState]:
        obstacles, sources = _to_domain(body)
        env = make_environment(base_mesh, obstacles, sources)
        graph = gnn.build_graph_input(env.mesh, params.config.include_positions)
        state = SessionState(env=env, graph=graph, u=env.u0.copy())
        with store_lock:
            now = time.monotonic()
            _purge(now)
            state.last_access = now
            sid = f"s{counter['next']}"
            counter["next"] += 1
            sessions[sid] = state
        return sid, state

    def _get(sid: str) -> SessionState:
        with store_lock:
            now = time.monotonic()
            _purge(now)
            state = sessions.get(sid)
            if state is None:
                raise HTTPException(status_code=404, detail="unknown or expired session")
            state.last_access = now
            return state

    @app.post("/session", status_code=201)
    def create_session(body: EnvBody):
        sid, state = _make_session(body)
        mesh = state.env.mesh
        return {
            "session_id": sid,
            "dx": mesh_dx,
            "n_nodes": mesh.n_vertices,
            "x": mesh.vertices[:, 0].tolist(),
            "y": mesh.vertices[:, 1].tolist(),
            "elements": mesh.elements.ravel().tolist(),
            "node_types": mesh.node_types.tolist(),
            "u": state.u.tolist(),
            "step": 0,
            "meta": meta or {},
        }

    @app.post("/session/{sid}/step")
    def step_session(sid: str, n: int = Query(default=1, ge=0)):
        state = _get(sid)
        with state.lock:
            fields = [state.u.tolist()]
            u = state.u
            for _ in range(n):
                u = gnn.step(params, state.env, u, state.graph)
                fields.append(u.tolist())
            state.u = u
            state.step_count += n
            return {
                "session_id": sid,
                "step": state.step_count,
                "node_types": state.env.mesh.node_types.tolist(),
                "fields": fields,
            }

    @app.put("/session/{sid}/env")
    def edit_env(sid: str, body: EnvBody):
        state = _get(sid)
        obstacles, sources = _to_domain(body)
        env = make_environment(base_mesh, obstacles, sources)
        with state.lock:
            state.env = env
            state.graph = gnn.build_graph_input(env.mesh, params.config.include_positions)
            state.u = env.u0.copy()
            state.step_count = 0
            return {
                "session_id": sid,
                "step": 0,
                "node_types": env.mesh.node_types.tolist(),
                "u": state.u.tolist(),
            }

    return app
