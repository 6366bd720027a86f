"""Command-line entry point.

Subcommands cover the whole workflow: ``gen-env`` writes sampled
environments, ``train`` runs the replay-buffer loop from a config file,
``rollout`` unrolls a checkpoint over an environment, ``eval`` scores
checkpoints against the classical reference, ``export-plotdata`` flattens
a rollout/reference pair into a per-vertex CSV, and ``serve`` exposes a
2-D checkpoint over HTTP.

Exit codes are a stable scripting contract:

* 0 — success
* 2 — usage error (bad flags, unknown problem, malformed config)
* 3 — missing or corrupt input file (message names the path)
* 4 — inconsistent inputs (dimension or step-count mismatch, diverged
  reference solve)
"""

from __future__ import annotations

import argparse
import glob
import os
import sys
import time

import numpy as np

from .gnn import CheckpointError, load_checkpoint
from .mesh import (
    MeshFormatError,
    load_environment,
    load_field,
    load_mesh,
    sample_env,
    save_environment,
    save_field,
    save_mesh,
)
from .refsolver import ConvergenceError, cached_reference, mse_vs_reference
from .residuals import PROBLEMS, canonical_env, canonical_mesh, get_problem
from .trainer import load_config, rollout, train

# Environments scored by `eval` are sampled from this seed base, disjoint
# from the training seeds that a fresh master generator hands out.
EVAL_SEED_BASE = 10_000


class ConsistencyError(ValueError):
    """Inputs disagree with each other (exit code 4)."""


def _load_checkpoint(path: str):
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc


def _eval_environment(spec, index: int):
    if spec.dim == 2:
        return sample_env(canonical_mesh(spec), EVAL_SEED_BASE + index)
    return canonical_env(spec)


def cmd_gen_env(args) -> int:
    spec = get_problem(args.problem)
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.count):
        if spec.dim == 2:
            env = sample_env(canonical_mesh(spec), args.seed + i)
        else:
            # 1-D presets have one canonical initial condition; the files
            # differ only in index so downstream tooling can iterate.
            env = canonical_env(spec)
        save_environment(env, os.path.join(args.out, f"env_{i:04d}"))
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    state = train(cfg, quiet=args.quiet)
    manifest = os.path.join(cfg.out_dir, "manifest.json")
    print(f"trained {cfg.problem}: final loss {state.history[-1]:.6e}")
    print(f"artifacts in {cfg.out_dir} (checkpoint.bin, loss.csv, {manifest})")
    return 0


def cmd_rollout(args) -> int:
    params, _meta = _load_checkpoint(args.checkpoint)
    env = load_environment(args.env)
    if env.mesh.dim != params.config.dim:
        raise ConsistencyError(
            f"environment is {env.mesh.dim}-D but checkpoint expects "
            f"{params.config.dim}-D"
        )
    t0 = time.monotonic()
    fields = rollout(params, env, args.steps)
    elapsed_ms = (time.monotonic() - t0) * 1e3
    os.makedirs(args.out, exist_ok=True)
    save_mesh(env.mesh, os.path.join(args.out, "mesh"))
    for k, row in enumerate(fields):
        save_field(row, os.path.join(args.out, f"step_{k:05d}.field"))
    print(f"rollout_ms,{elapsed_ms:.3f}")
    return 0


def cmd_eval(args) -> int:
    params, _meta = _load_checkpoint(args.checkpoint)
    spec = get_problem(args.problem)
    if params.config.dim != spec.dim:
        raise ConsistencyError(
            f"problem {spec.name} is {spec.dim}-D but checkpoint expects "
            f"{params.config.dim}-D"
        )
    mses, sur_ms, ref_ms = [], [], []
    print("env_id,mse")
    for i in range(args.envs):
        env = _eval_environment(spec, i)
        t0 = time.monotonic()
        fields = rollout(params, env, spec.n_timesteps)
        sur_ms.append((time.monotonic() - t0) * 1e3)
        ref = cached_reference(args.cache_dir, spec, env, refine=args.refine)
        ref_ms.append((ref.wall_seconds or 0.0) * 1e3)
        mse = mse_vs_reference(fields, ref)
        mses.append(mse)
        print(f"env_{i:04d},{mse:.6e}")
    print(f"ALL,{np.mean(mses):.6e}")
    print(
        f"# timing_ms surrogate={np.mean(sur_ms):.3f} "
        f"reference={np.mean(ref_ms):.3f}"
    )
    return 0


def _snapshot_files(directory: str) -> list[str]:
    files = sorted(glob.glob(os.path.join(directory, "step_*.field")))
    if not files:
        raise FileNotFoundError(f"no step_*.field snapshots in {directory}")
    return files


def cmd_export_plotdata(args) -> int:
    mesh = load_mesh(os.path.join(args.rollout_dir, "mesh"))
    pred_files = _snapshot_files(args.rollout_dir)
    ref_files = _snapshot_files(args.ref_dir)
    if len(pred_files) != len(ref_files):
        raise ConsistencyError(
            f"snapshot count mismatch: {len(pred_files)} in "
            f"{args.rollout_dir} vs {len(ref_files)} in {args.ref_dir}"
        )
    n = mesh.n_vertices
    coords = mesh.vertices
    header = "t,node,x,y,u_pred,u_ref,sq_err" if mesh.dim == 2 else "t,node,x,u_pred,u_ref,sq_err"
    with open(args.out, "w") as out:
        out.write(header + "\n")
        for t, (pf, rf) in enumerate(zip(pred_files, ref_files)):
            pred = load_field(pf)
            ref = load_field(rf)
            if pred.shape != (n,) or ref.shape != (n,):
                raise ConsistencyError(
                    f"field length mismatch at step {t}: mesh has {n} nodes, "
                    f"{pf} has {pred.shape[0]}, {rf} has {ref.shape[0]}"
                )
            err = (pred - ref) ** 2
            for j in range(n):
                pos = ",".join(repr(float(c)) for c in coords[j])
                out.write(
                    f"{t},{j},{pos},{float(pred[j])!r},{float(ref[j])!r},"
                    f"{float(err[j])!r}\n"
                )
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    params, meta = _load_checkpoint(args.checkpoint)
    app = create_app(params, meta, mesh_dx=args.mesh_dx)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshpde",
        description="Physics-constrained mesh surrogate toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-env", help="write sampled environment files")
    p.add_argument("--problem", required=True, choices=sorted(PROBLEMS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_gen_env)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("rollout", help="unroll a checkpoint over an environment")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", required=True, help="environment file prefix")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_rollout)

    p = sub.add_parser("eval", help="score a checkpoint against the reference")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--problem", required=True, choices=sorted(PROBLEMS))
    p.add_argument("--envs", type=int, default=10)
    p.add_argument("--refine", type=int, default=10)
    p.add_argument("--cache-dir", default="refcache")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser(
        "export-plotdata", help="per-vertex squared-error CSV from two rollouts"
    )
    p.add_argument("--rollout-dir", required=True)
    p.add_argument("--ref-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_export_plotdata)

    p = sub.add_parser("serve", help="HTTP inference service for a 2-D checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--mesh-dx", type=float, default=0.05)
    p.set_defaults(handler=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except FileNotFoundError as exc:
        print(f"meshpde: {exc}", file=sys.stderr)
        return 3
    except (CheckpointError, MeshFormatError) as exc:
        print(f"meshpde: {exc}", file=sys.stderr)
        return 3
    except (ConsistencyError, ConvergenceError) as exc:
        print(f"meshpde: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"meshpde: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
