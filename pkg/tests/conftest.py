"""Shared fixtures.

Trained checkpoints are expensive, so they are built once per config and
cached under ``tests/.cache`` keyed by the training-relevant config fields.
Delete the cache directory to force retraining.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os

import pytest

import meshpde.gnn as gnn
import meshpde.trainer as trainer

TESTS_DIR = os.path.dirname(os.path.abspath(__file__))
REPO_DIR = os.path.dirname(TESTS_DIR)
CONFIG_DIR = os.path.join(REPO_DIR, "configs")
CACHE_DIR = os.path.join(TESTS_DIR, ".cache")
REF_CACHE_DIR = os.path.join(CACHE_DIR, "refcache")

# out_dir and checkpoint_every change where artifacts land, not what gets
# trained, so they stay out of the cache key.
_NON_IDENTITY_FIELDS = {"out_dir", "checkpoint_every"}


def config_digest(cfg: trainer.TrainerConfig) -> str:
    fields = {
        f.name: getattr(cfg, f.name)
        for f in dataclasses.fields(cfg)
        if f.name not in _NON_IDENTITY_FIELDS
    }
    blob = json.dumps(fields, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_ci_config(name: str) -> trainer.TrainerConfig:
    return trainer.load_config(os.path.join(CONFIG_DIR, name))


def trained_run(config_name: str):
    """Train (or reload) the checkpoint for one CI config.

    Returns (params, meta, cfg, run_dir).
    """
    cfg = load_ci_config(config_name)
    run_dir = os.path.join(CACHE_DIR, f"{cfg.problem}_{config_digest(cfg)}")
    checkpoint = os.path.join(run_dir, "checkpoint.bin")
    if not os.path.exists(checkpoint):
        trainer.train(dataclasses.replace(cfg, out_dir=run_dir))
    params, meta = gnn.load_checkpoint(checkpoint)
    return params, meta, cfg, run_dir


@pytest.fixture(scope="session")
def heat1d_run():
    return trained_run("ci_heat1d.cfg")


@pytest.fixture(scope="session")
def eikonal1d_run():
    return trained_run("ci_eikonal1d.cfg")


@pytest.fixture(scope="session")
def burgers1d_run():
    return trained_run("ci_burgers1d.cfg")


@pytest.fixture(scope="session")
def heat2d_run():
    return trained_run("ci_heat2d.cfg")


@pytest.fixture(scope="session")
def ref_cache_dir():
    os.makedirs(REF_CACHE_DIR, exist_ok=True)
    return REF_CACHE_DIR
