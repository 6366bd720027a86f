import dataclasses
import filecmp
import os

import numpy as np
import pytest

from meshpde.gnn import GNConfig, init_params, load_checkpoint
from meshpde.trainer import (
    AdamState,
    TrainerConfig,
    TrainingDivergedError,
    _learning_rate,
    adam_step,
    build_environments,
    config_text,
    init_dataset,
    init_train,
    load_config,
    parse_config,
    rollout,
    train,
    train_epoch,
)
from meshpde.residuals import canonical_env, get_problem

from oracles import adam_first_step_size


def tiny_cfg(**kw):
    base = dict(problem="heat1d", epochs=5, seed=0, out_dir="unused")
    base.update(kw)
    return TrainerConfig(**base)


# --- config file format -----------------------------------------------------


def test_parse_config_types_and_comments():
    cfg = parse_config(
        """
        # training setup
        problem = heat2d
        n_envs = 12
        batch_size = 3
        epochs = 250
        learning_rate = 5e-4
        include_positions = true
        dx = 0.1
        """
    )
    assert cfg.problem == "heat2d"
    assert cfg.n_envs == 12 and cfg.batch_size == 3 and cfg.epochs == 250
    assert cfg.learning_rate == 5e-4
    assert cfg.include_positions is True
    assert cfg.dx == 0.1


def test_parse_config_rejects_unknown_key():
    with pytest.raises(ValueError, match="unknown"):
        parse_config("problem = heat1d\nmomentum = 0.9\n")


def test_parse_config_rejects_bad_value():
    with pytest.raises(ValueError):
        parse_config("problem = heat1d\nepochs = soon\n")


def test_parse_config_rejects_batch_larger_than_envs():
    with pytest.raises(ValueError):
        parse_config("problem = heat1d\nn_envs = 2\nbatch_size = 3\n")


def test_config_text_roundtrip(tmp_path):
    cfg = tiny_cfg(n_envs=4, batch_size=2, learning_rate=2e-3)
    path = tmp_path / "run.cfg"
    path.write_text(config_text(cfg))
    assert load_config(str(path)) == cfg


def test_parse_config_rejects_lr_min_above_rate():
    with pytest.raises(ValueError, match="lr_min"):
        parse_config("problem = heat1d\nlr_min = 0.5\n")


def test_cosine_lr_schedule_endpoints_and_monotonicity():
    cfg = tiny_cfg(epochs=1000, learning_rate=1e-3, lr_min=1e-5)
    assert _learning_rate(cfg, 0) == pytest.approx(1e-3)
    assert _learning_rate(cfg, cfg.epochs - 1) == pytest.approx(1e-5)
    # the cosine midpoint is the arithmetic mean of the endpoints
    assert _learning_rate(cfg, cfg.epochs // 2) == pytest.approx(
        0.5 * (1e-3 + 1e-5), rel=0.01
    )
    rates = [_learning_rate(cfg, e) for e in range(cfg.epochs)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    # without lr_min the rate is constant
    flat = tiny_cfg(epochs=1000)
    assert _learning_rate(flat, 700) == flat.learning_rate


# --- environments and replay buffer ------------------------------------------


def test_build_environments_1d_replicates_canonical():
    spec = get_problem("heat1d")
    rng = np.random.default_rng(0)
    envs, seeds = build_environments(spec, tiny_cfg(n_envs=3, batch_size=1), rng)
    assert len(envs) == 3
    want = canonical_env(spec).u0
    for env in envs:
        assert np.array_equal(env.u0, want)


def test_build_environments_2d_sampled_and_recorded():
    spec = get_problem("heat2d")
    rng = np.random.default_rng(0)
    cfg = tiny_cfg(problem="heat2d", n_envs=4, batch_size=2)
    envs, seeds = build_environments(spec, cfg, rng)
    assert len(envs) == len(seeds) == 4
    assert len(set(seeds)) == 4
    u0s = {e.u0.tobytes() for e in envs}
    assert len(u0s) > 1  # actually different environments


def test_replay_buffer_initialized_with_u0_everywhere():
    spec = get_problem("heat1d")
    env = canonical_env(spec)
    ds = init_dataset([env, env], 7)
    assert ds.fields.shape == (2, 8, env.mesh.n_vertices)
    assert np.all(ds.fields == env.u0[None, None, :])


# --- the training loop contract ----------------------------------------------


def test_one_epoch_writes_back_exactly_one_slot_per_batch_env():
    st = init_train(tiny_cfg(problem="heat2d", n_envs=3, batch_size=2, epochs=1,
                             dx=0.25))
    before = st.dataset.fields.copy()
    train_epoch(st)
    changed = np.any(st.dataset.fields != before, axis=2)  # (envs, slots)
    assert changed.sum() == 2  # batch_size slots total
    envs_changed, slots_changed = np.nonzero(changed)
    assert len(set(envs_changed)) == 2  # two distinct environments
    assert np.all(slots_changed >= 1)


def test_time_zero_slot_is_immutable():
    st = init_train(tiny_cfg(epochs=1))
    u0 = st.dataset.fields[:, 0, :].copy()
    for _ in range(60):
        train_epoch(st)
    assert np.array_equal(st.dataset.fields[:, 0, :], u0)


def test_training_is_bit_reproducible(tmp_path):
    cfg_a = tiny_cfg(epochs=40, seed=11, out_dir=str(tmp_path / "a"))
    cfg_b = tiny_cfg(epochs=40, seed=11, out_dir=str(tmp_path / "b"))
    train(cfg_a)
    train(cfg_b)
    assert filecmp.cmp(
        tmp_path / "a" / "checkpoint.bin", tmp_path / "b" / "checkpoint.bin",
        shallow=False,
    )
    assert (tmp_path / "a" / "loss.csv").read_text() == (
        tmp_path / "b" / "loss.csv"
    ).read_text()


def test_different_seed_changes_training(tmp_path):
    cfg_a = tiny_cfg(epochs=10, seed=1, out_dir=str(tmp_path / "a"))
    cfg_b = tiny_cfg(epochs=10, seed=2, out_dir=str(tmp_path / "b"))
    sa = train(cfg_a)
    sb = train(cfg_b)
    assert sa.history != sb.history


def test_adam_first_step_matches_oracle():
    params = init_params(GNConfig(dim=1, latent=4, mlp_layers=2), 0)
    rng = np.random.default_rng(3)
    grads = {}
    for name, t in params.named_tensors():
        t.grad = rng.normal(size=t.data.shape)
        grads[name] = t.grad.copy()
    before = {name: t.data.copy() for name, t in params.named_tensors()}
    adam_step(params, AdamState(), lr=1e-3)
    for name, t in params.named_tensors():
        delta = np.abs(t.data - before[name])
        want = adam_first_step_size(grads[name], lr=1e-3)
        assert np.allclose(delta, want, rtol=1e-10, atol=0)
        assert t.grad is None  # consumed


def test_first_epoch_update_is_adam_bounded():
    st = init_train(tiny_cfg(epochs=1))
    before = {n: t.data.copy() for n, t in st.params.named_tensors()}
    train_epoch(st)
    deltas = np.concatenate(
        [np.abs(t.data - before[n]).ravel() for n, t in st.params.named_tensors()]
    )
    lr = st.cfg.learning_rate
    assert np.all(deltas <= lr * (1 + 1e-9))
    assert deltas.max() > 0.9 * lr  # most gradients dwarf the epsilon


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_divergence_raises_with_location():
    cfg = tiny_cfg(problem="burgers1d", epochs=4000, learning_rate=1e4)
    st = init_train(cfg)
    with pytest.raises(TrainingDivergedError, match="timestep"):
        for _ in range(cfg.epochs):
            train_epoch(st)


# --- artifacts and rollout ----------------------------------------------------


def test_train_writes_artifacts(tmp_path):
    out = tmp_path / "run"
    cfg = tiny_cfg(epochs=8, out_dir=str(out))
    st = train(cfg)
    assert (out / "checkpoint.bin").exists()
    params, meta = load_checkpoint(str(out / "checkpoint.bin"))
    assert meta["problem"] == "heat1d"
    lines = (out / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss"
    assert len(lines) == 9
    import json

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["problem"] == "heat1d"
    assert manifest["epochs_run"] == 8
    assert np.isfinite(manifest["final_loss"])
    assert manifest["n_parameters"] == st.params.n_parameters()
    assert "env_seeds" in manifest


def test_checkpoint_every_writes_intermediates(tmp_path):
    out = tmp_path / "run"
    cfg = tiny_cfg(epochs=6, checkpoint_every=2, out_dir=str(out))
    train(cfg)
    assert (out / "checkpoint_ep2.bin").exists()
    assert (out / "checkpoint_ep4.bin").exists()
    assert (out / "checkpoint_ep6.bin").exists()


def test_rollout_shape_and_determinism():
    env = canonical_env(get_problem("heat1d"))
    params = init_params(GNConfig(dim=1), 0)
    a = rollout(params, env, 5)
    b = rollout(params, env, 5)
    assert a.shape == (6, env.mesh.n_vertices)
    assert np.array_equal(a, b)
    assert np.array_equal(a[0], env.u0)
