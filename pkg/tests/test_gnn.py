import numpy as np
import pytest

from meshpde.gnn import (
    CheckpointError,
    GNConfig,
    build_graph_input,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    step,
)
from meshpde.mesh import build_regular_1d, build_regular_tri_2d, mesh_edges, sample_env
from meshpde.residuals import canonical_env, get_problem


def test_graph_input_shapes_and_directions():
    m = build_regular_tri_2d(-1.0, 1.0, 0.25)
    g = build_graph_input(m)
    und = mesh_edges(m)
    assert len(g.src) == 2 * len(und)
    # both directions present for every undirected edge
    pairs = set(zip(g.src.tolist(), g.dst.tolist()))
    for a, b in und:
        assert (a, b) in pairs and (b, a) in pairs
    # edge feature = [x_dst - x_src, distance]
    rel = m.vertices[g.dst] - m.vertices[g.src]
    assert np.allclose(g.edge_features[:, :2], rel)
    assert np.allclose(g.edge_features[:, 2], np.linalg.norm(rel, axis=1))
    # one-hot node type constants
    assert g.node_const.shape == (m.n_vertices, 5)
    assert np.all(g.node_const.sum(axis=1) == 1.0)


def test_graph_input_optional_positions():
    m = build_regular_1d(-1.0, 1.0, 0.5)
    g = build_graph_input(m, include_positions=True)
    assert g.node_const.shape == (m.n_vertices, 6)
    assert np.allclose(g.node_const[:, 5], m.vertices[:, 0])


def test_config_feature_widths():
    c1 = GNConfig(dim=1)
    assert c1.node_feature_width == 6  # field value + 5 type flags
    assert c1.edge_feature_width == 2
    c2 = GNConfig(dim=2, include_positions=True)
    assert c2.node_feature_width == 8
    assert c2.edge_feature_width == 3


def test_init_is_seed_deterministic_with_zero_biases():
    cfg = GNConfig(dim=1)
    a = init_params(cfg, seed=5)
    b = init_params(cfg, seed=5)
    c = init_params(cfg, seed=6)
    same = [
        np.array_equal(ta.data, tb.data)
        for (_, ta), (_, tb) in zip(a.named_tensors(), b.named_tensors())
    ]
    assert all(same)
    differs = [
        not np.array_equal(ta.data, tc.data)
        for (_, ta), (_, tc) in zip(a.named_tensors(), c.named_tensors())
        if "weight" in _
    ]
    assert any(differs)
    for name, t in a.named_tensors():
        if name.endswith("bias"):
            assert np.all(t.data == 0.0)
        else:
            bound = np.sqrt(1.0 / t.data.shape[0])
            assert np.all(np.abs(t.data) <= bound)


def test_parameter_count_formula():
    cfg = GNConfig(dim=2)
    params = init_params(cfg, 0)

    def mlp_count(n_in, n_out, latent=16, layers=4):
        widths = [n_in] + [latent] * (layers - 1) + [n_out]
        return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))

    want = (
        mlp_count(6, 16)
        + mlp_count(3, 16)
        + mlp_count(48, 16)
        + mlp_count(32, 16)
        + mlp_count(16, 1)
    )
    assert params.n_parameters() == want


def test_forward_is_deterministic_and_shaped():
    m = build_regular_1d(-1.0, 1.0, 0.1)
    g = build_graph_input(m)
    params = init_params(GNConfig(dim=1), 0)
    u = np.sin(m.vertices[:, 0])
    d1 = forward(params, g, u).data
    d2 = forward(params, g, u).data
    assert d1.shape == (m.n_vertices,)
    assert np.array_equal(d1, d2)


def test_step_adds_increment():
    env = canonical_env(get_problem("heat1d"))
    params = init_params(GNConfig(dim=1), 1)
    g = build_graph_input(env.mesh)
    out = step(params, env, env.u0, g)
    delta = forward(params, g, env.u0).data
    assert np.allclose(out, env.u0 + delta)


def test_step_rejects_dimension_mismatch():
    env = canonical_env(get_problem("heat1d"))
    params = init_params(GNConfig(dim=2), 0)
    with pytest.raises(ValueError):
        step(params, env, env.u0)


def test_processor_rounds_change_the_function():
    m = build_regular_tri_2d(-1.0, 1.0, 0.5)
    env = sample_env(m, 3)
    g = build_graph_input(m)
    one = init_params(GNConfig(dim=2, processor_rounds=1), 7)
    two = init_params(GNConfig(dim=2, processor_rounds=2), 7)
    # same weights (identical draw order), different unroll depth
    d1 = forward(one, g, env.u0).data
    d2 = forward(two, g, env.u0).data
    assert not np.allclose(d1, d2)


def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    params = init_params(GNConfig(dim=2, latent=16), 42)
    meta = {"problem": "heat2d", "note": "roundtrip"}
    path = str(tmp_path / "model.bin")
    save_checkpoint(params, path, meta)
    loaded, got_meta = load_checkpoint(path)
    assert got_meta == meta
    assert loaded.config == params.config
    for (na, ta), (nb, tb) in zip(params.named_tensors(), loaded.named_tensors()):
        assert na == nb
        assert np.array_equal(ta.data, tb.data)


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOT A CHECKPOINT\n{}\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))


def test_checkpoint_rejects_truncation_and_trailing(tmp_path):
    params = init_params(GNConfig(dim=1), 0)
    path = tmp_path / "model.bin"
    save_checkpoint(params, str(path), {})
    blob = path.read_bytes()

    truncated = tmp_path / "trunc.bin"
    truncated.write_bytes(blob[:-16])
    with pytest.raises(CheckpointError):
        load_checkpoint(str(truncated))

    padded = tmp_path / "padded.bin"
    padded.write_bytes(blob + b"\x00" * 8)
    with pytest.raises(CheckpointError):
        load_checkpoint(str(padded))


def test_checkpoint_rejects_corrupt_header(tmp_path):
    params = init_params(GNConfig(dim=1), 0)
    path = tmp_path / "model.bin"
    save_checkpoint(params, str(path), {})
    blob = path.read_bytes()
    magic_end = blob.index(b"\n") + 1
    header_end = blob.index(b"\n", magic_end) + 1
    broken = blob[:magic_end] + b'{"not": "valid header"}\n' + blob[header_end:]
    bad = tmp_path / "header.bin"
    bad.write_bytes(broken)
    with pytest.raises(CheckpointError):
        load_checkpoint(str(bad))
