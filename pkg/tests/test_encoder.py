"""Encoder forward pass, initialization, and checkpoint round-trips."""

import numpy as np
import pytest

from conftest import graph_from_pairs
from sccdr.autodiff import Tape
from sccdr.encoder import (CheckpointError, EncoderParams, build_batch,
                           encode, encode_all, encode_batch, init_params,
                           load_params, save_params)
from sccdr.graphs import SamplerConfig
from test_autodiff import finite_difference


def identity_params(domain, n_nodes, emb, d=2):
    return EncoderParams(domain, np.asarray(emb, dtype=np.float64),
                         np.eye(d), np.eye(d))


# -- initialization ------------------------------------------------------


def test_init_is_deterministic():
    a = init_params("target", 50, seed=3)
    b = init_params("target", 50, seed=3)
    assert np.array_equal(a.emb, b.emb)
    assert np.array_equal(a.W1, b.W1)
    assert np.array_equal(a.W2, b.W2)


def test_init_differs_across_domains_and_seeds():
    a = init_params("target", 50, seed=3)
    assert not np.array_equal(a.emb, init_params("source", 50, seed=3).emb)
    assert not np.array_equal(a.emb, init_params("target", 50, seed=4).emb)


def test_default_output_dimension_is_128():
    p = init_params("target", 10, seed=0, d0=64)
    assert p.out_dim == 128


def test_jk_with_input_adds_d0():
    p = init_params("target", 10, seed=0, d0=64, jk_include_input=True)
    assert p.out_dim == 192


def test_embedding_entries_centered():
    p = init_params("target", 2000, seed=0, d0=64)
    entries = p.emb.reshape(-1)
    assert len(entries) >= 10 ** 5
    assert abs(entries.mean()) < 0.005
    assert np.all(np.abs(entries) <= 1.0 / 8.0)


def test_init_rejects_bad_width():
    with pytest.raises(ValueError):
        init_params("target", 4, seed=0, d0=0)


# -- forward pass hand examples ------------------------------------------


def encode_rows(params, g, anchors, epoch=0, fanout=10, seed=0):
    tape = Tape()
    out, _ = encode_batch(tape, params, g, anchors,
                          SamplerConfig(fanout=fanout, seed=seed), epoch)
    return out.value


def test_isolated_node_uses_zero_neighbor_mean():
    # user 1 has no edges; user 0 links to the single item
    params = identity_params("target", 3, [[1.0, -1.0], [0.5, 0.5], [0.0, 0.0]])
    from sccdr import graphs
    isolated = graphs.DomainGraph("target", 2, 1, np.array([0, 1, 1, 2]),
                                  np.array([2, 0]), 1)
    out = encode_rows(params, isolated, [1])
    # empty mean leaves h0 = (0.5, 0.5); relu passes it through both layers
    assert np.allclose(out, [[0.5, 0.5, 0.5, 0.5]])


def test_isolated_node_relu_clips(tmp_path):
    from sccdr import graphs
    g = graphs.DomainGraph("target", 1, 1, np.array([0, 0, 0]),
                           np.array([], dtype=np.int64), 0)
    params = identity_params("target", 2, [[1.0, -1.0], [0.0, 0.0]])
    out = encode_rows(params, g, [0])
    assert np.allclose(out[0, :2], [1.0, 0.0])


def test_single_neighbor_mean(tmp_path):
    g = graph_from_pairs(tmp_path, [("a", "x")])
    params = identity_params("target", 2, [[0.0, 0.0], [2.0, -2.0]])
    out = encode_rows(params, g, [0])
    # layer 1: mean({(2,-2)}) + (0,0) = (2,-2), relu -> (2,0)
    assert np.allclose(out[0, :2], [2.0, 0.0])


def test_output_width_tracks_layer_dims(tmp_path):
    g = graph_from_pairs(tmp_path, [("a", "x"), ("b", "y")])
    params = identity_params("target", 4, np.zeros((4, 2)))
    out = encode_rows(params, g, [0, 1])
    assert out.shape == (2, 4)


def test_batch_order_permutes_rows(tmp_path):
    g = graph_from_pairs(tmp_path, [(f"u{k}", f"i{j}") for k in range(4)
                                    for j in range(3)])
    params = init_params("target", g.n_nodes, seed=1, d0=8)
    a = encode_rows(params, g, [0, 2, 5])
    b = encode_rows(params, g, [5, 0, 2])
    assert np.allclose(a, b[[1, 2, 0]])


def test_anchors_must_be_unique(tmp_path):
    g = graph_from_pairs(tmp_path, [("a", "x")])
    with pytest.raises(ValueError):
        build_batch(g, np.array([0, 0]), SamplerConfig(), 0)


def test_encode_gradients_match_finite_differences(tmp_path):
    g = graph_from_pairs(tmp_path, [(f"u{k}", f"i{j}") for k in range(3)
                                    for j in range(2)])
    r = np.random.default_rng(0)
    emb0 = r.normal(size=(g.n_nodes, 3))
    w10 = r.normal(size=(3, 3))
    w20 = r.normal(size=(3, 3))
    anchors = np.array([0, 1, 4])
    batch = build_batch(g, anchors, SamplerConfig(fanout=2, seed=0), 0)

    def run(emb, w1, w2):
        tape = Tape()
        leaves = [tape.leaf(emb), tape.leaf(w1), tape.leaf(w2)]
        out = encode(tape, *leaves, batch)
        score = tape.mean_rows(tape.dot(out, out))
        return tape, leaves, score

    tape, leaves, score = run(emb0, w10, w20)
    grads = tape.gradient(score, leaves)

    def scalar(emb, w1, w2):
        return run(emb, w1, w2)[2].value.item()

    fd = [finite_difference(lambda v: scalar(v, w10, w20), emb0),
          finite_difference(lambda v: scalar(emb0, v, w20), w10),
          finite_difference(lambda v: scalar(emb0, w10, v), w20)]
    for got, want in zip(grads, fd):
        assert np.allclose(got, want, rtol=1e-4, atol=1e-7)


def test_encode_all_uses_full_neighborhoods(tmp_path):
    g = graph_from_pairs(tmp_path, [("a", "x"), ("a", "y"), ("b", "y")])
    params = identity_params("target", g.n_nodes,
                             np.arange(8, dtype=np.float64).reshape(4, 2))
    out = encode_all(params, g)
    emb = params.emb
    h1 = np.maximum(emb[0] + (emb[2] + emb[3]) / 2.0, 0.0)
    assert np.allclose(out[0, :2], h1)
    assert out.shape == (4, 4)


def test_encode_all_matches_sampled_forward_when_fanout_covers(tmp_path):
    g = graph_from_pairs(tmp_path, [(f"u{k}", f"i{j}") for k in range(3)
                                    for j in range(3)])
    params = init_params("target", g.n_nodes, seed=2, d0=4)
    full = encode_all(params, g)
    sampled = encode_rows(params, g, np.arange(g.n_nodes), fanout=50)
    assert np.allclose(full, sampled, atol=1e-12)


# -- checkpoints ---------------------------------------------------------


def roundtrip_params():
    p = init_params("target", 5, seed=9, d0=3)
    p.n_users = 3
    return p


def test_checkpoint_round_trip_is_byte_stable(tmp_path):
    p = roundtrip_params()
    f1, f2 = tmp_path / "a.txt", tmp_path / "b.txt"
    save_params(p, f1)
    q = load_params(f1)
    save_params(q, f2)
    assert f1.read_bytes() == f2.read_bytes()
    assert q.domain == p.domain and q.n_users == 3
    assert np.allclose(q.W1, p.W1) and np.allclose(q.W2, p.W2)


def test_checkpoint_node_tags_split_users_and_items(tmp_path):
    p = roundtrip_params()
    save_params(p, tmp_path / "c.txt")
    lines = (tmp_path / "c.txt").read_text().splitlines()
    tags = [ln.split()[0] for ln in lines[1:6]]
    assert tags == ["u:0", "u:1", "u:2", "i:0", "i:1"]


def test_checkpoint_preserves_jk_flag(tmp_path):
    p = init_params("source", 4, seed=1, d0=2, jk_include_input=True)
    save_params(p, tmp_path / "jk.txt")
    assert load_params(tmp_path / "jk.txt").jk_include_input is True


def test_checkpoint_bad_header(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("NOPE v9\n")
    with pytest.raises(CheckpointError, match="header"):
        load_params(path)


def test_checkpoint_dimension_mismatch_names_both_sizes(tmp_path):
    p = roundtrip_params()
    path = tmp_path / "dims.txt"
    save_params(p, path)
    lines = path.read_text().splitlines()
    lines[1] = "u:0 1.0 2.0"  # one value short of the declared dim
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CheckpointError, match="expected 3 values, got 2"):
        load_params(path)


def test_checkpoint_truncation_detected(tmp_path):
    p = roundtrip_params()
    path = tmp_path / "trunc.txt"
    save_params(p, path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:4]) + "\n")
    with pytest.raises(CheckpointError, match="truncated"):
        load_params(path)
