"""HIT@N retrieval metrics and the loss-stability statistics."""

import numpy as np
import pytest

from conftest import graph_from_pairs, write_edge_tsv
from sccdr.encoder import EncoderParams, encode_all
from sccdr.evaluation import (EvalReport, final_half_std, hit_at_n,
                              stability_report, write_stability_tsv)
from sccdr.graphs import build_dataset, load_edges
from sccdr.trainer import EpochRecord


def make_dataset(tmp_path, n_users=10, n_items=10, per_user=4):
    tgt = [(f"u{k}", f"i{(k + j) % n_items}") for k in range(n_users)
           for j in range(per_user)]
    src = [(f"u{k}", "s0") for k in range(n_users)]
    source = graph_from_pairs(tmp_path, src, "source", "src.tsv")
    target = graph_from_pairs(tmp_path, tgt, "target", "tgt.tsv")
    return build_dataset(source, target)


def rand_params(g, seed=0, d0=6):
    r = np.random.default_rng(seed)
    return EncoderParams("target", r.normal(size=(g.n_nodes, d0)),
                         r.normal(size=(d0, d0)), r.normal(size=(d0, d0)))


def brute_force_hits(params, ds, cutoffs, include_train=False, dot=False):
    """Independent loop-based ranking over the encoded corpus."""
    g = ds.target
    emb = encode_all(params, g)
    hits = {n: 0 for n in cutoffs}
    for u, y in ds.test_rows:
        uv = emb[u]
        scores = []
        for item in range(g.n_items):
            iv = emb[g.n_users + item]
            if dot:
                s = float(uv @ iv)
            else:
                s = float(uv @ iv / ((np.linalg.norm(uv) + 1e-12)
                                     * (np.linalg.norm(iv) + 1e-12)))
            scores.append(s)
        banned = set() if include_train \
            else {int(v) - g.n_users for v in g.neighbors(u)}
        rank = 1
        for item, s in enumerate(scores):
            if item in banned or item == y:
                continue
            if s > scores[y] or (s == scores[y] and item < y):
                rank += 1
        for n in cutoffs:
            hits[n] += rank <= n
    return {n: hits[n] / len(ds.test_rows) for n in cutoffs}


def test_hit_matches_brute_force_oracle(tmp_path):
    ds = make_dataset(tmp_path)
    params = rand_params(ds.target, seed=3)
    report = hit_at_n(params, ds, [1, 2, 5])
    want = brute_force_hits(params, ds, [1, 2, 5])
    for n in (1, 2, 5):
        assert report.hit_at[n] == pytest.approx(want[n], abs=1e-12)


def test_hit_three_item_hand_fixture(tmp_path):
    tgt = [("a", "x"), ("a", "y"), ("a", "z")]
    src = [("a", "s0")]
    ds = build_dataset(graph_from_pairs(tmp_path, src, "source", "s.tsv"),
                       graph_from_pairs(tmp_path, tgt, "target", "t.tsv"))
    # training keeps only item x; y is validation, z is test
    emb = np.zeros((4, 2))
    emb[0] = (1.0, 0.0)              # the user
    emb[1] = (1.0, 0.0)              # item x (excluded as a train item)
    emb[2] = (0.0, 1.0)              # item y scores 0
    emb[3] = (0.8, 0.2)              # item z, the test item
    params = EncoderParams("target", emb, np.eye(2), np.eye(2))
    report = hit_at_n(params, ds, [1, 2])
    assert report.hit_at == {1: 1.0, 2: 1.0}
    report = hit_at_n(params, ds, [1], include_train_items=True)
    assert report.hit_at[1] == 0.0  # item x now outranks z


def test_hit_monotone_and_saturates(tmp_path):
    ds = make_dataset(tmp_path)
    params = rand_params(ds.target, seed=1)
    report = hit_at_n(params, ds, [1, 3, 5, 10])
    vals = [report.hit_at[n] for n in (1, 3, 5, 10)]
    assert vals == sorted(vals)
    assert report.hit_at[10] == 1.0  # cutoff covers the whole corpus


def test_hit_invariant_under_positive_scaling(tmp_path):
    ds = make_dataset(tmp_path)
    params = rand_params(ds.target, seed=2)
    scaled = EncoderParams("target", params.emb * 5.0, params.W1, params.W2)
    a = hit_at_n(params, ds, [2, 4])
    b = hit_at_n(scaled, ds, [2, 4])
    # relu and the linear layers are positively homogeneous, cosine strips
    # the overall factor
    assert a.hit_at == b.hit_at


def test_hit_dot_product_flag_changes_ranking(tmp_path):
    ds = make_dataset(tmp_path)
    params = rand_params(ds.target, seed=4)
    dot = hit_at_n(params, ds, [1, 2, 5], similarity="dot")
    want = brute_force_hits(params, ds, [1, 2, 5], dot=True)
    for n in (1, 2, 5):
        assert dot.hit_at[n] == pytest.approx(want[n], abs=1e-12)


def test_hit_ties_rank_by_ascending_item_index(tmp_path):
    tgt = [("a", "x"), ("a", "y"), ("a", "z"), ("b", "x"), ("b", "z"),
           ("b", "y")]
    src = [("a", "s0"), ("b", "s0")]
    ds = build_dataset(graph_from_pairs(tmp_path, src, "source", "s.tsv"),
                       graph_from_pairs(tmp_path, tgt, "target", "t.tsv"))
    emb = np.ones((5, 2))  # every score ties
    params = EncoderParams("target", emb, np.eye(2), np.eye(2))
    report = hit_at_n(params, ds, [1, 2])
    # user a: test item z (index 2) ties with y (index 1); y wins rank 1
    # user b: test item y (index 1) ties with z (index 2); y takes rank 1
    assert report.hit_at[1] == 0.5
    assert report.hit_at[2] == 1.0


def test_hit_random_embeddings_near_binomial_rate(tmp_path):
    ds = make_dataset(tmp_path, n_users=200, n_items=50, per_user=4)
    params = rand_params(ds.target, seed=7)
    n = 10
    report = hit_at_n(params, ds, [n])
    candidates = 50 - 2  # two train items remain per user after the split
    p = n / candidates
    sigma = np.sqrt(p * (1 - p) / report.num_test_rows)
    assert abs(report.hit_at[n] - p) < 3.5 * sigma


def test_hit_thread_count_does_not_change_results(tmp_path, monkeypatch):
    ds = make_dataset(tmp_path)
    params = rand_params(ds.target, seed=5)
    monkeypatch.setenv("SCCDR_THREADS", "1")
    a = hit_at_n(params, ds, [1, 5])
    monkeypatch.setenv("SCCDR_THREADS", "4")
    b = hit_at_n(params, ds, [1, 5])
    assert a.hit_at == b.hit_at


def test_hit_input_validation(tmp_path):
    ds = make_dataset(tmp_path)
    params = rand_params(ds.target)
    with pytest.raises(ValueError):
        hit_at_n(params, ds, [0])
    with pytest.raises(ValueError):
        hit_at_n(params, ds, [])
    ds.splits.clear()
    with pytest.raises(ValueError, match="test rows"):
        hit_at_n(params, ds, [1])


def test_report_json_layout():
    report = EvalReport({100: 0.25, 50: 0.125}, 10, mode="full", seed=3)
    text = report.to_json()
    assert text.endswith("\n")
    assert '"hit@100": 0.25' in text and '"hit@50": 0.125' in text
    assert '"mode": "full"' in text and '"seed": 3' in text


# -- stability -----------------------------------------------------------


def record(epoch, u, n):
    return EpochRecord(epoch, "x", 0.0, 0.0, u, n, 0.0)


def test_final_half_std_hand_example():
    assert final_half_std([1, 1, 1, 1, 3, 1]) == pytest.approx(1.154701,
                                                               abs=1e-6)


def test_final_half_std_degenerate_cases():
    assert final_half_std([2.0, 2.0, 2.0, 2.0]) == 0.0
    assert final_half_std([5.0]) == 0.0


def test_stability_report_pure_function():
    log = [record(e, 1.0 + e, 0.5) for e in range(6)]
    rows = stability_report([("full", 0, log), ("mixed", 0, log)])
    by_mode = {}
    for mode, seed, name, std in rows:
        by_mode.setdefault(mode, []).append((name, std))
    assert by_mode["full"] == by_mode["mixed"]
    names = [n for n, _ in by_mode["full"]]
    assert "l_inter_sum" in names and "l_intra_s" in names


def test_stability_report_rejects_mismatched_lengths():
    a = [record(e, 1.0, 1.0) for e in range(4)]
    b = [record(e, 1.0, 1.0) for e in range(5)]
    with pytest.raises(ValueError, match="epoch"):
        stability_report([("full", 0, a), ("mixed", 0, b)])


def test_stability_tsv_layout(tmp_path):
    log = [record(e, 1.0, 1.0) for e in range(4)]
    rows = stability_report([("full", 1, log)])
    out = tmp_path / "stability.tsv"
    write_stability_tsv(rows, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "mode\tseed\tloss\tstd_final_half"
    assert len(lines) == 1 + 5
    assert all(ln.startswith("full\t1\t") for ln in lines[1:])
