"""Shared fixtures: tiny graphs and TSV writers used across test modules."""

import numpy as np
import pytest

from sccdr.graphs import build_dataset, load_edges


def write_edge_tsv(path, pairs):
    """Write an edge file with the standard header from (user, item) id pairs."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("user_id\titem_id\n")
        for u, i in pairs:
            fh.write(f"{u}\t{i}\n")
    return path


def write_overlap_tsv(path, pairs):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("source_user_id\ttarget_user_id\n")
        for s, t in pairs:
            fh.write(f"{s}\t{t}\n")
    return path


def graph_from_pairs(tmp_path, pairs, domain="target", name="edges.tsv"):
    return load_edges(write_edge_tsv(tmp_path / name, pairs), domain)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_dataset(tmp_path):
    """Two tiny domains sharing raw user ids a/b/c, target users with 5 items.

    Every target user has degree 5, so each contributes a validation and a
    test item and keeps 3 training edges. Item orders are staggered so no
    node ends up adjacent to its entire opposite partition after the split.
    """
    src_pairs = [(u, f"s{(2 * k + j) % 6}") for k, u in enumerate("abcd")
                 for j in range(4)]
    tgt_pairs = [(u, f"t{(2 * k + j) % 5}") for k, u in enumerate("abc")
                 for j in range(5)]
    source = graph_from_pairs(tmp_path, src_pairs, "source", "source.tsv")
    target = graph_from_pairs(tmp_path, tgt_pairs, "target", "target.tsv")
    return build_dataset(source, target, None, seed=0)
