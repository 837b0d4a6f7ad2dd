"""Two-layer mean-aggregating graph encoder with jumping-knowledge output.

Per node: h0 = embedding row; h_l = relu(W_l @ (mean of sampled neighbor
h_{l-1} + own h_{l-1})) for l in {1, 2}; the final representation is the
column concatenation of h1 and h2 (optionally h0 as well).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .graphs import (DomainGraph, SamplerConfig, gather_sampled, node_str,
                     sampled_adjacency)

# sampler stream labels for the two aggregation hops
LAYER_INNER = 1
LAYER_OUTER = 2


@dataclass
class EncoderParams:
    """Embedding table plus layer weights for one domain."""

    domain: str
    emb: np.ndarray   # (n_nodes, d0)
    W1: np.ndarray    # (d0, d1)
    W2: np.ndarray    # (d1, d2)
    jk_include_input: bool = False
    n_users: int | None = None  # split point between u:/i: checkpoint tags

    @property
    def out_dim(self) -> int:
        d = self.W1.shape[1] + self.W2.shape[1]
        if self.jk_include_input:
            d += self.emb.shape[1]
        return d

    def names(self):
        return ("emb", "W1", "W2")

    def as_dict(self):
        return {"emb": self.emb, "W1": self.W1, "W2": self.W2}

    def copy(self):
        return EncoderParams(self.domain, self.emb.copy(), self.W1.copy(),
                             self.W2.copy(), self.jk_include_input, self.n_users)


def _glorot(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def init_params(domain: str, num_nodes: int, seed: int, d0: int = 64,
                jk_include_input: bool = False) -> EncoderParams:
    """Seeded init: embeddings ~ U(-1/sqrt(d0), 1/sqrt(d0)), Glorot weights."""
    if d0 < 1:
        raise ValueError("d0 must be >= 1")
    rng = np.random.default_rng([seed, {"source": 1, "target": 2}[domain]])
    lim = 1.0 / np.sqrt(d0)
    emb = rng.uniform(-lim, lim, size=(num_nodes, d0))
    W1 = _glorot(rng, d0, d0)
    W2 = _glorot(rng, d0, d0)
    return EncoderParams(domain, emb, W1, W2, jk_include_input)


@dataclass
class NodeBatch:
    """Anchor nodes plus their layer-wise sampled neighborhoods.

    The two aggregation steps are precompiled into sparse matrices
    combining the neighbor mean and the self term, so the forward pass is
    two sparse matmuls plus dense layer algebra.
    """

    anchors: np.ndarray          # flat node ids, unique
    b1_nodes: np.ndarray         # unique(anchors + outer neighbors)
    b2_nodes: np.ndarray         # unique(b1 + inner neighbors)
    anchor_pos_in_b1: np.ndarray
    anchor_pos_in_b2: np.ndarray
    agg1: object                 # (|b1|, |b2|) sparse: neighbor mean + self
    agg2: object                 # (|anchors|, |b1|) sparse: neighbor mean + self


def _mean_plus_self(n_rows, n_cols, nbr_pos, seg, self_pos):
    import scipy.sparse as sp

    counts = np.bincount(seg, minlength=n_rows).astype(np.float64)
    weights = 1.0 / counts[seg]
    rows = np.concatenate([seg, np.arange(n_rows)])
    cols = np.concatenate([nbr_pos, self_pos])
    vals = np.concatenate([weights, np.ones(n_rows)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_rows, n_cols))


def build_batch(g: DomainGraph, anchors: np.ndarray, cfg: SamplerConfig,
                epoch: int) -> NodeBatch:
    """Sample the two-hop neighborhood plan for a set of anchor nodes."""
    anchors = np.asarray(anchors, dtype=np.int64)
    if len(np.unique(anchors)) != len(anchors):
        raise ValueError("anchors must be unique within a batch")
    outer_adj = sampled_adjacency(g, cfg.fanout, cfg.seed, epoch, LAYER_OUTER)
    outer_nbrs, outer_seg = gather_sampled(outer_adj, anchors)
    b1_nodes = np.unique(np.concatenate([anchors, outer_nbrs]))
    inner_adj = sampled_adjacency(g, cfg.fanout, cfg.seed, epoch, LAYER_INNER)
    inner_nbrs, inner_seg = gather_sampled(inner_adj, b1_nodes)
    b2_nodes = np.unique(np.concatenate([b1_nodes, inner_nbrs]))
    anchor_pos_in_b1 = np.searchsorted(b1_nodes, anchors)
    b1_pos_in_b2 = np.searchsorted(b2_nodes, b1_nodes)
    agg1 = _mean_plus_self(len(b1_nodes), len(b2_nodes),
                           np.searchsorted(b2_nodes, inner_nbrs), inner_seg,
                           b1_pos_in_b2)
    agg2 = _mean_plus_self(len(anchors), len(b1_nodes),
                           np.searchsorted(b1_nodes, outer_nbrs), outer_seg,
                           anchor_pos_in_b1)
    return NodeBatch(anchors, b1_nodes, b2_nodes, anchor_pos_in_b1,
                     b1_pos_in_b2[anchor_pos_in_b1], agg1, agg2)


def encode(tape: Tape, emb_node, w1_node, w2_node, batch: NodeBatch,
           jk_include_input: bool = False):
    """Differentiable forward pass; returns a (|anchors|, out_dim) node."""
    h0 = tape.lookup(emb_node, batch.b2_nodes)
    h1 = tape.relu(tape.matmul(tape.spmm(batch.agg1, h0), w1_node))
    h2 = tape.relu(tape.matmul(tape.spmm(batch.agg2, h1), w2_node))
    anchor_h1 = tape.lookup(h1, batch.anchor_pos_in_b1)
    parts = [anchor_h1, h2]
    if jk_include_input:
        parts.insert(0, tape.lookup(h0, batch.anchor_pos_in_b2))
    return tape.concat_cols(parts)


def encode_batch(tape: Tape, params: EncoderParams, g: DomainGraph,
                 anchors, cfg: SamplerConfig, epoch: int):
    """Convenience wrapper: leaves for the params, sampling, then encode.

    Returns (output node, {param name: leaf node}).
    """
    emb = tape.leaf(params.emb)
    w1 = tape.leaf(params.W1)
    w2 = tape.leaf(params.W2)
    batch = build_batch(g, np.asarray(anchors, dtype=np.int64), cfg, epoch)
    out = encode(tape, emb, w1, w2, batch, params.jk_include_input)
    return out, {"emb": emb, "W1": w1, "W2": w2}


def encode_all(params: EncoderParams, g: DomainGraph) -> np.ndarray:
    """Deterministic full-neighborhood forward over every node (no tape).

    Used at evaluation time; the mean runs over the complete neighbor list
    instead of a sampled subset.
    """
    import scipy.sparse as sp

    n = g.n_nodes
    deg = (g.indptr[1:] - g.indptr[:-1]).astype(np.float64)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    A = sp.csr_matrix((np.ones(len(g.indices)), g.indices, g.indptr), shape=(n, n))
    mean_op = sp.diags(inv) @ A
    h0 = params.emb
    h1 = np.maximum((mean_op @ h0 + h0) @ params.W1, 0.0)
    h2 = np.maximum((mean_op @ h1 + h1) @ params.W2, 0.0)
    parts = [h1, h2]
    if params.jk_include_input:
        parts.insert(0, h0)
    return np.concatenate(parts, axis=1)


# -- checkpoint format ---------------------------------------------------


class CheckpointError(ValueError):
    """Header, dimension, or truncation problem in a checkpoint file."""


def _fmt_row(values):
    return " ".join(f"{v:.9g}" for v in values)


def save_params(params: EncoderParams, path) -> None:
    """Write the textual checkpoint; save(load(save(x))) is byte-stable."""
    n_nodes, dim = params.emb.shape
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"SCCDR-EMB v1 {params.domain} {n_nodes} {dim}\n")
        n_users = _checkpoint_user_count(params)
        for flat in range(n_nodes):
            tag = f"u:{flat}" if flat < n_users else f"i:{flat - n_users}"
            fh.write(f"{tag} {_fmt_row(params.emb[flat])}\n")
        fh.write(f"SCCDR-W v1 {params.W1.shape[0]} {params.W1.shape[1]} "
                 f"{params.W2.shape[0]} {params.W2.shape[1]} "
                 f"{int(params.jk_include_input)}\n")
        for row in params.W1:
            fh.write(_fmt_row(row) + "\n")
        for row in params.W2:
            fh.write(_fmt_row(row) + "\n")


def _checkpoint_user_count(params) -> int:
    if params.n_users is None:
        return params.emb.shape[0]
    return params.n_users


def load_params(path) -> EncoderParams:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 5 or header[0] != "SCCDR-EMB" or header[1] != "v1":
            raise CheckpointError(f"{path}: bad embedding header")
        domain, n_nodes, dim = header[2], int(header[3]), int(header[4])
        emb = np.zeros((n_nodes, dim))
        n_users = 0
        for flat in range(n_nodes):
            line = fh.readline()
            if line == "":
                raise CheckpointError(f"{path}: truncated embedding section")
            cols = line.split()
            if len(cols) != dim + 1:
                raise CheckpointError(
                    f"{path}: node {cols[0] if cols else '?'}: expected {dim} "
                    f"values, got {len(cols) - 1}")
            if cols[0].startswith("u:"):
                n_users = flat + 1
            emb[flat] = [float(v) for v in cols[1:]]
        wh = fh.readline().split()
        if len(wh) != 7 or wh[0] != "SCCDR-W" or wh[1] != "v1":
            raise CheckpointError(f"{path}: bad weight header")
        r1, c1, r2, c2, jk = (int(v) for v in wh[2:])
        if r1 != dim:
            raise CheckpointError(
                f"{path}: weight rows {r1} do not match embedding dim {dim}")

        def read_matrix(rows, cols):
            m = np.zeros((rows, cols))
            for r in range(rows):
                line = fh.readline()
                if line == "":
                    raise CheckpointError(f"{path}: truncated weight section")
                vals = line.split()
                if len(vals) != cols:
                    raise CheckpointError(
                        f"{path}: expected {cols} values per weight row, "
                        f"got {len(vals)}")
                m[r] = [float(v) for v in vals]
            return m

        W1 = read_matrix(r1, c1)
        W2 = read_matrix(r2, c2)
    return EncoderParams(domain, emb, W1, W2, bool(jk), n_users)
