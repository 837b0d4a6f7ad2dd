"""Contrastive objectives: within-domain BCE and cross-domain InfoNCE.

The BCE loss scores raw dot products through the logistic function; the
InfoNCE losses use cosine similarity with temperature. Cross-domain anchors
are overlapping users; in stage 2 their source-side embeddings arrive
wrapped in a stop-gradient barrier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import DataError, DomainGraph


@dataclass
class LossConfig:
    tau: float = 0.5
    n_pos_intra: int = 5
    n_neg_intra: int = 5
    n_neg_inter: int = 20
    lambda_intra: float = 1.0
    lambda_inter: float = 0.5
    denominator_negatives_only: bool = False

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.n_neg_inter < 2 or self.n_neg_inter % 2 != 0:
            raise ValueError("n_neg_inter must be even and >= 2")
        if self.n_pos_intra < 1 or self.n_neg_intra < 1:
            raise ValueError("intra pool sizes must be >= 1")
        if self.lambda_intra < 0 or self.lambda_inter < 0:
            raise ValueError("loss weights must be non-negative")


def intra_bce_loss(tape, anchors, positives, negatives,
                   pos_anchor_idx, neg_anchor_idx, n_anchors):
    """Neighbor-similarity BCE, mean over (anchor, pos, neg) cross terms.

    `anchors`, `positives`, `negatives` are embedding matrix nodes; the two
    index arrays map each positive/negative row to its anchor row. Every
    anchor index in [0, n_anchors) must own at least one positive and one
    negative (anchors without positives are skipped by the caller).
    """
    pos_anchor_idx = np.asarray(pos_anchor_idx, dtype=np.int64)
    neg_anchor_idx = np.asarray(neg_anchor_idx, dtype=np.int64)
    # per-pair terms decompose: mean over the pos x neg product equals
    # mean_p log(sig(s_p)) + mean_q log(1 - sig(t_q)) per anchor
    pos_scores = tape.dot(tape.lookup(anchors, pos_anchor_idx), positives)
    neg_scores = tape.dot(tape.lookup(anchors, neg_anchor_idx), negatives)
    log_pos = tape.log(tape.sigmoid(pos_scores))
    log_neg = tape.log(tape.sigmoid(tape.scalar_multiply(neg_scores, -1.0)))
    per_anchor = tape.add(tape.segment_mean(log_pos, pos_anchor_idx, n_anchors),
                          tape.segment_mean(log_neg, neg_anchor_idx, n_anchors))
    return tape.scalar_multiply(tape.mean_rows(per_anchor), -1.0)


def _similarity_columns(tape, anchor_emb, pool_embs, tau):
    cols = [tape.scalar_multiply(tape.cosine_similarity(anchor_emb, e), 1.0 / tau)
            for e in pool_embs]
    return cols


def inter_user_infonce(tape, src_emb, tgt_self_emb, neg_embs, tau,
                       k_active, denominator_negatives_only=False):
    """Aligned-user InfoNCE, mean over anchors.

    `src_emb` and `tgt_self_emb` are (n, d) nodes of the two-sided
    representations of the same users; `neg_embs` is a list of (n, d) nodes
    (the ordered negative pool, easiest first). Only the first `k_active`
    negatives enter the denominator.
    """
    if k_active < 1:
        raise ValueError("k_active must be >= 1")
    if k_active > len(neg_embs):
        raise ValueError("k_active exceeds the negative pool size")
    pos = tape.scalar_multiply(tape.cosine_similarity(src_emb, tgt_self_emb),
                               1.0 / tau)
    negs = _similarity_columns(tape, src_emb, neg_embs[:k_active], tau)
    denom_cols = negs if denominator_negatives_only else [pos] + negs
    lse = tape.logsumexp(tape.concat_cols(denom_cols))
    return tape.mean_rows(tape.subtract(lse, pos))


def inter_neighbor_infonce(tape, src_emb, pos_emb, neg_embs, pair_anchor_idx,
                           n_anchors, tau, k_active,
                           denominator_negatives_only=False):
    """Neighbor-alignment InfoNCE, mean over positives per anchor then anchors.

    Rows of `src_emb`/`pos_emb` are (anchor, target-neighbor) pairs;
    `pair_anchor_idx` maps each pair to its anchor in [0, n_anchors).
    `neg_embs` is a list of per-anchor (n_anchors, d) negative nodes (shared
    pool, target neighbors excluded). Anchors without target neighbors are
    skipped by the caller.
    """
    if k_active < 1:
        raise ValueError("k_active must be >= 1")
    pair_anchor_idx = np.asarray(pair_anchor_idx, dtype=np.int64)
    pos = tape.scalar_multiply(tape.cosine_similarity(src_emb, pos_emb), 1.0 / tau)
    anchor_src = tape.segment_mean(src_emb, pair_anchor_idx, n_anchors)
    neg_cols = _similarity_columns(tape, anchor_src, neg_embs[:k_active], tau)
    neg_mat = tape.concat_cols(neg_cols)               # (n_anchors, k)
    pair_negs = tape.lookup(neg_mat, pair_anchor_idx)  # (n_pairs, k)
    denom = pair_negs if denominator_negatives_only \
        else tape.concat_cols([pos, pair_negs])
    lse = tape.logsumexp(denom)
    per_anchor = tape.segment_mean(tape.subtract(lse, pos), pair_anchor_idx,
                                   n_anchors)
    return tape.mean_rows(per_anchor)


def sample_inter_negative_pool(target: DomainGraph, anchor_target_user: int,
                               n_neg: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform pool of distinct target-domain nodes (users or items).

    Excludes the anchor's own target representation and its target
    neighbors, so the same pool serves both cross-domain losses.
    """
    excluded = set(int(v) for v in target.neighbors(anchor_target_user))
    excluded.add(int(anchor_target_user))
    n_total = target.n_nodes
    if n_total - len(excluded) < n_neg:
        raise DataError(
            f"target domain has only {n_total - len(excluded)} eligible "
            f"negatives, need {n_neg}")
    pool: list[int] = []
    chosen: set[int] = set()
    while len(pool) < n_neg:
        cand = int(rng.integers(n_total))
        if cand in excluded or cand in chosen:
            continue
        chosen.add(cand)
        pool.append(cand)
    return np.asarray(pool, dtype=np.int64)
