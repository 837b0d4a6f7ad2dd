"""Easy-to-hard scheduling of per-anchor negative pools.

Difficulty of a (anchor, candidate) pair is the sum of their Katz scores,
with a higher sum meaning an easier negative. Pools are sampled once,
ordered easiest first, and the active prefix grows by one negative every
`n_step` epochs, starting from the easiest half.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import CrossDomainDataset, node_str
from .losses import sample_inter_negative_pool


def pair_difficulty(anchor_centrality: float, candidate_centrality: float) -> float:
    """Centrality sum; larger values are easier negatives."""
    return anchor_centrality + candidate_centrality


def build_schedule(n_epoch: int, n_neg: int) -> tuple[int, int]:
    """Returns (n_step, initial active count)."""
    if n_neg < 2 or n_neg % 2 != 0:
        raise ValueError("n_neg must be even and >= 2")
    if n_epoch < 1:
        raise ValueError("n_epoch must be >= 1")
    n_step = max(1, n_epoch // (n_neg // 2))
    return n_step, n_neg // 2


@dataclass
class CurriculumState:
    """Frozen per-anchor ordered pools plus the epoch-indexed schedule."""

    pools: dict       # target user -> ordered flat target node ids, easiest first
    difficulties: dict  # target user -> difficulty per pool entry, same order
    n_neg: int
    n_epoch: int
    n_step: int

    def active_count(self, epoch: int) -> int:
        if epoch < 0 or epoch >= self.n_epoch:
            raise ValueError(f"epoch {epoch} outside [0, {self.n_epoch})")
        return min(self.n_neg, self.n_neg // 2 + epoch // self.n_step)


def active_count(state: CurriculumState, epoch: int) -> int:
    return state.active_count(epoch)


def order_pool(candidates: np.ndarray, anchor_score: float,
               candidate_scores: np.ndarray):
    """Easiest-first ordering: descending difficulty sum, ties by node id."""
    difficulty = anchor_score + candidate_scores
    order = np.lexsort((candidates, -difficulty))
    return candidates[order], difficulty[order]


def build_curriculum(dataset: CrossDomainDataset, target_centrality: np.ndarray,
                     n_neg: int, n_epoch: int, seed: int) -> CurriculumState:
    """Sample and order one negative pool per overlapping user."""
    n_step, _ = build_schedule(n_epoch, n_neg)
    pools, diffs = {}, {}
    for _, t_user in dataset.overlap:
        rng = np.random.default_rng([seed, 0xC0DE, t_user])
        pool = sample_inter_negative_pool(dataset.target, t_user, n_neg, rng)
        ordered, difficulty = order_pool(pool, float(target_centrality[t_user]),
                                         target_centrality[pool])
        pools[t_user] = ordered
        diffs[t_user] = difficulty
    return CurriculumState(pools, diffs, n_neg, n_epoch, n_step)


def dump_pools_tsv(state: CurriculumState, g, path) -> None:
    """Debug dump: anchor, rank, node, difficulty."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("anchor\trank\tnode\tdifficulty\n")
        for anchor in sorted(state.pools):
            for rank, (node, d) in enumerate(
                    zip(state.pools[anchor], state.difficulties[anchor])):

                fh.write(f"u:{anchor}\t{rank}\t{node_str(g, int(node))}\t{d:.9g}\n")
