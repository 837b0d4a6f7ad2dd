"""Katz centrality over a domain graph, used as the inverse-difficulty signal.

Solves x = alpha * A x + beta * 1 by power iteration on the bipartite
adjacency over users and items jointly. Scores are precomputed once per
domain on the training graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graphs import DomainGraph, node_str


class KatzDivergenceError(ArithmeticError):
    """Power iteration failed to converge (alpha too large for this graph)."""


@dataclass
class KatzConfig:
    alpha: float = 0.1
    beta: float = 1.0
    tol: float = 1e-6
    max_iter: int = 1000
    normalize: bool = True

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


def adjacency_matrix(g: DomainGraph) -> sp.csr_matrix:
    n = g.n_nodes
    data = np.ones(len(g.indices))
    return sp.csr_matrix((data, g.indices, g.indptr), shape=(n, n))


def katz_centrality(g: DomainGraph, cfg: KatzConfig) -> np.ndarray:
    """Per-node Katz scores indexed by flat node id (users then items)."""
    if g.n_nodes == 0:
        raise ValueError("empty graph")
    A = adjacency_matrix(g)
    x = np.full(g.n_nodes, cfg.beta)
    for _ in range(cfg.max_iter):
        x_next = cfg.alpha * (A @ x) + cfg.beta
        delta = np.abs(x_next - x).sum()
        x = x_next
        if not np.isfinite(delta):
            raise KatzDivergenceError(
                "iteration diverged: alpha exceeds 1/spectral_radius(A)")
        if delta < cfg.tol:
            break
    else:
        raise KatzDivergenceError(
            f"no convergence within {cfg.max_iter} iterations")
    if cfg.normalize:
        x = x / np.linalg.norm(x)
    return x


def write_centrality_tsv(path, g: DomainGraph, scores: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("node\tscore\n")
        for flat in range(g.n_nodes):
            fh.write(f"{node_str(g, flat)}\t{scores[flat]:.9g}\n")
