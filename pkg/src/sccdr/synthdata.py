"""Seeded synthetic cross-domain dataset generator with planted clusters.

Users and items carry a hidden cluster label; edges prefer in-cluster
items with probability `p_in`. Overlapping users share a raw id (and their
cluster) across the two domains, so source-to-target transfer carries a
measurable signal. Output uses the edge/overlap TSV formats consumed by
the graph loader.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np


@dataclass
class SynthConfig:
    clusters: int = 8
    users_per_domain: int = 2000
    overlap_users: int = 500
    source_items: int = 1000
    target_items: int = 500
    source_degree: int = 20
    target_degree: int = 3
    p_in: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.overlap_users > self.users_per_domain:
            raise ValueError("overlap cannot exceed the per-domain user count")
        if not (0.0 < self.p_in <= 1.0):
            raise ValueError("p_in must be in (0, 1]")
        if self.clusters < 1:
            raise ValueError("clusters must be >= 1")
        if self.source_degree > self.source_items or \
                self.target_degree > self.target_items:
            raise ValueError("degree target exceeds the item count")


def _user_id(domain: str, overlap_count: int, idx: int) -> str:
    if idx < overlap_count:
        return f"ou{idx}"
    return f"{domain[0]}u{idx}"


def _draw_edges(rng, user_clusters, item_clusters, degree, p_in, n_clusters):
    """Exact-degree edge lists: per user, `degree` distinct items."""
    items_by_cluster = [np.flatnonzero(item_clusters == c)
                        for c in range(n_clusters)]
    all_items = len(item_clusters)
    edges = []
    for u, cu in enumerate(user_clusters):
        chosen: set[int] = set()
        while len(chosen) < degree:
            if n_clusters > 1 and rng.random() >= p_in:
                c = int(rng.integers(n_clusters - 1))
                if c >= cu:
                    c += 1
            else:
                c = int(cu)
            pool = items_by_cluster[c]
            if len(pool) == 0 or len(chosen.intersection(pool)) == len(pool):
                item = int(rng.integers(all_items))  # degenerate cluster
            else:
                item = int(pool[rng.integers(len(pool))])
            if item not in chosen:
                chosen.add(item)
                edges.append((u, item))
    return edges


def generate(cfg: SynthConfig, out_dir) -> None:
    """Write source.tsv, target.tsv, overlap.tsv, and clusters.tsv."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng([cfg.seed, 0x5D])
    k = cfg.clusters
    n_u = cfg.users_per_domain

    shared = rng.integers(k, size=cfg.overlap_users)
    src_users = np.concatenate([shared, rng.integers(k, size=n_u - cfg.overlap_users)])
    tgt_users = np.concatenate([shared, rng.integers(k, size=n_u - cfg.overlap_users)])
    src_items = rng.integers(k, size=cfg.source_items)
    tgt_items = rng.integers(k, size=cfg.target_items)

    src_edges = _draw_edges(rng, src_users, src_items, cfg.source_degree,
                            cfg.p_in, k)
    tgt_edges = _draw_edges(rng, tgt_users, tgt_items, cfg.target_degree,
                            cfg.p_in, k)

    def write_edges(name, edges, domain):
        with open(os.path.join(out_dir, name), "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write("user_id\titem_id\n")
            for u, i in edges:
                fh.write(f"{_user_id(domain, cfg.overlap_users, u)}\t"
                         f"{domain[0]}i{i}\n")

    write_edges("source.tsv", src_edges, "source")
    write_edges("target.tsv", tgt_edges, "target")

    with open(os.path.join(out_dir, "overlap.tsv"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("source_user_id\ttarget_user_id\n")
        for idx in range(cfg.overlap_users):
            fh.write(f"ou{idx}\tou{idx}\n")

    with open(os.path.join(out_dir, "clusters.tsv"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("node\tcluster\n")
        for idx, c in enumerate(src_users):
            fh.write(f"s:{_user_id('source', cfg.overlap_users, idx)}\t{c}\n")
        for idx, c in enumerate(tgt_users):
            fh.write(f"t:{_user_id('target', cfg.overlap_users, idx)}\t{c}\n")
        for idx, c in enumerate(src_items):
            fh.write(f"s:si{idx}\t{c}\n")
        for idx, c in enumerate(tgt_items):
            fh.write(f"t:ti{idx}\t{c}\n")
