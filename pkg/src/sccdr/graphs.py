"""Bipartite interaction graphs, dataset assembly, and seeded sampling.

Node addressing: within a domain graph, nodes carry a flat index in
[0, n_users + n_items) with users first. Helpers convert between flat ids
and the `u:<idx>` / `i:<idx>` textual form used by on-disk artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

USER = 0
ITEM = 1

_DOMAIN_CODE = {"source": 1, "target": 2}


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def node_str(g: "DomainGraph", flat: int) -> str:
    if flat < g.n_users:
        return f"u:{flat}"
    return f"i:{flat - g.n_users}"


def parse_node(g: "DomainGraph", text: str) -> int:
    kind, _, idx = text.partition(":")
    idx = int(idx)
    if kind == "u":
        if idx >= g.n_users:
            raise DataError(f"user index {idx} out of range")
        return idx
    if kind == "i":
        if idx >= g.n_items:
            raise DataError(f"item index {idx} out of range")
        return g.n_users + idx
    raise DataError(f"bad node token {text!r}")


@dataclass
class DomainGraph:
    """Immutable bipartite user-item graph in CSR form over flat node ids.

    Adjacency is symmetric (user rows hold item flat ids and vice versa);
    each row is sorted ascending and deduplicated.
    """

    domain: str
    n_users: int
    n_items: int
    indptr: np.ndarray
    indices: np.ndarray
    edge_count: int
    user_ids: list = field(default_factory=list)
    item_ids: list = field(default_factory=list)
    # per user: distinct item indices in first-appearance (file) order
    user_item_order: list = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    def neighbors(self, flat: int) -> np.ndarray:
        return self.indices[self.indptr[flat]:self.indptr[flat + 1]]

    def degree(self, flat: int) -> int:
        return int(self.indptr[flat + 1] - self.indptr[flat])

    def has_edge(self, user: int, item: int) -> bool:
        nbrs = self.neighbors(user)
        pos = np.searchsorted(nbrs, self.n_users + item)
        return pos < len(nbrs) and nbrs[pos] == self.n_users + item


def _graph_from_pairs(domain, n_users, n_items, pairs, user_ids, item_ids,
                      user_item_order):
    """Build CSR adjacency from distinct (user_idx, item_idx) pairs."""
    n = n_users + n_items
    deg = np.zeros(n, dtype=np.int64)
    for u, i in pairs:
        deg[u] += 1
        deg[n_users + i] += 1
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(deg, out=indptr[1:])
    indices = np.zeros(indptr[-1], dtype=np.int64)
    cursor = indptr[:-1].copy()
    for u, i in pairs:
        indices[cursor[u]] = n_users + i
        cursor[u] += 1
        indices[cursor[n_users + i]] = u
        cursor[n_users + i] += 1
    for k in range(n):
        indices[indptr[k]:indptr[k + 1]].sort()
    return DomainGraph(domain, n_users, n_items, indptr, indices, len(pairs),
                       user_ids, item_ids, user_item_order)


def load_edges(path, domain: str) -> DomainGraph:
    """Load an edge TSV (header `user_id\\titem_id`) into a DomainGraph.

    Dense indices are assigned in first-appearance order; duplicate pairs
    collapse to a single edge.
    """
    if domain not in _DOMAIN_CODE:
        raise DataError(f"unknown domain {domain!r}")
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    seen: set[tuple[int, int]] = set()
    pairs: list[tuple[int, int]] = []
    order: list[list[int]] = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if header == "":
            raise DataError(f"{path}: empty file")
        if header.rstrip("\n") != "user_id\titem_id":
            raise DataError(f"{path}: line 1: expected header 'user_id\\titem_id'")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if line == "":
                continue
            cols = line.split("\t")
            if len(cols) != 2 or not cols[0] or not cols[1]:
                raise DataError(f"{path}: line {lineno}: expected '<user_id>\\t<item_id>'")
            uid, iid = cols
            u = user_index.setdefault(uid, len(user_index))
            if u == len(order):
                order.append([])
            i = item_index.setdefault(iid, len(item_index))
            if (u, i) not in seen:
                seen.add((u, i))
                pairs.append((u, i))
                order[u].append(i)
    return _graph_from_pairs(domain, len(user_index), len(item_index), pairs,
                             list(user_index), list(item_index),
                             [np.asarray(o, dtype=np.int64) for o in order])


@dataclass
class CrossDomainDataset:
    """Two domain graphs, overlap alignment, and target-domain splits.

    `target` is the training graph: each eligible target user's last and
    second-to-last interactions (file order) are held out as test and
    validation items and removed from the adjacency.
    """

    source: DomainGraph
    target: DomainGraph
    overlap: list  # (source user index, target user index) pairs
    splits: dict   # target user index -> (valid item index, test item index)

    @property
    def test_rows(self):
        return [(u, vt[1]) for u, vt in sorted(self.splits.items())]


def build_dataset(source: DomainGraph, target: DomainGraph,
                  overlap_path=None, seed: int = 0) -> CrossDomainDataset:
    """Assemble the cross-domain dataset with overlap alignment and splits.

    Without an overlap file, users sharing a raw id across the two domains
    are aligned. Target users need degree >= 3 to contribute a split row;
    below that all their edges stay in training.
    """
    if overlap_path is not None:
        overlap = _read_overlap(overlap_path, source, target)
    else:
        tgt_lookup = {uid: i for i, uid in enumerate(target.user_ids)}
        overlap = [(si, tgt_lookup[uid]) for si, uid in enumerate(source.user_ids)
                   if uid in tgt_lookup]
    if not overlap:
        raise DataError("empty overlap set after alignment")

    splits: dict[int, tuple[int, int]] = {}
    train_pairs: list[tuple[int, int]] = []
    train_order: list[np.ndarray] = []
    for u in range(target.n_users):
        items = target.user_item_order[u]
        if len(items) >= 3:
            splits[u] = (int(items[-2]), int(items[-1]))
            kept = items[:-2]
        else:
            kept = items
        train_order.append(np.asarray(kept, dtype=np.int64))
        train_pairs.extend((u, int(i)) for i in kept)
    target_train = _graph_from_pairs(
        target.domain, target.n_users, target.n_items, train_pairs,
        target.user_ids, target.item_ids, train_order)
    return CrossDomainDataset(source, target_train, overlap, splits)


def _read_overlap(path, source, target):
    src_lookup = {uid: i for i, uid in enumerate(source.user_ids)}
    tgt_lookup = {uid: i for i, uid in enumerate(target.user_ids)}
    pairs = []
    seen_s, seen_t = set(), set()
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "source_user_id\ttarget_user_id":
            raise DataError(f"{path}: expected header 'source_user_id\\ttarget_user_id'")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if line == "":
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise DataError(f"{path}: line {lineno}: expected two columns")
            sid, tid = cols
            if sid not in src_lookup:
                raise DataError(f"{path}: line {lineno}: unknown source user {sid!r}")
            if tid not in tgt_lookup:
                raise DataError(f"{path}: line {lineno}: unknown target user {tid!r}")
            si, ti = src_lookup[sid], tgt_lookup[tid]
            if si in seen_s or ti in seen_t:
                raise DataError(f"{path}: line {lineno}: duplicate overlap entry")
            seen_s.add(si)
            seen_t.add(ti)
            pairs.append((si, ti))
    return pairs


# -- seeded sampling -----------------------------------------------------


@dataclass
class SamplerConfig:
    fanout: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.fanout < 1:
            raise DataError("fanout must be >= 1")


_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_M2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x):
    with np.errstate(over="ignore"):
        x = (x + _SM_GAMMA).astype(np.uint64)
        x = ((x ^ (x >> np.uint64(30))) * _SM_M1).astype(np.uint64)
        x = ((x ^ (x >> np.uint64(27))) * _SM_M2).astype(np.uint64)
        return x ^ (x >> np.uint64(31))


def _mix(*fields):
    """Hash a sequence of integer fields (scalars or arrays) to uint64 keys."""
    h = np.uint64(0)
    with np.errstate(over="ignore"):
        for f in fields:
            h = _splitmix64(np.asarray(f).astype(np.uint64) ^ h)
    return h


def _stream_keys(g, flat_nodes, positions, seed, epoch, layer):
    """One uint64 key per (node, neighbor-position) pair; pure in its args."""
    return _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
                _DOMAIN_CODE[g.domain], epoch + 1, layer + 7,
                flat_nodes, positions)


def sample_neighbors(g: DomainGraph, flat: int, cfg: SamplerConfig,
                     epoch: int, layer: int) -> np.ndarray:
    """Uniform sample of min(fanout, degree) distinct neighbors.

    Pure function of (seed, node, epoch, layer); output order is the
    sampler's draw order (ascending hash key).
    """
    nbrs = g.neighbors(flat)
    deg = len(nbrs)
    if deg == 0:
        return np.empty(0, dtype=np.int64)
    keys = _stream_keys(g, np.full(deg, flat, dtype=np.int64),
                        np.arange(deg, dtype=np.int64), cfg.seed, epoch, layer)
    take = min(cfg.fanout, deg)
    return nbrs[np.argsort(keys, kind="stable")[:take]]


def sample_neighbors_batch(g: DomainGraph, flats: np.ndarray, fanout: int,
                           seed: int, epoch: int, layer: int):
    """Vectorized `sample_neighbors` over many nodes.

    Returns (neighbor flat ids, segment ids into `flats`); per-node results
    are identical to the single-node call.
    """
    flats = np.asarray(flats, dtype=np.int64)
    degs = g.indptr[flats + 1] - g.indptr[flats]
    seg = np.repeat(np.arange(len(flats)), degs)
    starts = np.repeat(g.indptr[flats], degs)
    within = np.arange(len(seg)) - np.repeat(np.cumsum(degs) - degs, degs)
    nbrs = g.indices[starts + within]
    keys = _stream_keys(g, flats[seg], within, seed, epoch, layer)
    order = np.lexsort((keys, seg))
    seg_sorted = seg[order]
    nbrs_sorted = nbrs[order]
    rank = np.arange(len(seg)) - np.repeat(np.cumsum(degs) - degs,
                                           degs)  # rank within segment
    keep = rank < fanout
    return nbrs_sorted[keep], seg_sorted[keep]


_EPOCH_CACHE: dict = {}
_EPOCH_CACHE_LIMIT = 64


def sampled_adjacency(g: DomainGraph, fanout: int, seed: int, epoch: int,
                      layer: int):
    """Sampled neighbor CSR over all nodes for one (epoch, layer) stream.

    Memoized: the sampler is a pure function of its arguments, so batches
    within an epoch can share one draw.
    """
    key = (id(g), g.domain, g.n_nodes, g.edge_count, fanout, seed, epoch, layer)
    hit = _EPOCH_CACHE.get(key)
    if hit is None:
        all_nodes = np.arange(g.n_nodes, dtype=np.int64)
        nbrs, seg = sample_neighbors_batch(g, all_nodes, fanout, seed, epoch,
                                           layer)
        indptr = np.zeros(g.n_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(seg, minlength=g.n_nodes), out=indptr[1:])
        hit = (indptr, nbrs)
        if len(_EPOCH_CACHE) >= _EPOCH_CACHE_LIMIT:
            _EPOCH_CACHE.clear()
        _EPOCH_CACHE[key] = hit
    return hit


def gather_sampled(adj, flats: np.ndarray):
    """Slice a sampled adjacency for a node subset -> (neighbors, segments)."""
    indptr, indices = adj
    flats = np.asarray(flats, dtype=np.int64)
    degs = indptr[flats + 1] - indptr[flats]
    seg = np.repeat(np.arange(len(flats)), degs)
    starts = np.repeat(indptr[flats], degs)
    within = np.arange(len(seg)) - np.repeat(np.cumsum(degs) - degs, degs)
    return indices[starts + within], seg


def sample_non_neighbor(g: DomainGraph, flat: int, rng: np.random.Generator) -> int:
    """Uniform draw from the opposite partition excluding neighbors."""
    if flat < g.n_users:
        lo, n_opp = g.n_users, g.n_items
    else:
        lo, n_opp = 0, g.n_users
    if g.degree(flat) >= n_opp:
        raise DataError(f"node {node_str(g, flat)} is adjacent to the entire "
                        "opposite partition")
    nbrs = g.neighbors(flat)
    while True:
        cand = lo + int(rng.integers(n_opp))
        pos = np.searchsorted(nbrs, cand)
        if pos >= len(nbrs) or nbrs[pos] != cand:
            return cand
