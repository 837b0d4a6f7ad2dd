"""Full-corpus HIT@N retrieval evaluation and the loss-stability diagnostic."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .encoder import EncoderParams, encode_all
from .graphs import CrossDomainDataset


@dataclass
class EvalReport:
    hit_at: dict            # cutoff -> rate
    num_test_rows: int
    mode: str = ""
    seed: int = 0
    stability: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {f"hit@{n}": self.hit_at[n] for n in sorted(self.hit_at)}
        payload["num_test_rows"] = self.num_test_rows
        payload["mode"] = self.mode
        payload["seed"] = self.seed
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _eval_threads() -> int:
    env = os.environ.get("SCCDR_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _rank_rows(user_vecs, item_vecs, test_items, masks):
    """Rank of each row's test item under descending score, ties by index."""
    scores = user_vecs @ item_vecs.T
    ranks = np.empty(len(test_items), dtype=np.int64)
    for r, (y, mask) in enumerate(zip(test_items, masks)):
        row = scores[r]
        if mask is not None and len(mask):
            row = row.copy()
            row[mask] = -np.inf
        s_y = row[y]
        ranks[r] = 1 + int(np.sum(row > s_y)) + int(np.sum(row[:y] == s_y))
    return ranks


def hit_at_n(params_t: EncoderParams, dataset: CrossDomainDataset,
             cutoffs, include_train_items: bool = False,
             similarity: str = "cosine") -> EvalReport:
    """HIT@N over every test row against the full target item corpus.

    Items the user interacted with in training are excluded from the
    candidate set unless `include_train_items` is set. Scoring is cosine by
    default; `similarity="dot"` ranks by raw inner product.
    """
    cutoffs = sorted(set(int(c) for c in cutoffs))
    if not cutoffs or cutoffs[0] <= 0:
        raise ValueError("cutoffs must be positive")
    rows = dataset.test_rows
    if not rows:
        raise ValueError("dataset has no test rows")
    g = dataset.target
    emb = encode_all(params_t, g)
    user_vecs = emb[:g.n_users]
    item_vecs = emb[g.n_users:]
    if similarity == "cosine":
        user_vecs = user_vecs / (np.linalg.norm(user_vecs, axis=1, keepdims=True) + 1e-12)
        item_vecs = item_vecs / (np.linalg.norm(item_vecs, axis=1, keepdims=True) + 1e-12)
    elif similarity != "dot":
        raise ValueError(f"unknown similarity {similarity!r}")

    users = np.asarray([u for u, _ in rows])
    test_items = np.asarray([y for _, y in rows])
    masks = [None] * len(rows)
    if not include_train_items:
        masks = [g.neighbors(u) - g.n_users for u in users]

    n_threads = min(_eval_threads(), len(rows))
    chunks = np.array_split(np.arange(len(rows)), n_threads)
    chunks = [c for c in chunks if len(c)]

    def work(idx):
        return _rank_rows(user_vecs[users[idx]], item_vecs, test_items[idx],
                          [masks[i] for i in idx])

    if len(chunks) == 1:
        ranks = work(chunks[0])
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(work, chunks))
        ranks = np.concatenate(parts)

    hit = {n: float(np.mean(ranks <= n)) for n in cutoffs}
    return EvalReport(hit_at=hit, num_test_rows=len(rows))


# -- stability diagnostic ------------------------------------------------

INTER_SERIES = ("l_inter_u", "l_inter_n", "l_inter_sum")
ALL_SERIES = ("l_intra_s", "l_intra_t") + INTER_SERIES


def _series(log, name):
    if name == "l_inter_sum":
        return np.asarray([r.l_inter_u + r.l_inter_n for r in log])
    return np.asarray([getattr(r, name) for r in log])


def final_half_std(values) -> float:
    """Sample standard deviation over the final 50% of a series."""
    values = np.asarray(values, dtype=np.float64)
    tail = values[len(values) // 2:]
    if len(tail) < 2:
        return 0.0
    return float(np.std(tail, ddof=1))


def stability_report(tagged_logs):
    """Rows (mode, seed, loss, std_final_half) from (mode, seed, log) triples.

    All logs must cover the same number of epochs.
    """
    lengths = {len(log) for _, _, log in tagged_logs}
    if len(lengths) > 1:
        raise ValueError(f"mismatched epoch counts across logs: {sorted(lengths)}")
    rows = []
    for mode, seed, log in tagged_logs:
        for name in ALL_SERIES:
            rows.append((mode, seed, name, final_half_std(_series(log, name))))
    return rows


def write_stability_tsv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("mode\tseed\tloss\tstd_final_half\n")
        for mode, seed, name, std in rows:
            fh.write(f"{mode}\t{seed}\t{name}\t{std:.9g}\n")
