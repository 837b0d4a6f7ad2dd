"""Two-stage training loop with ablation modes.

Stage 1 optimizes the within-domain BCE objective for each domain
independently; stage 2 optimizes the cross-domain InfoNCE objectives over
overlapping users, with the source side behind a stop-gradient barrier and
the negative pools under curriculum scheduling. Ablation modes switch those
two mechanisms off; `mixed` trains everything jointly in a single phase as
a stability diagnostic, and `target-only` stops after stage-1 training of
the target domain.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import encoder, losses
from .autodiff import AdamState, NonFiniteError, Tape, adam_update
from .curriculum import CurriculumState, build_curriculum
from .graphs import (CrossDomainDataset, DataError, DomainGraph,
                     SamplerConfig, gather_sampled, node_str,
                     sampled_adjacency)
from .katz import KatzConfig, katz_centrality
from .losses import LossConfig

MODES = ("full", "no-curriculum", "no-stopgrad", "mixed", "target-only")

# sampler stream labels disjoint from the encoder's two hops
_POS_STREAM = 5
_NEG_STREAM = 6
_SHUFFLE_STREAM = 7
_PROBE_STREAM = 8


class TrainError(RuntimeError):
    """Training aborted (non-finite loss), tagged with the offending epoch."""


@dataclass
class TrainConfig:
    mode: str = "full"
    epochs_intra: int = 100
    epochs_inter: int = 100
    batch_size: int = 1024
    lr: float = 1e-3
    weight_decay: float = 5e-4
    seed: int = 0
    d0: int = 64
    jk_include_input: bool = False
    probe_size: int = 256
    loss: LossConfig = field(default_factory=LossConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    katz: KatzConfig = field(default_factory=KatzConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.epochs_intra < 1 or self.epochs_inter < 1:
            raise ValueError("epoch counts must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    stage: str
    l_intra_s: float
    l_intra_t: float
    l_inter_u: float
    l_inter_n: float
    seconds: float


@dataclass
class TrainResult:
    params_s: encoder.EncoderParams
    params_t: encoder.EncoderParams
    log: list
    curriculum: CurriculumState


def write_trainlog(log, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch\tstage\tl_intra_s\tl_intra_t\tl_inter_u\tl_inter_n\tseconds\n")
        for r in log:
            fh.write(f"{r.epoch}\t{r.stage}\t{r.l_intra_s:.9g}\t{r.l_intra_t:.9g}"
                     f"\t{r.l_inter_u:.9g}\t{r.l_inter_n:.9g}\t{r.seconds:.3f}\n")


CHECKPOINT_FILE = "checkpoint.txt"


def save_checkpoint(params: encoder.EncoderParams, ckpt_dir) -> None:
    import os

    os.makedirs(ckpt_dir, exist_ok=True)
    encoder.save_params(params, os.path.join(ckpt_dir, CHECKPOINT_FILE))


def load_checkpoint(ckpt_dir) -> encoder.EncoderParams:
    import os

    return encoder.load_params(os.path.join(ckpt_dir, CHECKPOINT_FILE))


# -- negative sampling helpers ------------------------------------------


def _neighbor_sets(g: DomainGraph):
    return [set(int(v) for v in g.neighbors(f)) for f in range(g.n_nodes)]


def _bulk_non_neighbors(g, nbr_sets, anchors, n_per_anchor, rng):
    """(len(anchors), n_per_anchor) flat ids, uniform over non-neighbors.

    Draws may repeat across columns (sampling with replacement, matching
    independent single draws); a draw is rejected only if it hits the
    anchor's neighbor set.
    """
    out = np.empty((len(anchors), n_per_anchor), dtype=np.int64)
    for row, a in enumerate(anchors):
        lo, n_opp = (g.n_users, g.n_items) if a < g.n_users else (0, g.n_users)
        nbrs = nbr_sets[a]
        if len(nbrs) >= n_opp:
            raise DataError(f"node {node_str(g, a)} is adjacent to the entire "
                            "opposite partition; no negatives exist")
        for col in range(n_per_anchor):
            while True:
                cand = lo + int(rng.integers(n_opp))
                if cand not in nbrs:
                    out[row, col] = cand
                    break
    return out


# -- batch loss construction --------------------------------------------


class _DomainContext:
    """Per-domain mutable training state."""

    def __init__(self, g: DomainGraph, params: encoder.EncoderParams,
                 adam: AdamState):
        self.g = g
        self.params = params
        self.adam = adam
        self.nbr_sets = _neighbor_sets(g)


def _intra_loss_node(tape, ctx: _DomainContext, anchors, cfg: TrainConfig,
                     epoch: int, neg_rng):
    """Build the within-domain BCE loss for a batch of anchors.

    Returns (loss node, param leaves) or None when no anchor has positives.
    """
    lc = cfg.loss
    pos_adj = sampled_adjacency(ctx.g, lc.n_pos_intra, cfg.sampler.seed,
                                epoch, _POS_STREAM)
    pos_flat, pos_seg = gather_sampled(pos_adj, anchors)
    if len(pos_flat) == 0:
        return None
    keep = np.unique(pos_seg)
    remap = -np.ones(len(anchors), dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    active_anchors = anchors[keep]
    pos_seg = remap[pos_seg]
    negs = _bulk_non_neighbors(ctx.g, ctx.nbr_sets, active_anchors,
                               lc.n_neg_intra, neg_rng)
    neg_flat = negs.reshape(-1)
    neg_seg = np.repeat(np.arange(len(active_anchors)), lc.n_neg_intra)

    nodes = np.unique(np.concatenate([active_anchors, pos_flat, neg_flat]))
    out, leaves = encoder.encode_batch(tape, ctx.params, ctx.g, nodes,
                                       cfg.sampler, epoch)
    pos_of = lambda f: np.searchsorted(nodes, f)
    anchor_rows = tape.lookup(out, pos_of(active_anchors))
    pos_rows = tape.lookup(out, pos_of(pos_flat))
    neg_rows = tape.lookup(out, pos_of(neg_flat))
    loss = losses.intra_bce_loss(tape, anchor_rows, pos_rows, neg_rows,
                                 pos_seg, neg_seg, len(active_anchors))
    return loss, leaves


def _inter_loss_nodes(tape, src_ctx: _DomainContext, tgt_ctx: _DomainContext,
                      pairs, curriculum: CurriculumState, k_active: int,
                      cfg: TrainConfig, epoch: int, stopgrad: bool):
    """Build both cross-domain losses for a batch of overlap pairs.

    Returns (loss_u, loss_n or None, source leaves, target leaves).
    """
    s_users = np.asarray([p[0] for p in pairs], dtype=np.int64)
    t_users = np.asarray([p[1] for p in pairs], dtype=np.int64)
    n_anchor = len(pairs)

    src_out, src_leaves = encoder.encode_batch(tape, src_ctx.params, src_ctx.g,
                                               s_users, cfg.sampler, epoch)
    if stopgrad:
        src_out = tape.stop_gradient(src_out)

    pools = np.stack([curriculum.pools[int(t)][:k_active] for t in t_users])
    nbr_lists = [tgt_ctx.g.neighbors(int(t)) for t in t_users]
    tgt_nodes = np.unique(np.concatenate(
        [t_users, pools.reshape(-1)] + [n for n in nbr_lists if len(n)]))
    tgt_out, tgt_leaves = encoder.encode_batch(tape, tgt_ctx.params, tgt_ctx.g,
                                               tgt_nodes, cfg.sampler, epoch)
    pos_of = lambda f: np.searchsorted(tgt_nodes, f)

    tgt_self = tape.lookup(tgt_out, pos_of(t_users))
    neg_embs = [tape.lookup(tgt_out, pos_of(pools[:, j]))
                for j in range(k_active)]
    loss_u = losses.inter_user_infonce(
        tape, src_out, tgt_self, neg_embs, cfg.loss.tau, k_active,
        cfg.loss.denominator_negatives_only)

    pair_anchor, pair_pos = [], []
    for a, nbrs in enumerate(nbr_lists):
        for v in nbrs:
            pair_anchor.append(a)
            pair_pos.append(int(v))
    loss_n = None
    if pair_anchor:
        pair_anchor = np.asarray(pair_anchor, dtype=np.int64)
        keep = np.unique(pair_anchor)
        remap = -np.ones(n_anchor, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        src_pairs = tape.lookup(src_out, pair_anchor)
        pos_rows = tape.lookup(tgt_out, pos_of(np.asarray(pair_pos)))
        neg_active = [tape.lookup(e, keep) for e in neg_embs]
        loss_n = losses.inter_neighbor_infonce(
            tape, src_pairs, pos_rows, neg_active, remap[pair_anchor],
            len(keep), cfg.loss.tau, k_active,
            cfg.loss.denominator_negatives_only)
    return loss_u, loss_n, src_leaves, tgt_leaves


# -- probes (loss series logged for stages that do not train them) -------


def _probe_anchors(n_nodes, probe_size, seed, tag):
    rng = np.random.default_rng([seed, _PROBE_STREAM, tag])
    if n_nodes <= probe_size:
        return np.arange(n_nodes, dtype=np.int64)
    return np.sort(rng.choice(n_nodes, size=probe_size, replace=False))


def _probe_intra(ctx, cfg, epoch, tag):
    anchors = _probe_anchors(ctx.g.n_nodes, cfg.probe_size, cfg.seed, tag)
    tape = Tape()
    rng = np.random.default_rng([cfg.seed, _NEG_STREAM, _PROBE_STREAM, tag, epoch])
    built = _intra_loss_node(tape, ctx, anchors, cfg, epoch, rng)
    if built is None:
        return 0.0
    return built[0].value.item()


def _probe_inter(src_ctx, tgt_ctx, overlap, curriculum, cfg, epoch):
    rng = np.random.default_rng([cfg.seed, _PROBE_STREAM, 9])
    if len(overlap) > cfg.probe_size:
        idx = np.sort(rng.choice(len(overlap), size=cfg.probe_size, replace=False))
        pairs = [overlap[i] for i in idx]
    else:
        pairs = overlap
    tape = Tape()
    lu, ln, _, _ = _inter_loss_nodes(tape, src_ctx, tgt_ctx, pairs, curriculum,
                                     curriculum.n_neg, cfg, epoch, True)
    return lu.value.item(), ln.value.item() if ln is not None else 0.0


# -- epoch drivers -------------------------------------------------------


def _shuffled_batches(n, batch_size, seed, tag, epoch):
    rng = np.random.default_rng([seed, _SHUFFLE_STREAM, tag, epoch])
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _run_intra_epoch(ctx, cfg, epoch, tag):
    """One sweep of BCE batches over every node of one domain."""
    batch_losses = []
    batches = _shuffled_batches(ctx.g.n_nodes, cfg.batch_size, cfg.seed, tag,
                                epoch)
    for b_idx, batch in enumerate(batches):
        anchors = np.sort(np.asarray(batch, dtype=np.int64))
        tape = Tape()
        rng = np.random.default_rng([cfg.seed, _NEG_STREAM, tag, epoch, b_idx])
        built = _intra_loss_node(tape, ctx, anchors, cfg, epoch, rng)
        if built is None:
            continue
        loss, leaves = built
        batch_losses.append(loss.value.item())
        objective = tape.scalar_multiply(loss, cfg.loss.lambda_intra)
        names = list(leaves)
        grads = tape.gradient(objective, [leaves[n] for n in names])
        adam_update(ctx.adam, ctx.params.as_dict(), dict(zip(names, grads)))
    return float(np.mean(batch_losses)) if batch_losses else 0.0


def _run_inter_epoch(src_ctx, tgt_ctx, overlap, curriculum, k_active, cfg,
                     epoch, stopgrad, update_source):
    u_losses, n_losses = [], []
    batches = _shuffled_batches(len(overlap), cfg.batch_size, cfg.seed, 99,
                                epoch)
    for batch in batches:
        pairs = [overlap[i] for i in np.sort(batch)]
        tape = Tape()
        lu, ln, src_leaves, tgt_leaves = _inter_loss_nodes(
            tape, src_ctx, tgt_ctx, pairs, curriculum, k_active, cfg, epoch,
            stopgrad)
        u_losses.append(lu.value.item())
        total = lu if ln is None else tape.add(lu, ln)
        if ln is not None:
            n_losses.append(ln.value.item())
        objective = tape.scalar_multiply(total, cfg.loss.lambda_inter)
        names_t = list(tgt_leaves)
        leaves = [tgt_leaves[n] for n in names_t]
        names_s = list(src_leaves) if update_source else []
        leaves += [src_leaves[n] for n in names_s]
        grads = tape.gradient(objective, leaves)
        adam_update(tgt_ctx.adam, tgt_ctx.params.as_dict(),
                    dict(zip(names_t, grads[:len(names_t)])))
        if update_source:
            adam_update(src_ctx.adam, src_ctx.params.as_dict(),
                        dict(zip(names_s, grads[len(names_t):])))
    return (float(np.mean(u_losses)) if u_losses else 0.0,
            float(np.mean(n_losses)) if n_losses else 0.0)


# -- top-level entry -----------------------------------------------------


def _init_context(g, domain, cfg):
    params = encoder.init_params(domain, g.n_nodes, cfg.seed, cfg.d0,
                                 cfg.jk_include_input)
    params.n_users = g.n_users
    adam = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    return _DomainContext(g, params, adam)


def train(dataset: CrossDomainDataset, cfg: TrainConfig) -> TrainResult:
    """Run the configured mode end to end and return params plus the log."""
    src_ctx = _init_context(dataset.source, "source", cfg)
    tgt_ctx = _init_context(dataset.target, "target", cfg)
    centrality_t = katz_centrality(dataset.target, cfg.katz)
    inter_epochs = cfg.epochs_intra + cfg.epochs_inter if cfg.mode == "mixed" \
        else cfg.epochs_inter
    curriculum = build_curriculum(dataset, centrality_t, cfg.loss.n_neg_inter,
                                  inter_epochs, cfg.seed)
    log: list[EpochRecord] = []

    def record(epoch, stage, lis, lit, liu, lin, t0):
        log.append(EpochRecord(epoch, stage, lis, lit, liu, lin,
                               time.perf_counter() - t0))

    try:
        if cfg.mode == "mixed":
            _train_mixed(dataset, src_ctx, tgt_ctx, curriculum, cfg, record)
        else:
            _train_separated(dataset, src_ctx, tgt_ctx, curriculum, cfg, record)
    except NonFiniteError as exc:
        raise TrainError(f"non-finite loss at epoch {len(log)}: {exc}") from exc
    return TrainResult(src_ctx.params, tgt_ctx.params, log, curriculum)


def _train_separated(dataset, src_ctx, tgt_ctx, curriculum, cfg, record):
    skip_intra = cfg.loss.lambda_intra == 0.0
    for epoch in range(cfg.epochs_intra):
        t0 = time.perf_counter()
        lis = lit = 0.0
        if not skip_intra:
            if cfg.mode != "target-only":
                lis = _run_intra_epoch(src_ctx, cfg, epoch, 1)
            lit = _run_intra_epoch(tgt_ctx, cfg, epoch, 2)
        else:
            lis = _probe_intra(src_ctx, cfg, epoch, 1)
            lit = _probe_intra(tgt_ctx, cfg, epoch, 2)
        liu, lin = _probe_inter(src_ctx, tgt_ctx, dataset.overlap, curriculum,
                                cfg, epoch)
        record(epoch, "intra", lis, lit, liu, lin, t0)
    if cfg.mode == "target-only":
        return
    stopgrad = cfg.mode in ("full", "no-curriculum")
    skip_inter = cfg.loss.lambda_inter == 0.0
    for epoch in range(cfg.epochs_inter):
        t0 = time.perf_counter()
        if cfg.mode == "full":
            k = curriculum.active_count(epoch)
        else:
            k = curriculum.n_neg
        if not skip_inter:
            liu, lin = _run_inter_epoch(src_ctx, tgt_ctx, dataset.overlap,
                                        curriculum, k, cfg, epoch, stopgrad,
                                        update_source=not stopgrad)
        else:
            liu, lin = _probe_inter(src_ctx, tgt_ctx, dataset.overlap,
                                    curriculum, cfg, epoch)
        lis = _probe_intra(src_ctx, cfg, cfg.epochs_intra + epoch, 1)
        lit = _probe_intra(tgt_ctx, cfg, cfg.epochs_intra + epoch, 2)
        record(cfg.epochs_intra + epoch, "inter", lis, lit, liu, lin, t0)


def _train_mixed(dataset, src_ctx, tgt_ctx, curriculum, cfg, record):
    """Joint single-phase optimization: no stop-gradient, no curriculum."""
    total = cfg.epochs_intra + cfg.epochs_inter
    for epoch in range(total):
        t0 = time.perf_counter()
        if cfg.loss.lambda_intra > 0.0:
            lis = _run_intra_epoch(src_ctx, cfg, epoch, 1)
            lit = _run_intra_epoch(tgt_ctx, cfg, epoch, 2)
        else:
            lis = _probe_intra(src_ctx, cfg, epoch, 1)
            lit = _probe_intra(tgt_ctx, cfg, epoch, 2)
        if cfg.loss.lambda_inter > 0.0:
            liu, lin = _run_inter_epoch(src_ctx, tgt_ctx, dataset.overlap,
                                        curriculum, curriculum.n_neg, cfg,
                                        epoch, stopgrad=False,
                                        update_source=True)
        else:
            liu, lin = _probe_inter(src_ctx, tgt_ctx, dataset.overlap,
                                    curriculum, cfg, epoch)
        record(epoch, "mixed", lis, lit, liu, lin, t0)
