"""Embedding-space self-supervised pretraining.

A context encoder embeds a context subgraph; a target encoder embeds the
entire polymer graph and pools it over each target patch. A small MLP
predicts each pooled target embedding from the context embedding summed
with a linearly transformed patch positional token. The loss is the
squared L2 distance averaged over targets and the batch. The target
encoder is either an EMA copy of the context encoder (default) or
trained jointly. Optional extras: a pseudolabel head regressing the
standardized molecular weight, and an input-space masking objective used
as a comparison pretext task.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import (
    Adam,
    ParamSet,
    Tensor,
    assert_finite,
    clip_global_norm,
    cross_entropy,
    ema_update,
    glorot_uniform,
    linear,
    mse,
    relu,
    replace_slice_rows,
    sq_distance,
    take_rows,
    weighted_sum,
)
from .data import PolymerRecord
from .encoder import (
    EncoderConfig,
    GraphTensors,
    encode_nodes,
    featurize,
    init_encoder_params,
    pool_graph,
    pool_patch,
    subgraph_tensors,
)
from .encoding import K_PATCH, patch_rwse
from .errors import EmptyBatch, MissingHead, ShapeMismatch, SizeOutOfRange
from .partition import POOL_ALGORITHMS, epoch_seed, make_pool, select_context_and_targets
from .polymer import PolymerGraph
from .rng import make_rng

from .chem import FEATURE_ELEMENTS
from .errors import SelectionInfeasible

GRAD_CLIP_NORM = 5.0


@dataclass(frozen=True)
class PretrainConfig:
    context_frac: float = 0.6
    target_frac: float = 0.1
    n_targets: int = 1
    algorithm: str = "random_walk"
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    lambda_pseudo: float = 1.0
    mask_rate: float = 0.15
    mode: str = "ema"
    seed: int = 0
    tau_start: float = 0.996
    tau_end: float = 1.0
    tau_ramp_frac: float = 1.0  # fraction of total steps over which tau ramps
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if not 0.0 < self.target_frac <= self.context_frac <= 1.0:
            raise SizeOutOfRange("need 0 < target_frac <= context_frac <= 1")
        if self.lambda_pseudo < 0:
            raise SizeOutOfRange("lambda_pseudo must be >= 0")
        if self.mode not in ("ema", "joint"):
            raise SizeOutOfRange(f"mode must be 'ema' or 'joint', got {self.mode!r}")
        if self.algorithm not in POOL_ALGORITHMS:
            raise SizeOutOfRange(f"unknown algorithm {self.algorithm!r}")
        if self.n_targets < 1:
            raise SizeOutOfRange("n_targets must be >= 1")


@dataclass
class JepaModel:
    encoder_cfg: EncoderConfig
    context: ParamSet
    target: ParamSet
    predictor: ParamSet  # MLP weights plus the token map
    pl_head: ParamSet | None
    mode: str

    def trainable_sets(self) -> list[ParamSet]:
        sets = [self.context, self.predictor]
        if self.mode == "joint":
            sets.append(self.target)
        if self.pl_head is not None:
            sets.append(self.pl_head)
        return sets

    def zero_grad(self):
        for ps in (self.context, self.target, self.predictor):
            ps.zero_grad()
        if self.pl_head is not None:
            self.pl_head.zero_grad()


def init_predictor(cfg: EncoderConfig, seed) -> ParamSet:
    rng = make_rng("predictor-init", seed)
    d = cfg.hidden
    ps = ParamSet()
    ps.add("token_map", glorot_uniform((K_PATCH, d), rng))
    ps.add("W1", glorot_uniform((d, d), rng))
    ps.add("b1", np.zeros(d))
    ps.add("W2", glorot_uniform((d, d), rng))
    ps.add("b2", np.zeros(d))
    ps.add("W3", glorot_uniform((d, d), rng))
    ps.add("b3", np.zeros(d))
    return ps


def init_head(cfg: EncoderConfig, seed, n_out: int = 1) -> ParamSet:
    """Two-layer readout head d -> d/2 -> n_out."""
    rng = make_rng("head-init", seed, n_out)
    d = cfg.hidden
    mid = max(1, d // 2)
    ps = ParamSet()
    ps.add("W1", glorot_uniform((d, mid), rng))
    ps.add("b1", np.zeros(mid))
    ps.add("W2", glorot_uniform((mid, n_out), rng))
    ps.add("b2", np.zeros(n_out))
    return ps


def apply_head(head, x: Tensor) -> Tensor:
    h = relu(linear(x, head["W1"], head["b1"]))
    return linear(h, head["W2"], head["b2"])


def init_jepa_model(cfg: EncoderConfig, seed, mode: str = "ema", with_pl_head: bool = True) -> JepaModel:
    context = init_encoder_params(cfg, ("context", seed))
    target = context.clone()
    return JepaModel(
        encoder_cfg=cfg,
        context=context,
        target=target,
        predictor=init_predictor(cfg, seed),
        pl_head=init_head(cfg, seed) if with_pl_head else None,
        mode=mode,
    )


@dataclass
class GraphData:
    """Featurized record ready for training."""

    id: str
    graph: PolymerGraph
    tensors: GraphTensors
    mw: float
    labels: dict


def prepare_graphs(records) -> list[GraphData]:
    out = []
    for rec in records:
        g = rec.build_graph() if isinstance(rec, PolymerRecord) else rec.graph
        out.append(
            GraphData(
                id=rec.id,
                graph=g,
                tensors=featurize(g),
                mw=g.pseudolabel_mw,
                labels=dict(rec.labels),
            )
        )
    return out


def predict_target(model: JepaModel, s_x: Tensor, token: np.ndarray) -> Tensor:
    """MLP prediction from the context embedding shifted by the token transform."""
    shift = linear(Tensor(token), model.predictor["token_map"])
    h = s_x + shift
    h = relu(linear(h, model.predictor["W1"], model.predictor["b1"]))
    h = relu(linear(h, model.predictor["W2"], model.predictor["b2"]))
    return linear(h, model.predictor["W3"], model.predictor["b3"])


def encode_full_graph(gd: GraphData, params, cfg: EncoderConfig) -> Tensor:
    return encode_nodes(gd.tensors, params, cfg)


def jepa_step(batch, model: JepaModel, cfg: PretrainConfig, epoch: int):
    """Per-batch objective; returns (loss tensor, diagnostics).

    Selections are refreshed per epoch per graph. Graphs without a
    feasible selection are skipped and counted; a batch with no usable
    graph raises EmptyBatch. In ema mode, no gradient reaches the target
    encoder.
    """
    target_params = model.target if model.mode == "joint" else model.target.detached()
    graph_losses = []
    embeddings = []
    skipped = 0
    digest = hashlib.blake2b(digest_size=8)
    for gd in batch:
        seed = epoch_seed(cfg.seed, epoch, gd.id)
        try:
            pool = make_pool(gd.graph, cfg.algorithm, cfg.target_frac, cfg.n_targets, seed)
            selection = select_context_and_targets(
                pool, gd.graph, cfg.context_frac, cfg.target_frac, cfg.n_targets, seed
            )
        except SelectionInfeasible:
            skipped += 1
            continue
        digest.update(repr((gd.id, selection.context.node_ids,
                            [t.node_ids for t in selection.targets])).encode())

        ctx_tensors = subgraph_tensors(gd.tensors, selection.context.node_ids)
        s_x = pool_graph(encode_nodes(ctx_tensors, model.context, model.encoder_cfg))
        h_full = encode_full_graph(gd, target_params, model.encoder_cfg)
        tokens = patch_rwse(selection, gd.graph, K_PATCH)

        per_target = []
        for i, patch in enumerate(selection.targets):
            s_y = pool_patch(h_full, patch.node_ids)
            s_hat = predict_target(model, s_x, tokens[1 + i])
            per_target.append(sq_distance(s_hat, s_y))
            embeddings.append(s_y.data.copy())
        graph_losses.append(
            weighted_sum(per_target, [1.0 / len(per_target)] * len(per_target))
        )

    if not graph_losses:
        raise EmptyBatch(f"no usable graphs in batch of {len(batch)}")
    loss = weighted_sum(graph_losses, [1.0 / len(graph_losses)] * len(graph_losses))
    diag = {
        "skipped": skipped,
        "emb_std": embedding_std(embeddings),
        "n_used": len(graph_losses),
        "selection_digest": digest.hexdigest(),
    }
    return loss, diag


def embedding_std(embeddings) -> float:
    """Mean per-dimension standard deviation across a batch of vectors."""
    if len(embeddings) < 2:
        return 0.0
    stack = np.stack(embeddings)
    return float(stack.std(axis=0).mean())


class CollapseMonitor:
    """Flags a run as degenerate when the embedding spread stays tiny."""

    def __init__(self, threshold: float = 1e-4, patience: int = 10):
        self.threshold = threshold
        self.patience = patience
        self.streak = 0
        self.flagged = False

    def update(self, emb_std: float) -> bool:
        if emb_std < self.threshold:
            self.streak += 1
        else:
            self.streak = 0
        if self.streak >= self.patience:
            self.flagged = True
        return self.flagged


def pseudolabel_loss(batch, model: JepaModel, mw_mean: float, mw_std: float):
    """MSE of the head's molecular-weight prediction in standardized units.

    The head reads the trainable encoder branch: the context encoder in
    ema mode (the target is a gradient-free EMA copy), the target encoder
    in joint mode.
    """
    if model.pl_head is None:
        raise MissingHead("model has no pseudolabel head")
    params = model.target if model.mode == "joint" else model.context
    losses = []
    for gd in batch:
        emb = pool_graph(encode_full_graph(gd, params, model.encoder_cfg))
        pred = apply_head(model.pl_head, emb)
        wanted = (gd.mw - mw_mean) / mw_std
        losses.append(mse(pred, Tensor(np.array([wanted]))))
    return weighted_sum(losses, [1.0 / len(losses)] * len(losses))


def init_masking_params(cfg: EncoderConfig, seed) -> ParamSet:
    rng = make_rng("masking-init", seed)
    ps = ParamSet()
    ps.add("mask_vec", rng.normal(scale=0.1, size=len(FEATURE_ELEMENTS)))
    ps.add("W_cls", glorot_uniform((cfg.hidden, len(FEATURE_ELEMENTS)), rng))
    ps.add("b_cls", np.zeros(len(FEATURE_ELEMENTS)))
    return ps


def masking_step(batch, encoder_params, masking_params, cfg: EncoderConfig, mask_rate: float, seed):
    """Replace the element one-hot of seeded nodes with a learned mask vector
    and classify the hidden element from the node embedding."""
    if not 0.0 < mask_rate < 1.0:
        raise SizeOutOfRange(f"mask_rate must be in (0, 1), got {mask_rate}")
    losses = []
    for gd in batch:
        n = gd.tensors.n_nodes
        n_mask = min(n, math.ceil(mask_rate * n))
        rng = make_rng("masking", seed, gd.id)
        rows = np.sort(rng.choice(n, size=n_mask, replace=False))
        node_x = replace_slice_rows(gd.tensors.node_x, rows, 0, masking_params["mask_vec"])
        h = encode_nodes(gd.tensors, encoder_params, cfg, node_x=node_x)
        logits = linear(h, masking_params["W_cls"], masking_params["b_cls"])
        classes = np.array(
            [FEATURE_ELEMENTS.index(gd.graph.nodes[r].element) for r in rows]
        )
        losses.append(cross_entropy(take_rows(logits, rows), classes))
    if not losses:
        raise EmptyBatch("no graphs in masking batch")
    return weighted_sum(losses, [1.0 / len(losses)] * len(losses))


def tau_schedule(cfg: PretrainConfig, step: int, total_steps: int) -> float:
    ramp = max(1, int(round(total_steps * cfg.tau_ramp_frac)))
    if ramp <= 1:
        return cfg.tau_end
    frac = min(1.0, step / (ramp - 1))
    return cfg.tau_start + (cfg.tau_end - cfg.tau_start) * frac


@dataclass
class PretrainResult:
    model: JepaModel
    history: list[dict]
    collapsed: bool
    mw_mean: float
    mw_std: float


def pretrain(records, cfg: PretrainConfig, log_path=None) -> PretrainResult:
    """Full pretraining loop; deterministic for a fixed (records, cfg)."""
    graphs = prepare_graphs(records)
    if not graphs:
        raise EmptyBatch("no records to pretrain on")
    mws = np.array([gd.mw for gd in graphs])
    mw_mean = float(mws.mean())
    mw_std = float(mws.std()) or 1.0

    model = init_jepa_model(
        cfg.encoder, cfg.seed, mode=cfg.mode, with_pl_head=cfg.lambda_pseudo > 0
    )
    optimizers = [Adam(ps, lr=cfg.lr) for ps in model.trainable_sets()]
    monitor = CollapseMonitor()
    n_batches = max(1, math.ceil(len(graphs) / cfg.batch_size))
    total_steps = cfg.epochs * n_batches
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        order = make_rng("batch-order", cfg.seed, epoch).permutation(len(graphs))
        epoch_jepa, epoch_pl, epoch_std, epoch_skip, used = 0.0, 0.0, 0.0, 0, 0
        epoch_digest = hashlib.blake2b(digest_size=8)
        for b in range(n_batches):
            batch = [graphs[i] for i in order[b * cfg.batch_size : (b + 1) * cfg.batch_size]]
            if not batch:
                continue
            model.zero_grad()
            loss, diag = jepa_step(batch, model, cfg, epoch)
            jepa_value = loss.item()
            pl_value = 0.0
            if cfg.lambda_pseudo > 0:
                pl = pseudolabel_loss(batch, model, mw_mean, mw_std)
                pl_value = pl.item()
                loss = loss + cfg.lambda_pseudo * pl
            assert_finite(loss, "pretraining loss")
            loss.backward()
            clip_global_norm(model.trainable_sets(), GRAD_CLIP_NORM)
            for opt in optimizers:
                opt.step()
            if model.mode == "ema":
                ema_update(model.target, model.context, tau_schedule(cfg, step, total_steps))
            step += 1
            epoch_jepa += jepa_value
            epoch_pl += pl_value
            epoch_std += diag["emb_std"]
            epoch_skip += diag["skipped"]
            epoch_digest.update(diag["selection_digest"].encode())
            used += 1
        entry = {
            "epoch": epoch,
            "jepa_loss": epoch_jepa / used,
            "pl_loss": epoch_pl / used,
            "emb_std": epoch_std / used,
            "skipped": epoch_skip,
            "selection_digest": epoch_digest.hexdigest(),
        }
        monitor.update(entry["emb_std"])
        history.append(entry)

    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            for entry in history:
                fh.write(json.dumps(entry, sort_keys=True))
                fh.write("\n")
    return PretrainResult(
        model=model,
        history=history,
        collapsed=monitor.flagged,
        mw_mean=mw_mean,
        mw_std=mw_std,
    )


def export_sections(result: PretrainResult) -> dict[str, ParamSet]:
    """Only the target encoder (plus optional pseudolabel head) moves on."""
    sections = {"target": result.model.target}
    if result.model.pl_head is not None:
        sections["pl_head"] = result.model.pl_head
    return sections
