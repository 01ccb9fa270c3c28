"""Weighted directed node-centred message passing encoder.

Each node starts from a projected feature vector h0. For T rounds, every
directed edge (u, v) proposes relu(W_msg . [h_u || e_uv]) scaled by the
edge weight; node v sums incoming proposals and updates to
relu(h0_v + W_upd . [h_v || m_v]). Pooled embeddings are plain means,
so a zero-weight edge contributes exactly nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ParamSet,
    Tensor,
    concat,
    glorot_uniform,
    linear,
    mean_pool,
    relu,
    scale_rows,
    segment_sum,
    take_rows,
)
from .encoding import K_NODE, node_rwse
from .errors import EmptyPatch, ShapeMismatch
from .polymer import EDGE_FEATURE_DIM, NODE_FEATURE_DIM, PolymerGraph, edge_arrays, node_features
from .rng import make_rng


@dataclass(frozen=True)
class EncoderConfig:
    depth: int = 3
    hidden: int = 64
    node_dim: int = NODE_FEATURE_DIM + K_NODE
    edge_dim: int = EDGE_FEATURE_DIM

    def __post_init__(self):
        if self.depth < 1 or self.hidden < 1:
            raise ShapeMismatch("encoder depth and hidden size must be >= 1")


def init_encoder_params(cfg: EncoderConfig, seed) -> ParamSet:
    rng = make_rng("encoder-init", seed)
    d = cfg.hidden
    ps = ParamSet()
    ps.add("W_in", glorot_uniform((cfg.node_dim, d), rng))
    ps.add("b_in", np.zeros(d))
    ps.add("W_msg", glorot_uniform((d + cfg.edge_dim, d), rng))
    ps.add("b_msg", np.zeros(d))
    ps.add("W_upd", glorot_uniform((2 * d, d), rng))
    ps.add("b_upd", np.zeros(d))
    return ps


@dataclass
class GraphTensors:
    """Featurized graph ready for the encoder."""

    node_x: np.ndarray  # (N, node_dim) including positional encoding columns
    edge_src: np.ndarray  # (E,)
    edge_dst: np.ndarray  # (E,)
    edge_attr: np.ndarray  # (E, edge_dim)
    edge_weight: np.ndarray  # (E,)

    @property
    def n_nodes(self) -> int:
        return self.node_x.shape[0]


def featurize(g: PolymerGraph, node_pe: np.ndarray | None = None) -> GraphTensors:
    """Node features concatenated with node-level RWSE columns."""
    if node_pe is None:
        node_pe = node_rwse(g, K_NODE)
    x = np.concatenate([node_features(g), node_pe], axis=1)
    index, attr, weight = edge_arrays(g)
    return GraphTensors(x, index[:, 0], index[:, 1], attr, weight)


def subgraph_tensors(gt: GraphTensors, node_ids) -> GraphTensors:
    """Induced subgraph on node_ids; positional rows come from the full graph."""
    ids = sorted(set(int(i) for i in node_ids))
    if not ids:
        raise EmptyPatch("subgraph with no nodes")
    pos = {node: k for k, node in enumerate(ids)}
    keep = np.array(
        [k for k in range(len(gt.edge_src)) if gt.edge_src[k] in pos and gt.edge_dst[k] in pos],
        dtype=np.int64,
    )
    return GraphTensors(
        node_x=gt.node_x[ids],
        edge_src=np.array([pos[s] for s in gt.edge_src[keep]], dtype=np.int64),
        edge_dst=np.array([pos[d] for d in gt.edge_dst[keep]], dtype=np.int64),
        edge_attr=gt.edge_attr[keep] if len(keep) else gt.edge_attr[:0],
        edge_weight=gt.edge_weight[keep] if len(keep) else gt.edge_weight[:0],
    )


def encode_nodes(gt: GraphTensors, params, cfg: EncoderConfig, node_x: Tensor | None = None) -> Tensor:
    """T rounds of weighted message passing; returns the (N, hidden) embeddings.

    node_x optionally overrides the stored feature matrix with a tensor
    (e.g. one carrying a trainable mask vector).
    """
    x = node_x if node_x is not None else Tensor(gt.node_x)
    if x.shape[1] != cfg.node_dim:
        raise ShapeMismatch(f"node features {x.shape[1]} != cfg {cfg.node_dim}")
    if gt.edge_attr.shape[1] != cfg.edge_dim:
        raise ShapeMismatch(f"edge features {gt.edge_attr.shape[1]} != cfg {cfg.edge_dim}")
    edge_attr = Tensor(gt.edge_attr)
    h0 = relu(linear(x, params["W_in"], params["b_in"]))
    h = h0
    for _ in range(cfg.depth):
        upstream = take_rows(h, gt.edge_src)
        msg = relu(linear(concat([upstream, edge_attr], axis=-1), params["W_msg"], params["b_msg"]))
        msg = scale_rows(msg, gt.edge_weight)
        incoming = segment_sum(msg, gt.edge_dst, gt.n_nodes)
        h = relu(h0 + linear(concat([h, incoming], axis=-1), params["W_upd"], params["b_upd"]))
    return h


def pool_graph(h: Tensor) -> Tensor:
    return mean_pool(h)


def pool_patch(h: Tensor, node_positions) -> Tensor:
    """Mean over the rows listed in node_positions (row indices into h)."""
    ids = sorted(set(int(i) for i in node_positions))
    if not ids:
        raise EmptyPatch("cannot pool an empty patch")
    if ids[-1] >= h.shape[0]:
        raise ShapeMismatch(f"patch row {ids[-1]} outside {h.shape}")
    return mean_pool(take_rows(h, ids))
