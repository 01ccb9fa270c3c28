import numpy as np
import pytest

from conftest import monomer_only_graph
from polyssl.autodiff import Tensor
from polyssl.encoder import (
    EncoderConfig,
    GraphTensors,
    encode_nodes,
    featurize,
    init_encoder_params,
    pool_graph,
    pool_patch,
    subgraph_tensors,
)
from polyssl.errors import EmptyPatch, ShapeMismatch
from polyssl.polymer import DirectedEdge


def tiny_cfg(depth=1, hidden=2, node_dim=3, edge_dim=2):
    return EncoderConfig(depth=depth, hidden=hidden, node_dim=node_dim, edge_dim=edge_dim)


def manual_params(cfg, assignments):
    ps = init_encoder_params(cfg, 0)
    for name, value in assignments.items():
        np.copyto(ps[name].data, value)
    return ps


def test_single_node_residual_with_zero_update():
    cfg = tiny_cfg(depth=3, hidden=4, node_dim=2, edge_dim=2)
    gt = GraphTensors(
        node_x=np.array([[0.5, -1.0]]),
        edge_src=np.zeros(0, dtype=np.int64),
        edge_dst=np.zeros(0, dtype=np.int64),
        edge_attr=np.zeros((0, 2)),
        edge_weight=np.zeros(0),
    )
    ps = init_encoder_params(cfg, 1)
    np.copyto(ps["W_upd"].data, 0.0)
    np.copyto(ps["b_upd"].data, 0.0)
    h = encode_nodes(gt, ps, cfg)
    h0 = np.maximum(gt.node_x @ ps["W_in"].data + ps["b_in"].data, 0.0)
    np.testing.assert_array_equal(h.data, h0)


def test_two_node_hand_computation():
    """d=2, T=1, hand-set weights; matches explicit matrix arithmetic."""
    cfg = tiny_cfg(depth=1, hidden=2, node_dim=2, edge_dim=1)
    w_in = np.array([[1.0, 0.5], [-0.25, 2.0]])
    w_msg = np.array([[0.5, -1.0], [2.0, 0.25], [1.5, 1.0]])  # (hidden+edge, hidden)
    w_upd = np.array([[0.2, 0.4], [-0.6, 0.8], [1.0, -0.2], [0.3, 0.7]])
    ps = manual_params(
        cfg,
        {
            "W_in": w_in,
            "b_in": np.zeros(2),
            "W_msg": w_msg,
            "b_msg": np.zeros(2),
            "W_upd": w_upd,
            "b_upd": np.zeros(2),
        },
    )
    x = np.array([[1.0, 2.0], [3.0, -1.0]])
    w01, w10 = 0.7, 0.7
    gt = GraphTensors(
        node_x=x,
        edge_src=np.array([0, 1]),
        edge_dst=np.array([1, 0]),
        edge_attr=np.array([[1.0], [1.0]]),
        edge_weight=np.array([w01, w10]),
    )
    h = encode_nodes(gt, ps, cfg).data

    h0 = np.maximum(x @ w_in, 0.0)
    msg_01 = w01 * np.maximum(np.concatenate([h0[0], [1.0]]) @ w_msg, 0.0)
    msg_10 = w10 * np.maximum(np.concatenate([h0[1], [1.0]]) @ w_msg, 0.0)
    expected = np.vstack(
        [
            np.maximum(h0[0] + np.concatenate([h0[0], msg_10]) @ w_upd, 0.0),
            np.maximum(h0[1] + np.concatenate([h0[1], msg_01]) @ w_upd, 0.0),
        ]
    )
    np.testing.assert_allclose(h, expected, atol=1e-12)


def permute_graph(g, perm):
    inverse = np.argsort(perm)
    out = monomer_only_graph("CC")
    out.nodes = [g.nodes[int(inverse[i])] for i in range(g.n_nodes)]
    out.edges = [
        DirectedEdge(int(perm[e.src]), int(perm[e.dst]), e.weight, e.stochastic, e.bond_order)
        for e in g.edges
    ]
    out.stoichiometry = g.stoichiometry
    return out


def test_permutation_equivariance_exact(styrene_phenylene, rng):
    """Bit-exact when the same feature rows are re-ordered (the aggregation
    sums in value order, so edge/node order cannot leak into the result)."""
    g = styrene_phenylene
    cfg = EncoderConfig(depth=3, hidden=16)
    ps = init_encoder_params(cfg, 3)
    gt = featurize(g)
    base = encode_nodes(gt, ps, cfg).data
    for _ in range(5):
        perm = rng.permutation(g.n_nodes)
        edge_order = rng.permutation(len(gt.edge_src))
        permuted = GraphTensors(
            node_x=gt.node_x[np.argsort(perm)],
            edge_src=perm[gt.edge_src][edge_order],
            edge_dst=perm[gt.edge_dst][edge_order],
            edge_attr=gt.edge_attr[edge_order],
            edge_weight=gt.edge_weight[edge_order],
        )
        h = encode_nodes(permuted, ps, cfg).data
        np.testing.assert_array_equal(h[perm], base)


def test_permutation_equivariance_recomputed_features(styrene_phenylene, rng):
    """Recomputing positional encodings on the relabeled graph perturbs the
    inputs at float precision; embeddings stay equal to 1e-9."""
    g = styrene_phenylene
    cfg = EncoderConfig(depth=3, hidden=16)
    ps = init_encoder_params(cfg, 3)
    base = encode_nodes(featurize(g), ps, cfg).data
    for _ in range(5):
        perm = rng.permutation(g.n_nodes)
        h = encode_nodes(featurize(permute_graph(g, perm)), ps, cfg).data
        assert np.max(np.abs(h[perm] - base)) < 1e-9


def test_pooled_permutation_invariance(styrene_phenylene, rng):
    g = styrene_phenylene
    cfg = EncoderConfig(depth=2, hidden=16)
    ps = init_encoder_params(cfg, 4)
    base = pool_graph(encode_nodes(featurize(g), ps, cfg)).data
    for _ in range(20):
        perm = rng.permutation(g.n_nodes)
        pooled = pool_graph(encode_nodes(featurize(permute_graph(g, perm)), ps, cfg)).data
        assert np.max(np.abs(pooled - base)) < 1e-9


def test_zero_weight_edge_equals_deleted_edge(styrene_phenylene):
    g = styrene_phenylene
    cfg = EncoderConfig(depth=3, hidden=16)
    ps = init_encoder_params(cfg, 5)
    stoch_pairs = [(e.src, e.dst) for e in g.edges if e.stochastic]
    u, v = stoch_pairs[0]

    gt = featurize(g)
    zeroed = GraphTensors(
        node_x=gt.node_x.copy(),
        edge_src=gt.edge_src,
        edge_dst=gt.edge_dst,
        edge_attr=gt.edge_attr,
        edge_weight=np.array(
            [
                0.0 if (s, d) in ((u, v), (v, u)) else w
                for s, d, w in zip(gt.edge_src, gt.edge_dst, gt.edge_weight)
            ]
        ),
    )
    keep = [
        k
        for k in range(len(gt.edge_src))
        if (gt.edge_src[k], gt.edge_dst[k]) not in ((u, v), (v, u))
    ]
    deleted = GraphTensors(
        node_x=gt.node_x.copy(),
        edge_src=gt.edge_src[keep],
        edge_dst=gt.edge_dst[keep],
        edge_attr=gt.edge_attr[keep],
        edge_weight=gt.edge_weight[keep],
    )
    h_zero = encode_nodes(zeroed, ps, cfg).data
    h_del = encode_nodes(deleted, ps, cfg).data
    assert np.max(np.abs(h_zero - h_del)) < 1e-12


def test_pool_patch_matches_row_mean(rng):
    h = Tensor(rng.normal(size=(6, 4)))
    rows = [1, 3, 4]
    np.testing.assert_allclose(
        pool_patch(h, rows).data, h.data[rows].mean(axis=0), atol=1e-15
    )


def test_pool_identical_rows(rng):
    row = rng.normal(size=5)
    h = Tensor(np.tile(row, (4, 1)))
    np.testing.assert_allclose(pool_graph(h).data, row, atol=1e-15)


def test_pool_full_patch_equals_pool_graph(rng):
    h = Tensor(rng.normal(size=(5, 3)))
    np.testing.assert_array_equal(pool_graph(h).data, pool_patch(h, range(5)).data)


def test_pool_patch_empty_raises(rng):
    with pytest.raises(EmptyPatch):
        pool_patch(Tensor(rng.normal(size=(3, 2))), [])


def test_pool_patch_out_of_range(rng):
    with pytest.raises(ShapeMismatch):
        pool_patch(Tensor(rng.normal(size=(3, 2))), [5])


def test_feature_dim_mismatch_raises(styrene_phenylene):
    cfg = EncoderConfig(depth=1, hidden=8, node_dim=7)
    with pytest.raises(ShapeMismatch):
        encode_nodes(featurize(styrene_phenylene), init_encoder_params(cfg, 0), cfg)


def test_subgraph_tensors_induced(styrene_phenylene):
    gt = featurize(styrene_phenylene)
    ids = [0, 1, 2]
    sub = subgraph_tensors(gt, ids)
    assert sub.n_nodes == 3
    assert np.all(sub.edge_src < 3) and np.all(sub.edge_dst < 3)
    np.testing.assert_array_equal(sub.node_x, gt.node_x[ids])
    with pytest.raises(EmptyPatch):
        subgraph_tensors(gt, [])
