import numpy as np
import pytest

from conftest import monomer_only_graph
from oracles import rwse_oracle
from polyssl.chem import parse_monomer
from polyssl.encoding import adjacency_matrix, node_rwse, patch_rwse
from polyssl.partition import PatchSelection, induced_patch, make_pool, select_context_and_targets
from polyssl.polymer import DirectedEdge, build_polymer


def path_graph_2():
    g = monomer_only_graph("CC")
    return g


def test_two_node_path_alternates():
    pe = node_rwse(path_graph_2(), 4)
    expected = np.array([[0.0, 1.0, 0.0, 1.0], [0.0, 1.0, 0.0, 1.0]])
    np.testing.assert_allclose(pe, expected)


def test_triangle_half_at_two_steps():
    g = monomer_only_graph("C1CC1")
    pe = node_rwse(g, 2)
    np.testing.assert_allclose(pe[:, 1], 0.5)
    np.testing.assert_allclose(pe[:, 0], 0.0)


def test_matches_dense_oracle_small_graphs(rng):
    monomers = ["[*]CC([*])c1ccccc1", "[*]c1ccc([*])cc1", "[*]CCO[*]", "[*]CC([*])C#N"]
    for i in range(6):
        a = parse_monomer(monomers[i % len(monomers)])
        b = parse_monomer(monomers[(i + 1) % len(monomers)])
        g = build_polymer(a, b, (0.5, 0.5), ("random", "block", "alternating")[i % 3])
        if g.n_nodes > 12:
            continue
        for k in (1, 4, 8):
            mine = node_rwse(g, k)
            ref = rwse_oracle(adjacency_matrix(g), k)
            np.testing.assert_allclose(mine, ref, atol=1e-10)


def test_entries_in_unit_interval_and_row_sums(styrene_phenylene):
    k = 16
    pe = node_rwse(styrene_phenylene, k)
    assert np.all(pe >= 0.0) and np.all(pe <= 1.0)
    assert np.all(pe.sum(axis=1) <= k)


def test_isolated_node_zero_row():
    g = monomer_only_graph("CC")
    g.nodes.append(g.nodes[0].__class__(
        element="C", aromatic=False, formal_charge=0, degree=0, hydrogens=4, monomer_id="A"
    ))
    pe = node_rwse(g, 4)
    np.testing.assert_allclose(pe[2], 0.0)


def test_permutation_equivariance(styrene_phenylene, rng):
    g = styrene_phenylene
    k = 8
    base = node_rwse(g, k)
    perm = rng.permutation(g.n_nodes)
    inverse = np.argsort(perm)
    relabeled = monomer_only_graph("CC")  # shell; replaced below
    relabeled.nodes = [g.nodes[int(inverse[i])] for i in range(g.n_nodes)]
    relabeled.edges = [
        DirectedEdge(int(perm[e.src]), int(perm[e.dst]), e.weight, e.stochastic, e.bond_order)
        for e in g.edges
    ]
    pe = node_rwse(relabeled, k)
    np.testing.assert_allclose(pe[perm], base, atol=1e-12)


def test_weight_scaling_invariance(styrene_phenylene):
    g = styrene_phenylene
    base = node_rwse(g, 8)
    for e in g.edges:
        e.weight *= 3.7
    np.testing.assert_allclose(node_rwse(g, 8), base, atol=1e-12)


def _selection_of(g, context_ids, target_id_lists):
    return PatchSelection(
        context=induced_patch(g, context_ids),
        targets=[induced_patch(g, ids) for ids in target_id_lists],
        source_patch_ids=[],
        target_patch_ids=[],
    )


def test_patch_rwse_disconnected_target_is_zero():
    g = monomer_only_graph("CCCC")
    sel = _selection_of(g, [0, 1], [[3]])
    pe = patch_rwse(sel, g, 4)
    np.testing.assert_allclose(pe[1], 0.0)  # target shares no node/edge with context


def test_patch_rwse_adjacent_pair_alternates():
    g = monomer_only_graph("CCCC")
    sel = _selection_of(g, [0, 1], [[2, 3]])
    pe = patch_rwse(sel, g, 4)
    np.testing.assert_allclose(pe[1], [0.0, 1.0, 0.0, 1.0])


def test_patch_rwse_against_oracle(styrene_phenylene):
    g = styrene_phenylene
    sel = select_context_and_targets(
        make_pool(g, "random_walk", 0.15, 3, seed=5), g, 0.5, 0.15, 3, seed=5
    )
    pe = patch_rwse(sel, g, 4)
    patches = [sel.context] + list(sel.targets)
    sets = [set(p.node_ids) for p in patches]
    pairs = {(e.src, e.dst) for e in g.edges}
    coarse = np.zeros((len(patches), len(patches)))
    for i in range(len(patches)):
        for j in range(len(patches)):
            if i == j:
                continue
            shared = bool(sets[i] & sets[j])
            linked = any((u, v) in pairs for u in sets[i] for v in sets[j])
            coarse[i, j] = 1.0 if (shared or linked) else 0.0
    np.testing.assert_allclose(pe, rwse_oracle(coarse, 4), atol=1e-10)


def test_bad_steps_rejected(styrene_phenylene):
    with pytest.raises(ValueError):
        node_rwse(styrene_phenylene, 0)
