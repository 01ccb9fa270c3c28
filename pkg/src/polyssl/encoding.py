"""Random-walk structural encodings at node and patch level.

Entry (v, k) is the probability that a k-step random walk over the
weighted adjacency returns to its start v, i.e. the diagonal of
(D^-1 W)^k where D holds row sums of W.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .polymer import PolymerGraph

K_NODE = 16
K_PATCH = 4


@dataclass
class RwseEncoding:
    node_pe: np.ndarray  # N x K_node
    patch_pe: np.ndarray  # P x K_patch over the coarse patch graph


def _walk_diagonals(weights: np.ndarray, k_steps: int) -> np.ndarray:
    """Rows of k-step return probabilities for a dense weighted adjacency."""
    n = weights.shape[0]
    row_sums = weights.sum(axis=1)
    transition = np.zeros_like(weights)
    nonzero = row_sums > 0
    transition[nonzero] = weights[nonzero] / row_sums[nonzero, None]
    out = np.zeros((n, k_steps))
    power = np.eye(n)
    for k in range(k_steps):
        power = power @ transition
        out[:, k] = np.diag(power)
    return out


def adjacency_matrix(g: PolymerGraph) -> np.ndarray:
    w = np.zeros((g.n_nodes, g.n_nodes))
    for e in g.edges:
        w[e.src, e.dst] = e.weight
    return w


def node_rwse(g: PolymerGraph, k_steps: int = K_NODE) -> np.ndarray:
    """N x K matrix of return probabilities; isolated nodes get zero rows."""
    if k_steps < 1:
        raise ValueError(f"k_steps must be >= 1, got {k_steps}")
    return _walk_diagonals(adjacency_matrix(g), k_steps)


def patch_rwse(selection, g: PolymerGraph, k_steps: int = K_PATCH) -> np.ndarray:
    """RWSE rows of the coarse patch graph; row 0 is the context patch,
    row 1+i the i-th target (its positional token)."""
    patches = [selection.context] + list(selection.targets)
    node_sets = [set(p.node_ids) for p in patches]
    n = len(patches)

    # Patches are adjacent when they share a node or an edge of g links them.
    adjacent = np.zeros((n, n))
    edge_pairs = {(e.src, e.dst) for e in g.edges}
    for i in range(n):
        for j in range(i + 1, n):
            linked = bool(node_sets[i] & node_sets[j]) or any(
                (u, v) in edge_pairs for u in node_sets[i] for v in node_sets[j]
            )
            if linked:
                adjacent[i, j] = adjacent[j, i] = 1.0
    return _walk_diagonals(adjacent, k_steps)
