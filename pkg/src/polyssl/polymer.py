"""Stochastic polymer graphs built from two monomers.

A polymer graph is the union of the two monomer graphs plus stochastic
edges between attachment atoms. Stochastic edge weights encode the
connection probabilities implied by the chain architecture and
stoichiometry; deterministic (within-monomer) edges carry weight 1.
Every directed edge has its reverse present.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chem import ATOMIC_MASS, FEATURE_ELEMENTS, Monomer, monomer_mass
from .errors import InvalidStoichiometry, NoAttachmentPoint, UnknownElement

ARCHITECTURES = ("alternating", "random", "block")

# Share of an attachment atom's outgoing probability mass kept within the
# same monomer for block architectures.
BLOCK_SELF_WEIGHT = 0.9


@dataclass
class PolymerNode:
    element: str
    aromatic: bool
    formal_charge: int
    degree: int
    hydrogens: int
    monomer_id: str


@dataclass
class DirectedEdge:
    src: int
    dst: int
    weight: float
    stochastic: bool
    bond_order: object


@dataclass
class PolymerGraph:
    nodes: list[PolymerNode]
    edges: list[DirectedEdge]
    stoichiometry: tuple[float, float]
    architecture: str
    pseudolabel_mw: float
    attachment_atoms: list[int] = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def neighbors(self) -> list[list[int]]:
        """Distinct out-neighbors per node, ascending."""
        out = [set() for _ in range(self.n_nodes)]
        for e in self.edges:
            out[e.src].add(e.dst)
        return [sorted(s) for s in out]

    def undirected_edges(self):
        """Yield (u, v, weight) with u < v; weight is the mean of both directions."""
        half: dict[tuple[int, int], list[float]] = {}
        for e in self.edges:
            key = (min(e.src, e.dst), max(e.src, e.dst))
            half.setdefault(key, []).append(e.weight)
        for (u, v), ws in sorted(half.items()):
            yield u, v, sum(ws) / len(ws)


def build_polymer(a: Monomer, b: Monomer, stoich, arch: str) -> PolymerGraph:
    """Assemble the two-monomer stochastic graph for one architecture.

    Weight rules per attachment atom (renormalized over non-empty groups,
    then split equally within a group):
      alternating: all mass to the other monomer's attachments;
      random:      mass toward monomer X proportional to frac(X);
      block:       0.9 within the own monomer, 0.1 toward the other.
    """
    fa, fb = float(stoich[0]), float(stoich[1])
    if abs(fa + fb - 1.0) > 1e-9:
        raise InvalidStoichiometry(f"fractions {fa}+{fb} do not sum to 1")
    if fa < 0 or fb < 0:
        raise InvalidStoichiometry("fractions must be non-negative")
    if arch not in ARCHITECTURES:
        raise InvalidStoichiometry(f"unknown architecture {arch!r}")
    if not a.attachment_points:
        raise NoAttachmentPoint("monomer A has no attachment point")
    if not b.attachment_points:
        raise NoAttachmentPoint("monomer B has no attachment point")

    nodes: list[PolymerNode] = []
    edges: list[DirectedEdge] = []
    for mon, mid in ((a, "A"), (b, "B")):
        offset = len(nodes)
        for atom in mon.atoms:
            nodes.append(
                PolymerNode(
                    element=atom.element,
                    aromatic=atom.aromatic,
                    formal_charge=atom.formal_charge,
                    degree=0,
                    hydrogens=atom.hydrogens,
                    monomer_id=mid,
                )
            )
        for i, j, order in mon.bonds:
            edges.append(DirectedEdge(offset + i, offset + j, 1.0, False, order))
            edges.append(DirectedEdge(offset + j, offset + i, 1.0, False, order))

    offset_b = a.n_atoms
    attach = {
        "A": sorted(set(a.attachment_points)),
        "B": sorted(offset_b + i for i in set(b.attachment_points)),
    }
    fractions = {"A": fa, "B": fb}

    weights: dict[tuple[int, int], float] = {}
    for mid in ("A", "B"):
        other = "B" if mid == "A" else "A"
        for src in attach[mid]:
            groups = {}
            for gid in ("A", "B"):
                targets = [t for t in attach[gid] if t != src]
                if not targets:
                    continue
                if arch == "alternating":
                    mass = 1.0 if gid == other else 0.0
                elif arch == "random":
                    mass = fractions[gid]
                else:
                    mass = BLOCK_SELF_WEIGHT if gid == mid else 1.0 - BLOCK_SELF_WEIGHT
                if mass > 0.0:
                    groups[gid] = (mass, targets)
            total = sum(mass for mass, _ in groups.values())
            if total <= 0.0:
                continue
            for mass, targets in groups.values():
                share = mass / total / len(targets)
                for dst in targets:
                    weights[(src, dst)] = weights.get((src, dst), 0.0) + share

    # Keep reversal closure: drop any direction whose reverse got no mass
    # (only degenerate stoichiometries produce this), then renormalize.
    kept = {k: w for k, w in weights.items() if weights.get((k[1], k[0]), 0.0) > 0.0}
    out_total: dict[int, float] = {}
    for (src, _), w in kept.items():
        out_total[src] = out_total.get(src, 0.0) + w
    for (src, dst), w in sorted(kept.items()):
        edges.append(DirectedEdge(src, dst, w / out_total[src], True, 1))

    degree = [0] * len(nodes)
    seen_pairs = set()
    for e in edges:
        key = (min(e.src, e.dst), max(e.src, e.dst))
        if key not in seen_pairs:
            seen_pairs.add(key)
            degree[key[0]] += 1
            degree[key[1]] += 1
    for i, node in enumerate(nodes):
        node.degree = degree[i]

    mw = fa * monomer_mass(a) + fb * monomer_mass(b)
    return PolymerGraph(
        nodes=nodes,
        edges=edges,
        stoichiometry=(fa, fb),
        architecture=arch,
        pseudolabel_mw=mw,
        attachment_atoms=sorted(attach["A"] + attach["B"]),
    )


def molecular_weight(g: PolymerGraph) -> float:
    """Stoichiometry-weighted sum of the two monomer masses, from the graph."""
    part = {"A": 0.0, "B": 0.0}
    for node in g.nodes:
        if node.element not in ATOMIC_MASS:
            raise UnknownElement(node.element)
        part[node.monomer_id] += (
            ATOMIC_MASS[node.element] + node.hydrogens * ATOMIC_MASS["H"]
        )
    fa, fb = g.stoichiometry
    return fa * part["A"] + fb * part["B"]


BOND_ORDER_SLOTS = (1, 2, 3, "aromatic")
NODE_FEATURE_DIM = len(FEATURE_ELEMENTS) + 1 + 6 + 1
EDGE_FEATURE_DIM = len(BOND_ORDER_SLOTS) + 1


def node_features(g: PolymerGraph) -> np.ndarray:
    """Per-node feature rows: element one-hot, aromatic flag, degree one-hot, charge."""
    x = np.zeros((g.n_nodes, NODE_FEATURE_DIM))
    for i, node in enumerate(g.nodes):
        if node.element not in FEATURE_ELEMENTS:
            raise UnknownElement(f"cannot featurize element {node.element!r}")
        x[i, FEATURE_ELEMENTS.index(node.element)] = 1.0
        x[i, len(FEATURE_ELEMENTS)] = 1.0 if node.aromatic else 0.0
        x[i, len(FEATURE_ELEMENTS) + 1 + min(node.degree, 5)] = 1.0
        x[i, -1] = float(np.clip(node.formal_charge, -1, 1))
    return x


def edge_arrays(g: PolymerGraph):
    """(edge_index (E,2), edge_attr (E,5), edge_weight (E,)) in edge-list order."""
    n_e = len(g.edges)
    index = np.zeros((n_e, 2), dtype=np.int64)
    attr = np.zeros((n_e, EDGE_FEATURE_DIM))
    weight = np.zeros(n_e)
    for k, e in enumerate(g.edges):
        index[k] = (e.src, e.dst)
        attr[k, BOND_ORDER_SLOTS.index(e.bond_order)] = 1.0
        attr[k, -1] = 1.0 if e.stochastic else 0.0
        weight[k] = e.weight
    return index, attr, weight


def graph_statistics(g: PolymerGraph) -> dict:
    """Summary statistics used by the synthetic label function."""
    n = g.n_nodes
    aromatic = sum(1 for node in g.nodes if node.aromatic)
    stoch_sq = sum(e.weight**2 for e in g.edges if e.stochastic)
    return {
        "frac_a": g.stoichiometry[0],
        "mean_degree": sum(node.degree for node in g.nodes) / n,
        "aromatic_fraction": aromatic / n,
        "stochastic_weight_sq": stoch_sq,
    }
