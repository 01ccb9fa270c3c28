import numpy as np
import pytest

from polyssl.chem import parse_monomer
from polyssl.polymer import DirectedEdge, PolymerGraph, PolymerNode, build_polymer


def monomer_only_graph(text, monomer_id="A", stoich=(1.0, 0.0)):
    """PolymerGraph containing a single monomer and no stochastic edges."""
    mono = parse_monomer(text)
    nodes = [
        PolymerNode(
            element=a.element,
            aromatic=a.aromatic,
            formal_charge=a.formal_charge,
            degree=a.degree,
            hydrogens=a.hydrogens,
            monomer_id=monomer_id,
        )
        for a in mono.atoms
    ]
    edges = []
    for i, j, order in mono.bonds:
        edges.append(DirectedEdge(i, j, 1.0, False, order))
        edges.append(DirectedEdge(j, i, 1.0, False, order))
    return PolymerGraph(
        nodes=nodes,
        edges=edges,
        stoichiometry=stoich,
        architecture="alternating",
        pseudolabel_mw=0.0,
        attachment_atoms=list(mono.attachment_points),
    )


@pytest.fixture
def styrene_phenylene():
    a = parse_monomer("[*]CC([*])c1ccccc1")
    b = parse_monomer("[*]c1ccc([*])cc1")
    return build_polymer(a, b, (0.5, 0.5), "random")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
