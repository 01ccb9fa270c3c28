import json
from pathlib import Path

import networkx as nx
import pytest

from polyssl.chem import (
    ATOMIC_MASS,
    Monomer,
    monomer_mass,
    monomer_to_string,
    parse_monomer,
)
from polyssl.data import LIBRARIES
from polyssl.errors import (
    EmptyInput,
    UnbalancedParenthesis,
    UnclosedRing,
    UnsupportedToken,
)

GOLDEN = json.loads((Path(__file__).parent / "data" / "benzene_golden.json").read_text())


def canonical_bonds(m: Monomer):
    return sorted((min(i, j), max(i, j), str(order)) for i, j, order in m.bonds)


def test_ethane():
    m = parse_monomer("CC")
    assert m.n_atoms == 2
    assert [a.element for a in m.atoms] == ["C", "C"]
    assert canonical_bonds(m) == [(0, 1, "1")]
    assert m.attachment_points == []
    assert [a.hydrogens for a in m.atoms] == [3, 3]


def test_carboxyl_with_attachments():
    m = parse_monomer("[*]C(=O)O[*]")
    assert [a.element for a in m.atoms] == ["C", "O", "O"]
    orders = sorted(str(o) for _, _, o in m.bonds)
    assert orders == ["1", "2"]
    assert m.attachment_points == [0, 2]


def test_benzene_golden():
    m = parse_monomer("c1ccccc1")
    assert m.n_atoms == GOLDEN["n_atoms"]
    assert [a.element for a in m.atoms] == GOLDEN["elements"]
    assert [a.aromatic for a in m.atoms] == GOLDEN["aromatic"]
    assert [a.hydrogens for a in m.atoms] == GOLDEN["hydrogens"]
    assert [a.degree for a in m.atoms] == GOLDEN["degrees"]
    assert canonical_bonds(m) == [
        (b[0], b[1], b[2]) for b in sorted(map(tuple, GOLDEN["bonds"]))
    ]
    assert m.attachment_points == GOLDEN["attachment_points"]
    assert monomer_mass(m) == pytest.approx(GOLDEN["mass"], abs=1e-9)


def test_branches_and_rings_combined():
    m = parse_monomer("Cc1ccc(CC)cc1")
    assert m.n_atoms == 9
    aromatic_count = sum(a.aromatic for a in m.atoms)
    assert aromatic_count == 6
    ring_bonds = [b for b in m.bonds if str(b[2]) == "aromatic"]
    assert len(ring_bonds) == 6


def test_two_rings():
    m = parse_monomer("c1ccc2ccccc2c1")  # naphthalene
    assert m.n_atoms == 10
    assert len(m.bonds) == 11


def test_explicit_bonds():
    m = parse_monomer("C#N")
    assert canonical_bonds(m) == [(0, 1, "3")]
    m2 = parse_monomer("C=C")
    assert canonical_bonds(m2) == [(0, 1, "2")]


def test_charged_bracket_atom():
    m = parse_monomer("C[N+]C")
    assert m.atoms[1].formal_charge == 1
    assert m.atoms[1].hydrogens == 2  # valence 3 + charge - 2 bonds


@pytest.mark.parametrize(
    "text,exc",
    [
        ("", EmptyInput),
        ("   ", EmptyInput),
        ("[*][*]", EmptyInput),
        ("C[*][*]C", UnsupportedToken),
        ("CX", UnsupportedToken),
        ("C[Si]C", UnsupportedToken),
        ("C1CC", UnclosedRing),
        ("C(C", UnbalancedParenthesis),
        ("CC)", UnbalancedParenthesis),
        ("C..", UnsupportedToken),
    ],
)
def test_parse_errors(text, exc):
    with pytest.raises(exc):
        parse_monomer(text)


def test_wildcards_not_atoms():
    m = parse_monomer("[*]CC[*]")
    assert m.n_atoms == 2
    assert m.attachment_points == [0, 1]
    assert [a.hydrogens for a in m.atoms] == [2, 2]


def test_ethylene_repeat_mass():
    m = parse_monomer("[*]CC[*]")
    assert monomer_mass(m) == pytest.approx(2 * 12.011 + 4 * 1.008, abs=0.01)


def _to_nx(m: Monomer) -> nx.Graph:
    g = nx.Graph()
    for i, atom in enumerate(m.atoms):
        attach = m.attachment_points.count(i)
        g.add_node(i, element=atom.element, aromatic=atom.aromatic,
                   charge=atom.formal_charge, attach=attach)
    for i, j, order in m.bonds:
        g.add_edge(i, j, order=str(order))
    return g


@pytest.mark.parametrize("family", sorted(LIBRARIES))
def test_serialize_roundtrip_isomorphic(family):
    for text in LIBRARIES[family]:
        original = parse_monomer(text)
        back = parse_monomer(monomer_to_string(original))
        gm = nx.algorithms.isomorphism.GraphMatcher(
            _to_nx(original),
            _to_nx(back),
            node_match=nx.algorithms.isomorphism.categorical_node_match(
                ["element", "aromatic", "charge", "attach"], [None, None, None, None]
            ),
            edge_match=nx.algorithms.isomorphism.categorical_edge_match("order", None),
        )
        assert gm.is_isomorphic(), text


def test_mass_table_covers_supported_elements():
    for element, mass in ATOMIC_MASS.items():
        assert mass > 0
        assert round(mass, 3) == mass
