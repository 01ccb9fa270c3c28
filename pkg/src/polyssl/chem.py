"""Monomer grammar: parsing, serialization, and per-monomer mass.

The grammar is a small molecular-line-notation subset: the ten heavy
elements B,C,N,O,S,P,F,Cl,Br,I plus H, lowercase aromatic atoms
(b,c,n,o,s,p), bonds ``- = # :``, parenthesized branches, single-digit
ring closures, and ``[*]`` attachment wildcards marking open valences.
Bracket atoms may carry a single +/- charge (``[N+]``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import (
    EmptyInput,
    UnbalancedParenthesis,
    UnclosedRing,
    UnknownElement,
    UnsupportedToken,
)

# IUPAC 2021 standard atomic weights, 3 decimals.
ATOMIC_MASS = {
    "H": 1.008,
    "B": 10.810,
    "C": 12.011,
    "N": 14.007,
    "O": 15.999,
    "F": 18.998,
    "P": 30.974,
    "S": 32.060,
    "Cl": 35.450,
    "Br": 79.904,
    "I": 126.904,
}

# Default valences used for implicit-hydrogen counting.
VALENCE = {
    "H": 1, "B": 3, "C": 4, "N": 3, "O": 2, "S": 2, "P": 3,
    "F": 1, "Cl": 1, "Br": 1, "I": 1,
}

ELEMENTS = tuple(ATOMIC_MASS)
AROMATIC_SYMBOLS = {"b": "B", "c": "C", "n": "N", "o": "O", "s": "S", "p": "P"}
BOND_CHARS = {"-": 1, "=": 2, "#": 3, ":": "aromatic"}

# Elements the encoder featurizes (hydrogens are never graph nodes).
FEATURE_ELEMENTS = ("B", "C", "N", "O", "S", "P", "F", "Cl", "Br", "I")


@dataclass
class AtomNode:
    """One heavy atom: element symbol, aromaticity, charge, and derived counts."""

    element: str
    aromatic: bool = False
    formal_charge: int = 0
    degree: int = 0
    hydrogens: int = 0


@dataclass
class Monomer:
    """Connected heavy-atom graph with open-valence attachment points."""

    atoms: list[AtomNode] = field(default_factory=list)
    bonds: list[tuple[int, int, object]] = field(default_factory=list)
    attachment_points: list[int] = field(default_factory=list)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)


def _tokenize(text: str):
    """Yield (kind, value) pairs; kinds: atom, bond, open, close, ring."""
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "[":
            j = text.find("]", i)
            if j < 0:
                raise UnsupportedToken(f"unterminated bracket at position {i}")
            yield "atom", text[i + 1 : j]
            i = j + 1
        elif ch == "(":
            yield "open", ch
            i += 1
        elif ch == ")":
            yield "close", ch
            i += 1
        elif ch in BOND_CHARS:
            yield "bond", ch
            i += 1
        elif ch.isdigit():
            yield "ring", int(ch)
            i += 1
        elif text[i : i + 2] in ("Cl", "Br"):
            yield "atom", text[i : i + 2]
            i += 2
        elif ch in "HBCNOSPFI" or ch in AROMATIC_SYMBOLS:
            yield "atom", ch
            i += 1
        else:
            raise UnsupportedToken(f"unsupported token {ch!r} at position {i}")


def _parse_atom_token(token: str) -> tuple[str, bool, int]:
    """Resolve an atom token to (element, aromatic, charge). '*' is a wildcard."""
    charge = 0
    if token.endswith("+"):
        charge, token = 1, token[:-1]
    elif token.endswith("-"):
        charge, token = -1, token[:-1]
    if token == "*":
        if charge:
            raise UnsupportedToken("wildcard atoms cannot carry charge")
        return "*", False, 0
    if token in AROMATIC_SYMBOLS:
        return AROMATIC_SYMBOLS[token], True, charge
    if token in ELEMENTS:
        return token, False, charge
    raise UnsupportedToken(f"unsupported atom symbol {token!r}")


def parse_monomer(text: str) -> Monomer:
    """Parse a monomer string into its heavy-atom graph.

    Ring closures are resolved, implicit single bonds inserted (aromatic
    between two aromatic atoms), and ``[*]`` wildcards recorded as
    attachment points on their bonded atom rather than as atoms.
    """
    if not text or not text.strip():
        raise EmptyInput("empty monomer string")
    text = text.strip()

    elements: list[tuple[str, bool, int]] = []  # includes '*' placeholders
    bonds: list[tuple[int, int, object]] = []
    anchor = None
    pending_bond = None
    branch_stack: list[int] = []
    open_rings: dict[int, tuple[int, object]] = {}

    def bond_order_between(i, j, explicit):
        if explicit is not None:
            return explicit
        if elements[i][1] and elements[j][1]:
            return "aromatic"
        return 1

    for kind, value in _tokenize(text):
        if kind == "atom":
            elements.append(_parse_atom_token(value))
            idx = len(elements) - 1
            if anchor is not None:
                bonds.append((anchor, idx, bond_order_between(anchor, idx, pending_bond)))
            pending_bond = None
            anchor = idx
        elif kind == "bond":
            pending_bond = BOND_CHARS[value]
        elif kind == "open":
            if anchor is None:
                raise UnbalancedParenthesis("branch before any atom")
            branch_stack.append(anchor)
        elif kind == "close":
            if not branch_stack:
                raise UnbalancedParenthesis("unmatched ')'")
            anchor = branch_stack.pop()
        elif kind == "ring":
            if anchor is None:
                raise UnclosedRing(f"ring digit {value} before any atom")
            if value in open_rings:
                other, other_bond = open_rings.pop(value)
                explicit = pending_bond if pending_bond is not None else other_bond
                if other == anchor:
                    raise UnclosedRing(f"ring digit {value} closes onto its own atom")
                bonds.append((other, anchor, bond_order_between(other, anchor, explicit)))
                pending_bond = None
            else:
                open_rings[value] = (anchor, pending_bond)
                pending_bond = None

    if branch_stack:
        raise UnbalancedParenthesis("unmatched '('")
    if open_rings:
        raise UnclosedRing(f"unclosed ring digits {sorted(open_rings)}")
    if not elements:
        raise EmptyInput("no atoms in input")

    return _assemble(elements, bonds)


def _assemble(elements, bonds) -> Monomer:
    """Strip wildcard placeholders and derive per-atom counts."""
    keep = [i for i, (el, _, _) in enumerate(elements) if el != "*"]
    if not keep:
        raise EmptyInput("monomer contains only attachment wildcards")
    remap = {old: new for new, old in enumerate(keep)}

    attach: list[int] = []
    real_bonds: list[tuple[int, int, object]] = []
    for i, j, order in bonds:
        wild_i = elements[i][0] == "*"
        wild_j = elements[j][0] == "*"
        if wild_i and wild_j:
            raise UnsupportedToken("wildcards may not bond to each other")
        if wild_i or wild_j:
            attach.append(remap[j] if wild_i else remap[i])
        else:
            real_bonds.append((remap[i], remap[j], order))

    n_wild = len(elements) - len(keep)
    if len(attach) != n_wild:
        raise UnsupportedToken("every attachment wildcard must bond exactly one atom")

    atoms = [
        AtomNode(element=el, aromatic=ar, formal_charge=ch)
        for el, ar, ch in (elements[i] for i in keep)
    ]
    bond_sum = [0.0] * len(atoms)
    for i, j, order in real_bonds:
        amt = 1.5 if order == "aromatic" else float(order)
        bond_sum[i] += amt
        bond_sum[j] += amt
        atoms[i].degree += 1
        atoms[j].degree += 1
    for idx in attach:
        bond_sum[idx] += 1.0

    for idx, atom in enumerate(atoms):
        valence = max(0, VALENCE[atom.element] + atom.formal_charge)
        atom.hydrogens = max(0, int(math.floor(valence - bond_sum[idx] + 0.5)))

    mono = Monomer(atoms=atoms, bonds=real_bonds, attachment_points=sorted(attach))
    _check_connected(mono)
    return mono


def _check_connected(m: Monomer) -> None:
    if m.n_atoms <= 1:
        return
    adj = [[] for _ in range(m.n_atoms)]
    for i, j, _ in m.bonds:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if len(seen) != m.n_atoms:
        raise UnsupportedToken("monomer graph is disconnected")


def monomer_mass(m: Monomer) -> float:
    """Heavy atoms plus implicit hydrogens, in g/mol."""
    total = 0.0
    for atom in m.atoms:
        if atom.element not in ATOMIC_MASS:
            raise UnknownElement(atom.element)
        total += ATOMIC_MASS[atom.element] + atom.hydrogens * ATOMIC_MASS["H"]
    return total


def monomer_to_string(m: Monomer) -> str:
    """Serialize back to the grammar; parse(monomer_to_string(m)) is isomorphic to m."""
    n = m.n_atoms
    adj: dict[int, list[tuple[int, object]]] = {i: [] for i in range(n)}
    for i, j, order in m.bonds:
        adj[i].append((j, order))
        adj[j].append((i, order))

    visited = [False] * n
    ring_bonds: list[tuple[int, int, object]] = []
    seen_ring = set()
    tree: dict[int, list[tuple[int, object]]] = {i: [] for i in range(n)}

    def dfs(v, parent):
        visited[v] = True
        for u, order in sorted(adj[v], key=lambda t: t[0]):
            if not visited[u]:
                tree[v].append((u, order))
                dfs(u, v)
            elif u != parent and frozenset((v, u)) not in seen_ring:
                ring_bonds.append((v, u, order))
                seen_ring.add(frozenset((v, u)))

    dfs(0, None)
    if not all(visited):
        raise UnsupportedToken("cannot serialize a disconnected monomer")

    free_digits = list(range(1, 10))
    opens_at: dict[int, list[tuple[int, object, int]]] = {i: [] for i in range(n)}
    closes_at: dict[int, list[tuple[object, int]]] = {i: [] for i in range(n)}
    for v, u, order in ring_bonds:
        if not free_digits:
            raise UnsupportedToken("too many ring closures for single-digit labels")
        digit = free_digits.pop(0)
        opens_at[min(v, u)].append((max(v, u), order, digit))
        closes_at[max(v, u)].append((order, digit))

    attach_count = {i: m.attachment_points.count(i) for i in range(n)}

    def bond_str(i, j, order):
        both_aromatic = m.atoms[i].aromatic and m.atoms[j].aromatic
        if order == "aromatic":
            return "" if both_aromatic else ":"
        if order == 1:
            return "-" if both_aromatic else ""
        return {2: "=", 3: "#"}[order]

    def atom_str(i):
        a = m.atoms[i]
        sym = a.element.lower() if a.aromatic else a.element
        if a.formal_charge or (a.aromatic and len(a.element) > 1):
            sign = {1: "+", -1: "-", 0: ""}[a.formal_charge]
            return f"[{sym}{sign}]"
        return sym

    def emit(v, parent, parent_order):
        parts = []
        if parent is not None:
            parts.append(bond_str(parent, v, parent_order))
        parts.append(atom_str(v))
        for u, order, digit in opens_at[v]:
            parts.append(bond_str(v, u, order) + str(digit))
        for order, digit in closes_at[v]:
            parts.append(str(digit))
        parts.append("([*])" * attach_count[v])
        children = tree[v]
        for k, (u, order) in enumerate(children):
            sub = emit(u, v, order)
            if k < len(children) - 1:
                parts.append(f"({sub})")
            else:
                parts.append(sub)
        return "".join(parts)

    return emit(0, None, None)
