"""SMILES subset parsing and atom/bond featurization.

Supported grammar: organic-subset atoms, aromatic lowercase atoms, bracket
atoms with charge, explicit bonds ``- = # :``, branches, ring closures
(single digit or ``%nn``). Stereo marks (``/ \\ @``) are accepted and
dropped. Hydrogens stay implicit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

ELEMENTS = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
AROMATIC_ELEMENTS = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}
# Two-letter symbols accepted inside brackets (featurized as "other").
_BRACKET_ONLY = {
    "H", "He", "Li", "Be", "Ne", "Na", "Mg", "Al", "Si", "Ar", "K", "Ca", "Sc", "Ti", "V",
    "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Kr", "Rb", "Sr", "Y",
    "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "Xe", "Cs",
    "Ba", "La", "Ce", "Nd", "Sm", "Eu", "Gd", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au",
    "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Ra", "U",
}
_BRACKET_AROMATIC = {"se": "Se", "as": "As", "te": "Te"}

DEGREE_RANGE = range(0, 6)
CHARGE_RANGE = range(-2, 3)


class Hybridization(Enum):
    SP = "sp"
    SP2 = "sp2"
    SP3 = "sp3"
    OTHER = "other"


class BondOrder(Enum):
    SINGLE = "single"
    DOUBLE = "double"
    TRIPLE = "triple"
    AROMATIC = "aromatic"


HYBRIDIZATIONS = tuple(Hybridization)
BOND_ORDERS = tuple(BondOrder)

NODE_FEATURE_DIM = (
    len(ELEMENTS) + 1 + len(DEGREE_RANGE) + len(CHARGE_RANGE) + len(HYBRIDIZATIONS) + 1
)
EDGE_FEATURE_DIM = len(BOND_ORDERS) + 1

# (start, stop) column ranges of the one-hot blocks in a node feature row
NODE_ONE_HOT_BLOCKS = (
    (0, 11),
    (11, 17),
    (17, 22),
    (22, 26),
)
EDGE_ONE_HOT_BLOCKS = ((0, 4),)


class SmilesError(ValueError):
    def __init__(self, message, position):
        self.position = position
        super().__init__(f"{message} at position {position}")


@dataclass
class AtomRecord:
    element: str
    degree: int = 0
    formal_charge: int = 0
    aromatic: bool = False
    hybridization: Hybridization = Hybridization.SP3
    bracket: bool = False


@dataclass
class BondRecord:
    order: BondOrder
    in_ring: bool = False


@dataclass
class MolecularGraph:
    atoms: list
    bonds: list  # (u, v, BondRecord)
    smiles: str = ""
    node_features: np.ndarray | None = None
    edge_features: np.ndarray | None = None

    @property
    def num_atoms(self):
        return len(self.atoms)

    @property
    def num_bonds(self):
        return len(self.bonds)

    def bond_index_array(self):
        return np.array([(u, v) for u, v, _ in self.bonds], dtype=np.int64).reshape(-1, 2)

    def neighbors(self):
        adj = [[] for _ in self.atoms]
        for u, v, _ in self.bonds:
            adj[u].append(v)
            adj[v].append(u)
        return adj


# -- parsing --------------------------------------------------------------
_BOND_SYMBOLS = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE, "#": BondOrder.TRIPLE,
                 ":": BondOrder.AROMATIC}


class _Parser:
    def __init__(self, text):
        self.text = text
        self.pos = 0
        self.atoms = []
        self.bonds = {}  # frozenset(u, v) -> [u, v, order or None]
        self.bond_order = []  # insertion order of bond keys
        self.rings = {}  # ring number -> (atom, explicit order, position)

    def error(self, msg, pos=None):
        raise SmilesError(msg, self.pos if pos is None else pos)

    def parse(self):
        text = self.text
        if not text:
            raise SmilesError("empty SMILES", 0)
        prev = None
        pending_bond = None
        branch_stack = []
        while self.pos < len(text):
            ch = text[self.pos]
            start = self.pos
            if ch == "(":
                if prev is None:
                    self.error("branch before any atom")
                if pending_bond is not None:
                    self.error("bond symbol before branch")
                branch_stack.append((prev, start))
                self.pos += 1
            elif ch == ")":
                if not branch_stack:
                    self.error("unbalanced ')'")
                if pending_bond is not None:
                    self.error("dangling bond symbol")
                prev, _ = branch_stack.pop()
                self.pos += 1
            elif ch in _BOND_SYMBOLS or ch in "/\\":
                if pending_bond is not None:
                    self.error("two consecutive bond symbols")
                pending_bond = _BOND_SYMBOLS.get(ch, BondOrder.SINGLE)
                self.pos += 1
            elif ch == ".":
                self.error("multi-fragment input ('.') is not supported")
            elif ch.isdigit() or ch == "%":
                if prev is None:
                    self.error("ring closure before any atom")
                if ch == "%":
                    num_text = text[self.pos + 1:self.pos + 3]
                    if len(num_text) != 2 or not num_text.isdigit():
                        self.error("'%' must be followed by two digits")
                    num = int(num_text)
                    self.pos += 3
                else:
                    num = int(ch)
                    self.pos += 1
                self._ring(prev, num, pending_bond, start)
                pending_bond = None
            else:
                idx = self._atom()
                if prev is not None:
                    self._add_bond(prev, idx, pending_bond, start)
                elif pending_bond is not None:
                    self.error("bond symbol before the first atom", start)
                pending_bond = None
                prev = idx
        if pending_bond is not None:
            self.error("dangling bond symbol at end of input")
        if branch_stack:
            self.error("unbalanced '('", branch_stack[-1][1])
        if self.rings:
            num, (_, _, pos) = next(iter(self.rings.items()))
            self.error(f"unmatched ring-closure {num}", pos)
        return self._finish()

    def _atom(self):
        text, start = self.text, self.pos
        if text[start] == "[":
            return self._bracket_atom()
        two = text[start:start + 2]
        if two in ("Cl", "Br"):
            self.pos += 2
            return self._new_atom(two, False, 0, False)
        ch = text[start]
        if ch in ELEMENTS:
            self.pos += 1
            return self._new_atom(ch, False, 0, False)
        if ch in AROMATIC_ELEMENTS:
            self.pos += 1
            return self._new_atom(AROMATIC_ELEMENTS[ch], True, 0, False)
        if ch == "@":
            self.error("stereo mark outside a bracket atom")
        self.error(f"unknown atom symbol {ch!r}")

    def _bracket_atom(self):
        text, start = self.text, self.pos
        end = text.find("]", start)
        if end < 0:
            self.error("unterminated bracket atom")
        body = text[start + 1:end]
        i = 0
        while i < len(body) and body[i].isdigit():  # isotope, ignored
            i += 1
        aromatic = False
        sym = None
        for cand in (body[i:i + 2], body[i:i + 1]):
            if not cand:
                continue
            if cand in ELEMENTS or cand in _BRACKET_ONLY:
                sym = cand
            elif cand in AROMATIC_ELEMENTS:
                sym, aromatic = AROMATIC_ELEMENTS[cand], True
            elif cand in _BRACKET_AROMATIC:
                sym, aromatic = _BRACKET_AROMATIC[cand], True
            if sym is not None:
                i += len(cand)
                break
        if sym is None:
            self.error(f"unknown atom symbol in bracket {body!r}", start)
        while i < len(body) and body[i] == "@":
            i += 1
        if i < len(body) and body[i] == "H":
            i += 1
            while i < len(body) and body[i].isdigit():
                i += 1
        charge = 0
        if i < len(body) and body[i] in "+-":
            sign = 1 if body[i] == "+" else -1
            j = i + 1
            if j < len(body) and body[j].isdigit():
                k = j
                while k < len(body) and body[k].isdigit():
                    k += 1
                charge = sign * int(body[j:k])
                i = k
            else:
                count = 1
                while j < len(body) and body[j] == body[i]:
                    count += 1
                    j += 1
                charge = sign * count
                i = j
        if i < len(body) and body[i] == ":":  # atom class
            i += 1
            while i < len(body) and body[i].isdigit():
                i += 1
        if i != len(body):
            self.error(f"unparsed bracket content {body[i:]!r}", start + 1 + i)
        self.pos = end + 1
        return self._new_atom(sym, aromatic, charge, True)

    def _new_atom(self, element, aromatic, charge, bracket):
        self.atoms.append(AtomRecord(element, 0, charge, aromatic, Hybridization.SP3, bracket))
        return len(self.atoms) - 1

    def _ring(self, atom, num, order, pos):
        if num in self.rings:
            other, other_order, other_pos = self.rings.pop(num)
            if order is not None and other_order is not None and order != other_order:
                self.error(f"conflicting bond orders on ring closure {num}", pos)
            self._add_bond(other, atom, order or other_order, pos)
        else:
            self.rings[num] = (atom, order, pos)

    def _add_bond(self, u, v, order, pos):
        if u == v:
            self.error("bond from an atom to itself", pos)
        key = frozenset((u, v))
        if key in self.bonds:
            self.error("duplicate bond between the same atoms", pos)
        self.bonds[key] = [u, v, order]
        self.bond_order.append(key)

    def _finish(self):
        atoms = self.atoms
        bonds = []
        for key in self.bond_order:
            u, v, order = self.bonds[key]
            if order is None:
                order = (
                    BondOrder.AROMATIC
                    if atoms[u].aromatic and atoms[v].aromatic
                    else BondOrder.SINGLE
                )
            bonds.append((u, v, BondRecord(order)))
        if not _is_connected(len(atoms), [(u, v) for u, v, _ in bonds]):
            raise SmilesError("input describes more than one fragment", len(self.text))
        bridges = find_bridges(len(atoms), [(u, v) for u, v, _ in bonds])
        for b, (u, v, rec) in enumerate(bonds):
            rec.in_ring = b not in bridges
            if rec.order is BondOrder.AROMATIC and not rec.in_ring:
                # implicit aromatic-aromatic link between two rings
                rec.order = BondOrder.SINGLE
        for u, v, rec in bonds:
            atoms[u].degree += 1
            atoms[v].degree += 1
        ring_atoms = {a for u, v, rec in bonds if rec.in_ring for a in (u, v)}
        for i, atom in enumerate(atoms):
            if atom.aromatic and i not in ring_atoms:
                raise SmilesError(f"aromatic atom {i} is not in a ring", len(self.text))
        for u, v, rec in bonds:
            if rec.order is BondOrder.AROMATIC and not (atoms[u].aromatic and atoms[v].aromatic):
                raise SmilesError(
                    f"aromatic bond {u}-{v} joins a non-aromatic atom", len(self.text)
                )
        _assign_hybridization(atoms, bonds)
        return MolecularGraph(atoms, bonds, self.text)


def _is_connected(n, edges):
    if n == 0:
        return False
    adj = [[] for _ in range(n)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    seen = {0}
    stack = [0]
    while stack:
        for w in adj[stack.pop()]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == n


def find_bridges(n, edges):
    """Indices of edges whose removal disconnects their component (iterative Tarjan)."""
    adj = [[] for _ in range(n)]
    for i, (u, v) in enumerate(edges):
        adj[u].append((v, i))
        adj[v].append((u, i))
    disc = [-1] * n
    low = [0] * n
    bridges = set()
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = timer
        timer += 1
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            node, parent_edge, it = stack[-1]
            advanced = False
            for nxt, ei in it:
                if ei == parent_edge:
                    continue
                if disc[nxt] == -1:
                    disc[nxt] = low[nxt] = timer
                    timer += 1
                    stack.append((nxt, ei, iter(adj[nxt])))
                    advanced = True
                    break
                low[node] = min(low[node], disc[nxt])
            if advanced:
                continue
            stack.pop()
            if stack:
                par = stack[-1][0]
                low[par] = min(low[par], low[node])
                if low[node] > disc[par]:
                    bridges.add(parent_edge)
    return bridges


def _assign_hybridization(atoms, bonds):
    doubles = [0] * len(atoms)
    triples = [0] * len(atoms)
    for u, v, rec in bonds:
        if rec.order is BondOrder.DOUBLE:
            doubles[u] += 1
            doubles[v] += 1
        elif rec.order is BondOrder.TRIPLE:
            triples[u] += 1
            triples[v] += 1
    for i, atom in enumerate(atoms):
        if atom.bracket and atom.element not in ELEMENTS:
            atom.hybridization = Hybridization.OTHER
        elif triples[i] or doubles[i] >= 2:
            atom.hybridization = Hybridization.SP
        elif atom.aromatic or doubles[i] == 1:
            atom.hybridization = Hybridization.SP2
        else:
            atom.hybridization = Hybridization.SP3


def parse_smiles(text):
    """Parse ``text`` into a MolecularGraph; raises SmilesError with a position."""
    if not isinstance(text, str) or not text.isascii():
        raise SmilesError("SMILES must be a non-empty ASCII string", 0)
    return _Parser(text.strip()).parse()


# -- featurization --------------------------------------------------------
def _one_hot(value, choices):
    v = np.zeros(len(choices))
    v[choices.index(value)] = 1.0
    return v


def atom_features(atom):
    element = atom.element if atom.element in ELEMENTS else "other"
    degree = min(max(atom.degree, DEGREE_RANGE[0]), DEGREE_RANGE[-1])
    charge = min(max(atom.formal_charge, CHARGE_RANGE[0]), CHARGE_RANGE[-1])
    return np.concatenate([
        _one_hot(element, ELEMENTS + ("other",)),
        _one_hot(degree, list(DEGREE_RANGE)),
        _one_hot(charge, list(CHARGE_RANGE)),
        _one_hot(atom.hybridization, HYBRIDIZATIONS),
        [1.0 if atom.aromatic else 0.0],
    ])


def bond_features(bond):
    return np.concatenate([_one_hot(bond.order, BOND_ORDERS), [1.0 if bond.in_ring else 0.0]])


def featurize_graph(g):
    node = np.stack([atom_features(a) for a in g.atoms]).reshape(-1, NODE_FEATURE_DIM)
    edge = np.array([bond_features(b) for _, _, b in g.bonds]).reshape(-1, EDGE_FEATURE_DIM)
    return replace(g, node_features=node, edge_features=edge)


def featurize_smiles(text):
    return featurize_graph(parse_smiles(text))


def relabel_atoms(g, perm):
    """Graph with atom ``i`` moved to position ``perm[i]`` (bond order kept)."""
    perm = list(perm)
    inv = [0] * len(perm)
    for old, new in enumerate(perm):
        inv[new] = old
    atoms = [replace(g.atoms[inv[k]]) for k in range(len(perm))]
    bonds = [(perm[u], perm[v], replace(rec)) for u, v, rec in g.bonds]
    out = MolecularGraph(atoms, bonds, g.smiles)
    if g.node_features is not None:
        out = replace(out, node_features=g.node_features[inv], edge_features=g.edge_features)
    return out


def has_carbonyl(g):
    """True when some carbon carries a double bond to oxygen."""
    for u, v, rec in g.bonds:
        if rec.order is BondOrder.DOUBLE and {g.atoms[u].element, g.atoms[v].element} == {"C", "O"}:
            return True
    return False
