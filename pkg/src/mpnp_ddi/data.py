"""Delimited-text dataset ingestion and synthetic molecule corpora."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path


from .chem import BondOrder, SmilesError, featurize_graph, has_carbonyl, parse_smiles
from .objective import Example

log = logging.getLogger(__name__)

DRUG_COLUMNS = ("drug_id", "smiles")
PAIR_COLUMNS = ("drug_id_1", "drug_id_2", "relation_id", "label")


class DatasetError(ValueError):
    pass


@dataclass
class DatasetBundle:
    drugs: dict  # drug_id -> SMILES, in file order
    graphs: dict  # drug_id -> featurized MolecularGraph
    pairs: list  # (drug_id_1, drug_id_2, relation_id, label), in file order
    num_relations: int
    dropped_drugs: dict = field(default_factory=dict)  # drug_id -> error message
    dropped_pairs: int = 0

    def examples(self, pairs=None):
        return [
            Example(self.graphs[a], self.graphs[b], r, y)
            for a, b, r, y in (self.pairs if pairs is None else pairs)
        ]


def _read_table(path, required):
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise DatasetError(f"{path}: empty file")
    delimiter = "\t" if "\t" in lines[0] else ","
    reader = csv.reader(lines, delimiter=delimiter)
    header = [h.strip() for h in next(reader)]
    missing = [c for c in required if c not in header]
    if missing:
        raise DatasetError(f"{path}: missing column(s) {missing}")
    cols = [header.index(c) for c in required]
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) < len(header):
            raise DatasetError(f"{path}: row {lineno} has {len(row)} fields, need {len(header)}")
        rows.append((lineno, [row[c].strip() for c in cols]))
    return rows


def load_drugs(drugs_path):
    """(drug_id -> SMILES, drug_id -> graph, drug_id -> error) for a drug table."""
    drugs, graphs, dropped = {}, {}, {}
    for lineno, (drug_id, smiles) in _read_table(drugs_path, DRUG_COLUMNS):
        if drug_id in drugs or drug_id in dropped:
            raise DatasetError(f"{drugs_path}: duplicate drug_id {drug_id!r} at row {lineno}")
        try:
            graphs[drug_id] = featurize_graph(parse_smiles(smiles))
            drugs[drug_id] = smiles
        except SmilesError as exc:
            dropped[drug_id] = f"row {lineno}: {exc}"
    if dropped:
        log.warning("dropped %d drug(s) with unparseable SMILES", len(dropped))
    return drugs, graphs, dropped


def load_dataset(drugs_path, pairs_path):
    drugs, graphs, dropped = load_drugs(drugs_path)

    pairs, dropped_pairs = [], 0
    for lineno, (a, b, rel, label) in _read_table(pairs_path, PAIR_COLUMNS):
        for d in (a, b):
            if d not in drugs and d not in dropped:
                raise DatasetError(f"{pairs_path}: row {lineno} references unknown drug {d!r}")
        try:
            rel_i, label_i = int(rel), int(label)
        except ValueError:
            raise DatasetError(f"{pairs_path}: row {lineno} has non-integer fields") from None
        if rel_i < 0:
            raise DatasetError(f"{pairs_path}: row {lineno} has negative relation_id")
        if label_i not in (0, 1):
            raise DatasetError(f"{pairs_path}: row {lineno} label must be 0 or 1")
        if a in dropped or b in dropped:
            dropped_pairs += 1
            continue
        pairs.append((a, b, rel_i, label_i))
    if not pairs:
        raise DatasetError(f"{pairs_path}: no usable pairs")
    num_relations = max(p[2] for p in pairs) + 1
    return DatasetBundle(drugs, graphs, pairs, num_relations, dropped, dropped_pairs)


def write_dataset(bundle_drugs, pairs, drugs_path, pairs_path, delimiter="\t"):
    """Write drug and pair tables (used by the split command and fixtures)."""
    with open(drugs_path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(DRUG_COLUMNS)
        for drug_id, smiles in bundle_drugs.items():
            w.writerow((drug_id, smiles))
    with open(pairs_path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(PAIR_COLUMNS)
        for row in pairs:
            w.writerow(row)


# -- synthetic molecules ---------------------------------------------------
_VALENCE = {"C": 4, "N": 3, "O": 2, "S": 2, "F": 1, "Cl": 1}
_ORDER_VALUE = {BondOrder.SINGLE: 1, BondOrder.DOUBLE: 2, BondOrder.TRIPLE: 3,
                BondOrder.AROMATIC: 1.5}


def random_molecule_smiles(rng, min_atoms=3, max_atoms=10, carbonyl=None, ring_prob=0.3,
                           aromatic_prob=0.2):
    """SMILES of a random connected heavy-atom molecule.

    ``carbonyl`` forces (True) or forbids (False) a C=O group; None leaves it
    to chance.
    """
    if carbonyl is None:
        carbonyl = bool(rng.random() < 0.5)
    while True:
        smiles = _random_skeleton(rng, min_atoms, max_atoms, carbonyl, ring_prob, aromatic_prob)
        if smiles is not None:
            return smiles


def _random_skeleton(rng, min_atoms, max_atoms, carbonyl, ring_prob, aromatic_prob):
    """One generation attempt; None when the skeleton has no room for a C=O."""
    elements, aromatic, bonds = [], [], {}

    def used(a):
        return sum(_ORDER_VALUE[o] for (u, v), o in bonds.items() if a in (u, v))

    def free(a):
        return _VALENCE[elements[a]] - used(a)

    def add_atom(el, arom=False):
        elements.append(el)
        aromatic.append(arom)
        return len(elements) - 1

    n_target = int(rng.integers(min_atoms, max_atoms + 1))
    budget = n_target - (1 if carbonyl else 0)
    use_ring = budget >= 7 and rng.random() < aromatic_prob
    if use_ring:
        ring = [add_atom("C", True) for _ in range(6)]
        for k in range(6):
            bonds[(ring[k], ring[(k + 1) % 6])] = BondOrder.AROMATIC
    else:
        add_atom("C")
    choices = ["C", "C", "C", "C", "N", "O", "S", "F", "Cl"]
    while len(elements) < budget:
        el = choices[int(rng.integers(len(choices)))]
        cand = [a for a in range(len(elements)) if free(a) >= 1 and elements[a] != "F"
                and elements[a] != "Cl"]
        if not cand:
            break
        parent = cand[int(rng.integers(len(cand)))]
        child = add_atom(el)
        bonds[(parent, child)] = BondOrder.SINGLE
    if carbonyl:
        cand = [a for a in range(len(elements))
                if elements[a] == "C" and not aromatic[a] and free(a) >= 2]
        if not cand:
            parent = add_atom("C")
            anchor = [a for a in range(len(elements) - 1) if free(a) >= 1 and
                      elements[a] not in ("F", "Cl")]
            if not anchor:
                return None
            bonds[(anchor[int(rng.integers(len(anchor)))], parent)] = BondOrder.SINGLE
            cand = [parent]
        c = cand[int(rng.integers(len(cand)))]
        o = add_atom("O")
        bonds[(c, o)] = BondOrder.DOUBLE
    if not use_ring and len(elements) >= 4 and rng.random() < ring_prob:
        adj = _adjacency(len(elements), bonds)
        pairs = [(a, b) for a in range(len(elements)) for b in range(a + 1, len(elements))
                 if free(a) >= 1 and free(b) >= 1 and elements[a] not in ("F", "Cl")
                 and elements[b] not in ("F", "Cl") and 3 <= _distance(adj, a, b) + 1 <= 7]
        if pairs:
            a, b = pairs[int(rng.integers(len(pairs)))]
            bonds[(a, b)] = BondOrder.SINGLE
    if rng.random() < 0.3:
        cc = [(u, v) for (u, v), o in bonds.items() if o is BondOrder.SINGLE
              and elements[u] in ("C", "N") and elements[v] == "C"
              and free(u) >= 1 and free(v) >= 1]
        if cc:
            bonds[cc[int(rng.integers(len(cc)))]] = BondOrder.DOUBLE
    return write_smiles(elements, aromatic, bonds)


def _adjacency(n, bonds):
    adj = [[] for _ in range(n)]
    for u, v in bonds:
        adj[u].append(v)
        adj[v].append(u)
    return adj


def _distance(adj, a, b):
    frontier, seen, dist = [a], {a}, 0
    while frontier:
        if b in frontier:
            return dist
        nxt = []
        for x in frontier:
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    nxt.append(y)
        frontier, dist = nxt, dist + 1
    return -1


def write_smiles(elements, aromatic, bonds):
    """Depth-first SMILES writer for a connected graph given as a bond dict."""
    n = len(elements)
    adj = _adjacency(n, bonds)
    order = {}
    for (u, v), o in bonds.items():
        order[(u, v)] = order[(v, u)] = o

    def sym(a):
        return elements[a].lower() if aromatic[a] else elements[a]

    def bond_sym(u, v):
        o = order[(u, v)]
        if o is BondOrder.DOUBLE:
            return "="
        if o is BondOrder.TRIPLE:
            return "#"
        if o is BondOrder.SINGLE and aromatic[u] and aromatic[v]:
            return "-"
        return ""

    # spanning tree by DFS, remaining edges become ring closures
    visited, parent, tree_children = [False] * n, [-1] * n, [[] for _ in range(n)]
    stack = [0]
    visit_order = []
    while stack:
        a = stack.pop()
        if visited[a]:
            continue
        visited[a] = True
        visit_order.append(a)
        for b in sorted(adj[a], reverse=True):
            if not visited[b]:
                parent[b] = a
                stack.append(b)
    for a in range(n):
        if parent[a] >= 0:
            tree_children[parent[a]].append(a)
    tree_edges = {frozenset((a, parent[a])) for a in range(n) if parent[a] >= 0}
    ring_edges = [tuple(sorted(e)) for e in (frozenset(k) for k in bonds) if e not in tree_edges]
    closures = {a: [] for a in range(n)}
    for num, (u, v) in enumerate(sorted(ring_edges), start=1):
        closures[u].append((num, v))
        closures[v].append((num, u))

    out = []
    opened = set()

    def emit(a):
        out.append(sym(a))
        for num, other in closures[a]:
            if num in opened:
                out.append(f"%{num:02d}" if num > 9 else str(num))
            else:
                opened.add(num)
                out.append(bond_sym(a, other) + (f"%{num:02d}" if num > 9 else str(num)))
        kids = tree_children[a]
        for i, c in enumerate(kids):
            branch = i < len(kids) - 1
            if branch:
                out.append("(")
            out.append(bond_sym(a, c))
            emit(c)
            if branch:
                out.append(")")

    emit(0)
    return "".join(out)


def random_molecules(rng, count, **kwargs):
    """``count`` distinct random SMILES (carbonyl presence chosen per molecule)."""
    seen, out = set(), []
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > 100 * count:
            raise RuntimeError("could not generate enough distinct molecules")
        smi = random_molecule_smiles(rng, **kwargs)
        if smi not in seen:
            seen.add(smi)
            out.append(smi)
    return out


def carbonyl_rule_corpus(rng, num_molecules=200, num_pairs=None, max_atoms=10):
    """Drugs plus pairs labelled 1 iff both molecules contain C=O (single relation)."""
    smiles = random_molecules(rng, num_molecules, max_atoms=max_atoms)
    drugs = {f"D{k:04d}": s for k, s in enumerate(smiles)}
    graphs = {k: featurize_graph(parse_smiles(s)) for k, s in drugs.items()}
    flags = {k: has_carbonyl(g) for k, g in graphs.items()}
    ids = list(drugs)
    num_pairs = num_pairs or 4 * num_molecules
    seen, pairs = set(), []
    while len(pairs) < num_pairs:
        a, b = rng.choice(len(ids), size=2, replace=False)
        key = (ids[a], ids[b])
        if key in seen:
            continue
        seen.add(key)
        pairs.append((ids[a], ids[b], 0, int(flags[ids[a]] and flags[ids[b]])))
    return DatasetBundle(drugs, graphs, pairs, 1)


def relation_rule_corpus(rng, num_molecules=120, num_pairs=400, max_atoms=10):
    """Four relation types where the pair's carbonyl pattern fixes the true relation.

    The true relation of (a, b) is ``2 * carbonyl(a) + carbonyl(b)``. Every
    pair appears once with its true relation (label 1) and once with a random
    wrong relation (label 0), so the label is only recoverable through the
    relation id.
    """
    smiles = random_molecules(rng, num_molecules, max_atoms=max_atoms)
    drugs = {f"D{k:04d}": s for k, s in enumerate(smiles)}
    graphs = {k: featurize_graph(parse_smiles(s)) for k, s in drugs.items()}
    flags = {k: int(has_carbonyl(g)) for k, g in graphs.items()}
    ids = list(drugs)
    seen, pairs = set(), []
    while len(seen) < num_pairs:
        a, b = rng.choice(len(ids), size=2, replace=False)
        key = (ids[a], ids[b])
        if key in seen:
            continue
        seen.add(key)
        true_rel = 2 * flags[key[0]] + flags[key[1]]
        wrong = int((true_rel + rng.integers(1, 4)) % 4)
        pairs.append((key[0], key[1], true_rel, 1))
        pairs.append((key[0], key[1], wrong, 0))
    return DatasetBundle(drugs, graphs, pairs, 4)
