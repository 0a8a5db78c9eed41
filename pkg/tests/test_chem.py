import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpnp_ddi.chem import (EDGE_FEATURE_DIM, EDGE_ONE_HOT_BLOCKS, ELEMENTS, NODE_FEATURE_DIM,
                           NODE_ONE_HOT_BLOCKS, BondOrder, Hybridization, SmilesError,
                           featurize_smiles, find_bridges, has_carbonyl, parse_smiles)
from mpnp_ddi.data import random_molecule_smiles

Chem = pytest.importorskip("rdkit.Chem")

ASPIRIN = "CC(=O)Oc1ccccc1C(=O)O"
REFERENCE_SET = [
    "C", "CC", "c1ccccc1", ASPIRIN, "CC[O-]", "C[N+](C)(C)C", "OC(=O)C1CCCCC1",
    "c1ccc2ccccc2c1", "C1CC1C#N", "O=C=O", "c1ccncc1", "CCOC(=O)C=C", "C%10CCCC%10",
    "ClC(Br)(I)F", "c1ccsc1", "CC(C)(C)c1ccc(O)cc1",
]


def rdkit_summary(smiles):
    mol = Chem.MolFromSmiles(smiles)
    atoms = [(a.GetSymbol(), a.GetDegree(), a.GetFormalCharge(), a.GetIsAromatic())
             for a in mol.GetAtoms()]
    bonds = sorted(
        (tuple(sorted((b.GetBeginAtomIdx(), b.GetEndAtomIdx()))), b.IsInRing())
        for b in mol.GetBonds()
    )
    return atoms, bonds


def our_summary(smiles):
    g = parse_smiles(smiles)
    atoms = [(a.element, a.degree, a.formal_charge, a.aromatic) for a in g.atoms]
    bonds = sorted((tuple(sorted((u, v))), rec.in_ring) for u, v, rec in g.bonds)
    return atoms, bonds


def ring_bonds_by_cycle_search(g):
    """Bond (u, v) is on a simple cycle iff some simple path joins u and v without it."""
    adj = g.neighbors()
    flags = []
    for u, v, _ in g.bonds:
        stack, seen, found = [u], {u}, False
        while stack and not found:
            a = stack.pop()
            for b in adj[a]:
                if {a, b} == {u, v}:
                    continue
                if b == v:
                    found = True
                    break
                if b not in seen:
                    seen.add(b)
                    stack.append(b)
        flags.append(found)
    return flags


class TestAgainstRDKit:
    @pytest.mark.parametrize("smiles", REFERENCE_SET)
    def test_reference_molecules(self, smiles):
        assert our_summary(smiles) == rdkit_summary(smiles)

    def test_benzene(self):
        g = parse_smiles("c1ccccc1")
        assert g.num_atoms == 6 and g.num_bonds == 6
        assert all(a.aromatic for a in g.atoms)
        assert all(rec.order is BondOrder.AROMATIC and rec.in_ring for _, _, rec in g.bonds)
        assert our_summary("c1ccccc1") == rdkit_summary("c1ccccc1")

    def test_aspirin_counts(self):
        g = parse_smiles(ASPIRIN)
        mol = Chem.MolFromSmiles(ASPIRIN)
        assert (g.num_atoms, g.num_bonds) == (13, 13)
        assert (g.num_atoms, g.num_bonds) == (mol.GetNumAtoms(), mol.GetNumBonds())

    def test_random_molecules(self):
        rng = np.random.default_rng(7)
        for _ in range(60):
            smi = random_molecule_smiles(rng, max_atoms=12)
            assert our_summary(smi) == rdkit_summary(smi), smi


class TestParser:
    def test_single_atom(self):
        g = parse_smiles("C")
        assert g.num_atoms == 1 and g.num_bonds == 0

    def test_ethane(self):
        g = parse_smiles("CC")
        assert g.num_bonds == 1
        assert g.bonds[0][2].order is BondOrder.SINGLE
        assert [a.degree for a in g.atoms] == [1, 1]

    def test_explicit_bond_symbols(self):
        g = parse_smiles("C=C#N")
        assert [rec.order for _, _, rec in g.bonds] == [BondOrder.DOUBLE, BondOrder.TRIPLE]

    def test_bracket_charges(self):
        assert parse_smiles("[O-]").atoms[0].formal_charge == -1
        assert parse_smiles("[NH4+]").atoms[0].formal_charge == 1
        assert parse_smiles("[O-2]").atoms[0].formal_charge == -2
        assert parse_smiles("[Fe++]").atoms[0].formal_charge == 2

    def test_stereo_tokens_ignored(self):
        plain = our_summary("FC=CF")
        assert our_summary("F/C=C/F") == plain
        assert our_summary("N[C@@H](C)C(=O)O") == our_summary("NC(C)C(=O)O")

    def test_two_digit_ring_closure(self):
        g = parse_smiles("C%12CC%12")
        assert g.num_bonds == 3 and all(rec.in_ring for _, _, rec in g.bonds)

    @pytest.mark.parametrize("bad, pos", [
        ("C(C", 1), ("CC)", 2), ("C1CC", 1), ("CXC", 1), ("CC.O", 2), ("", 0),
    ])
    def test_errors_carry_positions(self, bad, pos):
        with pytest.raises(SmilesError) as err:
            parse_smiles(bad)
        assert err.value.position == pos

    def test_unknown_bracket_symbol(self):
        with pytest.raises(SmilesError):
            parse_smiles("[Xx]")

    def test_aromatic_outside_ring_rejected(self):
        with pytest.raises(SmilesError):
            parse_smiles("cc")

    def test_hybridization_rule(self):
        g = parse_smiles("C#CC=CC")
        hyb = [a.hybridization for a in g.atoms]
        assert hyb == [Hybridization.SP, Hybridization.SP, Hybridization.SP2, Hybridization.SP2,
                       Hybridization.SP3]
        assert parse_smiles("O=C=O").atoms[1].hybridization is Hybridization.SP
        assert parse_smiles("c1ccccc1").atoms[0].hybridization is Hybridization.SP2
        assert parse_smiles("[Se]").atoms[0].hybridization is Hybridization.OTHER

    def test_reparse_is_identical(self):
        assert parse_smiles(ASPIRIN) == parse_smiles(ASPIRIN)


class TestFeatures:
    def test_dimensions(self):
        g = featurize_smiles(ASPIRIN)
        assert g.node_features.shape == (13, NODE_FEATURE_DIM)
        assert g.edge_features.shape == (13, EDGE_FEATURE_DIM)

    def test_methane_carbon(self):
        x = featurize_smiles("C").node_features[0]
        expected = np.zeros(NODE_FEATURE_DIM)
        expected[ELEMENTS.index("C")] = 1  # element
        expected[11 + 0] = 1  # degree 0
        expected[17 + 2] = 1  # charge 0 sits at the middle of -2..+2
        expected[22 + 2] = 1  # sp3
        np.testing.assert_array_equal(x, expected)

    def test_benzene_bond(self):
        e = featurize_smiles("c1ccccc1").edge_features[0]
        np.testing.assert_array_equal(e, [0, 0, 0, 1, 1])

    def test_oxide_charge(self):
        x = featurize_smiles("[O-]").node_features[0]
        np.testing.assert_array_equal(x[17:22], [0, 1, 0, 0, 0])

    def test_charge_and_degree_clipped(self):
        x = featurize_smiles("[N-3]").node_features[0]
        assert x[17] == 1  # clipped to -2
        g = featurize_smiles("CS(C)(C)(C)(C)(C)C")  # sulfur of degree 7 (not a valence check)
        assert g.node_features[1, 16] == 1

    def test_other_element_slot(self):
        assert featurize_smiles("[Se]").node_features[0, 10] == 1

    def test_carbonyl_detection(self):
        assert has_carbonyl(parse_smiles("CC=O"))
        assert not has_carbonyl(parse_smiles("CCO"))
        assert not has_carbonyl(parse_smiles("C=C"))


def test_find_bridges_cycle_with_tail():
    edges = [(0, 1), (1, 2), (2, 0), (2, 3)]
    assert find_bridges(4, edges) == {3}


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_invariants_on_random_molecules(seed):
    smi = random_molecule_smiles(np.random.default_rng(seed), max_atoms=12)
    g = featurize_smiles(smi)
    # degree sum
    assert sum(a.degree for a in g.atoms) == 2 * g.num_bonds
    # ring flags agree with the cycle search
    assert [rec.in_ring for _, _, rec in g.bonds] == ring_bonds_by_cycle_search(g)
    # aromatic atoms only inside rings
    ring_atoms = {x for u, v, rec in g.bonds if rec.in_ring for x in (u, v)}
    assert all(i in ring_atoms for i, a in enumerate(g.atoms) if a.aromatic)
    # one-hot blocks
    for feats, blocks in ((g.node_features, NODE_ONE_HOT_BLOCKS),
                          (g.edge_features, EDGE_ONE_HOT_BLOCKS)):
        assert set(np.unique(feats)) <= {0.0, 1.0}
        for lo, hi in blocks:
            np.testing.assert_array_equal(feats[:, lo:hi].sum(axis=1), 1.0)
