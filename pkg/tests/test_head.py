import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpnp_ddi import autodiff as ad
from mpnp_ddi.autodiff import Tensor
from mpnp_ddi.chem import featurize_smiles
from mpnp_ddi.config import TrainConfig
from mpnp_ddi.gradcheck import full_loss_check
from mpnp_ddi.head import CoAttention, RelationSet, UncertaintyHead, co_attention, rescal_score, \
    uncertainty_head
from mpnp_ddi.model import MPNPModel, forward_pair


def stack(rng, P=2, K=3, d=4):
    return Tensor(rng.normal(size=(P, K, d)))


class TestCoAttention:
    def test_single_scale(self):
        rng = np.random.default_rng(0)
        h_i, h_j = stack(rng, K=1), stack(rng, K=1)
        fi, fj, ai, aj, _ = co_attention(h_i, h_j, CoAttention(rng, 4))
        np.testing.assert_array_equal(ai.data, 1.0)
        np.testing.assert_array_equal(aj.data, 1.0)
        np.testing.assert_allclose(fi.data, h_i.data[:, 0])

    def test_zero_weight_is_uniform(self):
        rng = np.random.default_rng(1)
        params = CoAttention(rng, 4)
        params.weight.data[...] = 0.0
        h_i, h_j = stack(rng), stack(rng)
        fi, _, ai, aj, A = co_attention(h_i, h_j, params)
        np.testing.assert_array_equal(A.data, 0.0)
        np.testing.assert_allclose(ai.data, 1 / 3)
        np.testing.assert_allclose(fi.data, h_i.data.mean(axis=1))

    def test_identical_scales(self):
        rng = np.random.default_rng(2)
        v = rng.normal(size=4)
        h_i = Tensor(np.stack([[v, v]]))
        _, _, ai, _, _ = co_attention(h_i, stack(rng, P=1, K=2), CoAttention(rng, 4))
        np.testing.assert_allclose(ai.data, [[0.5, 0.5]])

    def test_affinity_definition(self):
        rng = np.random.default_rng(3)
        params = CoAttention(rng, 4)
        h_i, h_j = stack(rng), stack(rng)
        _, _, ai, aj, A = co_attention(h_i, h_j, params)
        expected = np.einsum("pkd,de,ple->pkl", h_i.data, params.weight.data, h_j.data)
        np.testing.assert_allclose(A.data, expected)
        row = expected.mean(axis=2)
        np.testing.assert_allclose(ai.data, np.exp(row) / np.exp(row).sum(1, keepdims=True))

    def test_scale_mismatch(self):
        rng = np.random.default_rng(4)
        with pytest.raises(ad.ShapeError):
            co_attention(stack(rng, K=2), stack(rng, K=3), CoAttention(rng, 4))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 20.0))
def test_attention_weights_and_hull(seed, c):
    rng = np.random.default_rng(seed)
    params = CoAttention(rng, 4)
    h_i, h_j = stack(rng), stack(rng)
    fi, fj, ai, aj, _ = co_attention(h_i, h_j, params)
    params.weight.data *= c
    fi_c, _, ai_c, _, _ = co_attention(h_i, h_j, params)
    for a in (ai.data, aj.data, ai_c.data):
        assert np.all(a >= 0)
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-6)
    for f, h in ((fi.data, h_i.data), (fj.data, h_j.data), (fi_c.data, h_i.data)):
        assert np.all(f >= h.min(axis=1) - 1e-12) and np.all(f <= h.max(axis=1) + 1e-12)
    assert np.array_equal(np.argmax(ai.data, axis=1), np.argmax(ai_c.data, axis=1))


class TestRescal:
    def relations(self, mats):
        rel = RelationSet(np.random.default_rng(0), len(mats), 2)
        rel.matrices.data[...] = np.array(mats, dtype=float)
        return rel

    def test_examples(self):
        hi, hj = Tensor([[1.0, 0.0]]), Tensor([[0.0, 1.0]])
        assert rescal_score(hi, hj, [0], self.relations([np.eye(2)])).item() == 0.0
        assert rescal_score(hi, hj, [0], self.relations([[[0, 1], [0, 0]]])).item() == 1.0
        v = Tensor([[3.0, -4.0]])
        assert rescal_score(v, v, [0], self.relations([np.eye(2)])).item() == 25.0

    def test_relation_selection(self):
        rel = self.relations([np.eye(2), 2 * np.eye(2)])
        v = Tensor([[1.0, 1.0], [1.0, 1.0]])
        np.testing.assert_array_equal(rescal_score(v, v, [0, 1], rel).data, [2.0, 4.0])

    def test_unknown_relation(self):
        with pytest.raises(ValueError, match="unknown relation"):
            rescal_score(Tensor([[1.0, 0.0]]), Tensor([[1.0, 0.0]]), [3],
                         self.relations([np.eye(2)]))


class TestUncertaintyHead:
    def test_zero_weights(self):
        head = UncertaintyHead(np.random.default_rng(0), 4, 2)
        for p in head.parameters():
            p.data[...] = 0.0
        s = uncertainty_head(Tensor(np.ones((3, 2))), Tensor(np.ones((3, 2))), head)
        np.testing.assert_array_equal(s.data, 0.0)
        np.testing.assert_array_equal(np.exp(s.data), 1.0)

    def test_variance_of_confident_prediction(self):
        assert np.exp(-10.0) == pytest.approx(4.54e-5, rel=1e-3)

    def test_gradients(self):
        rng = np.random.default_rng(1)
        head = UncertaintyHead(rng, 6, 3)
        hi, hj = Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(2, 3)))
        report = ad.check_gradients(lambda *_: ad.sum_(uncertainty_head(hi, hj, head)),
                                    head.parameters())
        assert report.passed


class TestModel:
    def test_prediction_output(self):
        model = MPNPModel(2, TrainConfig(seed=1))
        g1, g2 = featurize_smiles("CCO"), featurize_smiles("c1ccccc1O")
        out, kl_i, kl_j = forward_pair(model, g1, g2, 1)
        assert 0 < out.probability < 1 and out.variance > 0
        assert out.alpha_i.shape == (3,)
        assert out.alpha_i.sum() == pytest.approx(1.0, abs=1e-6)
        assert kl_i >= 0 and kl_j >= 0

    def test_eval_determinism(self):
        model = MPNPModel(1)
        g1, g2 = featurize_smiles("CCO"), featurize_smiles("CC=O")
        a = model.forward([g1], [g2], [0]).mu.data
        b = model.forward([g1], [g2], [0]).mu.data
        assert np.array_equal(a, b)

    def test_symmetric_pair_swap(self):
        model = MPNPModel(1)
        m = model.relations.matrices.data
        m[0] = 0.5 * (m[0] + m[0].T)
        g = featurize_smiles("CC(=O)N")
        g_copy = featurize_smiles("CC(=O)N")
        a = model.forward([g], [g_copy], [0]).mu.data
        b = model.forward([g_copy], [g], [0]).mu.data
        np.testing.assert_array_equal(a, b)

    def test_ablated_ignores_relation_id(self):
        model = MPNPModel(4, TrainConfig(relation_module_enabled=False))
        assert model.relations.num_relations == 1
        g1, g2 = featurize_smiles("CCN"), featurize_smiles("OCC=O")
        mus = [model.forward([g1], [g2], [r]).mu.data[0] for r in range(4)]
        assert len(set(mus)) == 1
        with pytest.raises(ValueError):
            model.forward([g1], [g2], [4])

    def test_multiscale_uncertainty_switch(self):
        model = MPNPModel(1, TrainConfig(uncertainty_input="multiscale", hidden_dim=8))
        assert model.uncertainty.hidden.weight.shape == (2 * 3 * 8, 8)
        out = model.forward([featurize_smiles("CC")], [featurize_smiles("CO")], [0])
        assert out.s.shape == (1,)

    def test_relation_scores_match_forward(self):
        model = MPNPModel(3, TrainConfig(seed=2))
        gi = [featurize_smiles("CCO"), featurize_smiles("C=O")]
        gj = [featurize_smiles("CN"), featurize_smiles("CCCl")]
        scores = model.relation_scores(gi, gj)
        for r in range(3):
            np.testing.assert_allclose(scores[:, r], model.forward(gi, gj, [r, r]).mu.data)

    def test_full_pass_gradient_three_atom_pair(self):
        gi = [featurize_smiles("CC[O-]")]
        gj = [featurize_smiles("C=CN")]
        assert full_loss_check(gi + [featurize_smiles("OC#N")], gj + [featurize_smiles("CC=O")],
                               [0, 0], [1, 0]).passed
