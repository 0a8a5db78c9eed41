"""The full pair model: encoder, co-attention and both prediction heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .chem import EDGE_FEATURE_DIM, NODE_FEATURE_DIM
from .config import TrainConfig
from .encoder import Encoder, MultiScaleEmbedding, encode_multiscale
from .graph import batch_graphs
from .head import CoAttention, RelationSet, UncertaintyHead, co_attention, rescal_score, \
    uncertainty_head
from .nn import Module


@dataclass
class PairOutputs:
    """Batched predictions for P pairs."""

    mu: Tensor  # (P,) interaction logits
    s: Tensor  # (P,) log-variances
    kl_i: Tensor  # (P,)
    kl_j: Tensor  # (P,)
    alpha_i: Tensor  # (P, K)
    alpha_j: Tensor  # (P, K)
    embedding: MultiScaleEmbedding  # graphs interleaved as i0, j0, i1, j1, ...
    h_i_final: Tensor
    h_j_final: Tensor

    @property
    def probability(self):
        return ad._stable_sigmoid(self.mu.data)

    @property
    def variance(self):
        return np.exp(self.s.data)

    def __len__(self):
        return self.mu.shape[0]

    def prediction(self, p):
        return PredictionOutput(
            mu=float(self.mu.data[p]),
            s=float(self.s.data[p]),
            alpha_i=self.alpha_i.data[p].copy(),
            alpha_j=self.alpha_j.data[p].copy(),
        )


@dataclass
class PredictionOutput:
    mu: float
    s: float
    alpha_i: np.ndarray
    alpha_j: np.ndarray

    @property
    def probability(self):
        return float(ad._stable_sigmoid(np.array([self.mu]))[0])

    @property
    def variance(self):
        return float(np.exp(self.s))


class MPNPModel(Module):
    def __init__(self, num_relations, config=None, node_dim=NODE_FEATURE_DIM,
                 edge_dim=EDGE_FEATURE_DIM):
        self.config = config = (config or TrainConfig()).validate()
        rng = np.random.default_rng(config.seed)
        d, K = config.hidden_dim, config.num_blocks
        self.num_relations = num_relations
        self.encoder = Encoder(rng, node_dim, edge_dim, d, K, config.iterations)
        self.co_attention = CoAttention(rng, d)
        # the ablated model scores every pair with one shared matrix
        self.relations = RelationSet(rng, num_relations if config.relation_module_enabled else 1, d)
        unc_in = 2 * d if config.uncertainty_input == "final" else 2 * K * d
        self.uncertainty = UncertaintyHead(rng, unc_in, d)

    def relation_index(self, relation_ids):
        relation_ids = np.asarray(relation_ids, dtype=np.int64).reshape(-1)
        if self.config.relation_module_enabled:
            return relation_ids
        bad = relation_ids[(relation_ids < 0) | (relation_ids >= self.num_relations)]
        if bad.size:
            raise ValueError(f"unknown relation id {int(bad[0])}")
        return np.zeros_like(relation_ids)

    def forward(self, graphs_i, graphs_j, relation_ids, training=False, rng=None,
                node_input=None, update_stats=True, batch=None, noise=None):
        """Algorithm-2 forward pass for aligned lists of drug graphs."""
        if len(graphs_i) != len(graphs_j) or len(graphs_i) != len(np.atleast_1d(relation_ids)):
            raise ValueError("graphs_i, graphs_j and relation_ids must have equal length")
        P = len(graphs_i)
        if batch is None:
            interleaved = [g for pair in zip(graphs_i, graphs_j) for g in pair]
            batch = batch_graphs(interleaved)
        emb = encode_multiscale(
            batch, self.encoder, training=training, rng=rng, node_input=node_input,
            update_stats=update_stats, noise=noise,
            bn_training=training and not self.config.freeze_batchnorm,
        )
        K, d = emb.h.shape[1], emb.h.shape[2]
        pairs = ad.reshape(emb.h, (P, 2, K, d))
        h_i, h_j = pairs[:, 0], pairs[:, 1]
        fused_i, fused_j, alpha_i, alpha_j, _ = co_attention(h_i, h_j, self.co_attention)
        mu = rescal_score(fused_i, fused_j, self.relation_index(relation_ids), self.relations)
        if self.config.uncertainty_input == "final":
            s = uncertainty_head(fused_i, fused_j, self.uncertainty)
        else:
            s = uncertainty_head(ad.reshape(h_i, (P, K * d)), ad.reshape(h_j, (P, K * d)),
                                 self.uncertainty)
        return PairOutputs(
            mu=mu, s=s, kl_i=emb.kl[0::2], kl_j=emb.kl[1::2], alpha_i=alpha_i,
            alpha_j=alpha_j, embedding=emb, h_i_final=fused_i, h_j_final=fused_j,
        )

    def relation_scores(self, graphs_i, graphs_j):
        """(P, R) logits for every relation, evaluation mode."""
        P = len(graphs_i)
        with ad.no_grad():
            interleaved = [g for pair in zip(graphs_i, graphs_j) for g in pair]
            batch = batch_graphs(interleaved)
            emb = encode_multiscale(batch, self.encoder, training=False)
            K, d = emb.h.shape[1], emb.h.shape[2]
            pairs = emb.h.data.reshape(P, 2, K, d)
            fi, fj, *_ = co_attention(Tensor(pairs[:, 0]), Tensor(pairs[:, 1]), self.co_attention)
        m = self.relations.matrices.data
        return np.einsum("pd,rde,pe->pr", fi.data, m, fj.data)


def forward_pair(model, g_i, g_j, relation_id, training=False, rng=None):
    """Single-pair convenience wrapper; returns (PredictionOutput, kl_i, kl_j)."""
    out = model.forward([g_i], [g_j], [relation_id], training=training, rng=rng)
    return out.prediction(0), float(out.kl_i.data[0]), float(out.kl_j.data[0])
