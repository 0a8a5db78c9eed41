"""Stacked GNP blocks: bond-to-bond message passing, GRU node updates,
attention pooling and a Gaussian latent readout per block."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import BatchNorm, GRUCell, Linear, Module, PReLU

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


class ConfigError(ValueError):
    pass


class GNPBlock(Module):
    def __init__(self, rng, dim):
        self.gru = GRUCell(rng, dim)
        self.pool_hidden = Linear(rng, dim, dim, bias=False)
        self.pool_score = Linear(rng, dim, 1, bias=False)
        self.mean_head = Linear(rng, dim, dim)
        self.logvar_head = Linear(rng, dim, dim)


class Encoder(Module):
    def __init__(self, rng, node_dim, edge_dim, hidden_dim=32, num_blocks=3, iterations=2):
        if num_blocks < 1 or iterations < 1:
            raise ConfigError(f"need K >= 1 and T >= 1, got K={num_blocks}, T={iterations}")
        self.hidden_dim = hidden_dim
        self.iterations = iterations
        # no bias: batch norm removes any constant shift
        self.node_proj = Linear(rng, node_dim, hidden_dim, bias=False)
        self.node_norm = BatchNorm(hidden_dim)
        self.node_act = PReLU()
        self.edge_proj = Linear(rng, edge_dim, hidden_dim)
        self.blocks = [GNPBlock(rng, hidden_dim) for _ in range(num_blocks)]

    @property
    def num_blocks(self):
        return len(self.blocks)


@dataclass
class LatentDistribution:
    mean: Tensor  # (G, d)
    logvar: Tensor  # (G, d), clamped

    @property
    def variance(self):
        return np.exp(self.logvar.data)


@dataclass
class MultiScaleEmbedding:
    """Batched encoder output; row ``g`` belongs to graph ``g`` of the batch."""

    h: Tensor  # (G, K, d)
    kl_per_scale: Tensor  # (G, K)
    kl: Tensor  # (G,)  summed over scales
    node_states: list  # K tensors (N, d), final states of each block
    latents: list  # K LatentDistribution

    @property
    def num_scales(self):
        return self.h.shape[1]

    def scale_vectors(self, g):
        return self.h.data[g]


# -- individual stages -----------------------------------------------------
def project_features(batch, encoder, training, node_input=None, update_stats=True):
    """x0 = PReLU(BatchNorm(node_proj(x))) per atom, e0 = edge_proj(e) per arc."""
    x = node_input if node_input is not None else Tensor(batch.node_features)
    if x.shape[-1] != encoder.node_proj.weight.shape[0]:
        raise ad.ShapeError("project_features", x.shape, encoder.node_proj.weight.shape)
    if batch.edge_features.shape[-1] != encoder.edge_proj.weight.shape[0]:
        raise ad.ShapeError(
            "project_features", batch.edge_features.shape, encoder.edge_proj.weight.shape
        )
    x0 = encoder.node_act(encoder.node_norm(encoder.node_proj(x), training, update_stats))
    e_bond = encoder.edge_proj(Tensor(batch.edge_features))
    e0 = ad.gather(e_bond, batch.arc_bond)
    return x0, e0


def message_init(edge_states, node_states, arc_src, arc_dst):
    """m_uv = e_uv + (x_u + x_v) / 2 for every arc."""
    ends = ad.gather(node_states, arc_src) + ad.gather(node_states, arc_dst)
    return edge_states + ad.scale(ends, 0.5)


def message_aggregate(messages, targets, sources):
    """m'_a = m_a + sum of the messages of line-graph neighbours of a's bond."""
    if len(targets) == 0:
        return messages
    incoming = ad.scatter_sum(ad.gather(messages, sources), targets, messages.shape[0])
    return messages + incoming


def node_update_gru(node_states, refined, arc_dst, gru):
    """x' = GRU(sum of refined messages on arcs into each atom, x)."""
    delta = ad.scatter_sum(refined, arc_dst, node_states.shape[0])
    return gru(delta, node_states)


def attention_pool(node_states, membership, num_graphs, block):
    """Per-graph softmax over w2 . tanh(W1 x_v), then the weighted sum of node states."""
    counts = np.bincount(membership, minlength=num_graphs)
    if np.any(counts == 0):
        raise ValueError(f"attention_pool: graph {int(np.argmin(counts))} has no atoms")
    scores = block.pool_score(ad.tanh(block.pool_hidden(node_states)))
    scores = ad.reshape(scores, (node_states.shape[0],))
    weights = ad.segment_softmax(scores, membership, num_graphs)
    weighted = node_states * ad.reshape(weights, (-1, 1))
    return ad.scatter_sum(weighted, membership, num_graphs), weights


def gaussian_kl(mean, logvar):
    """KL(N(mean, exp(logvar)) || N(0, I)) summed over the last axis."""
    terms = ad.square(mean) + ad.exp(logvar) - 1.0 - logvar
    return ad.scale(ad.sum_(terms, axis=-1), 0.5)


def stochastic_readout(summary, block, training, noise=None):
    """Returns (sample, kl, LatentDistribution); ``noise`` is required in training mode."""
    for name, p in block.named_parameters():
        if not np.all(np.isfinite(p.data)):
            raise ValueError(f"stochastic_readout: non-finite parameter {name}")
    mean = block.mean_head(summary)
    logvar = ad.clamp(block.logvar_head(summary), LOGVAR_MIN, LOGVAR_MAX)
    if training:
        if noise is None:
            raise ValueError("training-mode readout needs a noise sample")
        sample = mean + ad.exp(ad.scale(logvar, 0.5)) * Tensor(noise)
    else:
        sample = mean
    return sample, gaussian_kl(mean, logvar), LatentDistribution(mean, logvar)


def encode_multiscale(batch, encoder, training=False, rng=None, node_input=None,
                      update_stats=True, noise=None, bn_training=None):
    """Run all K blocks; block k continues from the node states block k-1 left behind.

    ``bn_training`` overrides the batch-norm mode (defaults to ``training``).
    """
    G, K, d = batch.num_graphs, encoder.num_blocks, encoder.hidden_dim
    if training and noise is None:
        if rng is None:
            raise ValueError("training-mode encoding needs an rng")
        noise = rng.standard_normal((G, K, d))
    bn_training = training if bn_training is None else bn_training
    x, e = project_features(batch, encoder, bn_training, node_input, update_stats)
    arc_src, arc_dst = batch.arc_src, batch.arc_dst
    targets, sources = batch.arc_neighbor_pairs()

    samples, kls, node_states, latents = [], [], [], []
    for k, block in enumerate(encoder.blocks):
        for _ in range(encoder.iterations):
            m = message_init(e, x, arc_src, arc_dst)
            m = message_aggregate(m, targets, sources)
            x = node_update_gru(x, m, arc_dst, block.gru)
        summary, _ = attention_pool(x, batch.node_graph, G, block)
        h, kl, latent = stochastic_readout(
            summary, block, training, None if noise is None else noise[:, k, :]
        )
        samples.append(ad.reshape(h, (G, 1, d)))
        kls.append(ad.reshape(kl, (G, 1)))
        node_states.append(x)
        latents.append(latent)
    kl_per_scale = ad.concat(kls, axis=1)
    return MultiScaleEmbedding(
        h=ad.concat(samples, axis=1),
        kl_per_scale=kl_per_scale,
        kl=ad.sum_(kl_per_scale, axis=1),
        node_states=node_states,
        latents=latents,
    )
