"""Co-attention over scales, RESCAL scoring and the log-variance head."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Linear, Module, PReLU


def bilinear_init(rng, dim, count=None):
    """N(0, 1/dim^2) entries so that h^T M h' starts at O(1) for O(1) coordinates."""
    shape = (dim, dim) if count is None else (count, dim, dim)
    return rng.normal(0.0, 1.0 / dim, size=shape)


class CoAttention(Module):
    def __init__(self, rng, dim):
        self.weight = Tensor(bilinear_init(rng, dim), requires_grad=True)


class RelationSet(Module):
    """One d x d matrix per relation id."""

    def __init__(self, rng, num_relations, dim):
        if num_relations < 1:
            raise ValueError("need at least one relation")
        self.matrices = Tensor(bilinear_init(rng, dim, num_relations), requires_grad=True)

    @property
    def num_relations(self):
        return self.matrices.shape[0]


class UncertaintyHead(Module):
    """Two-layer MLP with a PReLU in between, producing one log-variance per pair."""

    def __init__(self, rng, d_in, hidden):
        self.hidden = Linear(rng, d_in, hidden)
        self.act = PReLU()
        self.out = Linear(rng, hidden, 1)

    def __call__(self, x):
        return ad.reshape(self.out(self.act(self.hidden(x))), (x.shape[0],))


def co_attention(h_i, h_j, params):
    """Fuse (P, K, d) scale stacks of two drugs.

    Returns (h_i_final, h_j_final, alpha_i, alpha_j, affinity); alpha_i is the
    softmax of the row means of A = H_i W H_j^T, alpha_j of its column means.
    """
    if h_i.shape != h_j.shape:
        raise ad.ShapeError("co_attention", h_i.shape, h_j.shape, detail="scale stacks differ")
    affinity = ad.matmul(ad.matmul(h_i, params.weight), ad.transpose(h_j))  # (P, K, K)
    alpha_i = ad.softmax(ad.mean(affinity, axis=2), axis=1)
    alpha_j = ad.softmax(ad.mean(affinity, axis=1), axis=1)
    P, K = alpha_i.shape
    fused_i = ad.sum_(h_i * ad.reshape(alpha_i, (P, K, 1)), axis=1)
    fused_j = ad.sum_(h_j * ad.reshape(alpha_j, (P, K, 1)), axis=1)
    return fused_i, fused_j, alpha_i, alpha_j, affinity


def rescal_score(h_i, h_j, relation_ids, relations):
    """mu_p = h_i[p]^T M_{r_p} h_j[p] for (P, d) inputs."""
    relation_ids = np.asarray(relation_ids, dtype=np.int64).reshape(-1)
    R = relations.num_relations
    bad = relation_ids[(relation_ids < 0) | (relation_ids >= R)]
    if bad.size:
        raise ValueError(f"unknown relation id {int(bad[0])} (have {R} relations)")
    P, d = h_i.shape
    m = ad.gather(relations.matrices, relation_ids)  # (P, d, d)
    left = ad.matmul(ad.reshape(h_i, (P, 1, d)), m)
    return ad.reshape(ad.matmul(left, ad.reshape(h_j, (P, d, 1))), (P,))


def uncertainty_head(h_i, h_j, head):
    """s = MLP([h_i ; h_j])."""
    return head(ad.concat([h_i, h_j], axis=-1))
