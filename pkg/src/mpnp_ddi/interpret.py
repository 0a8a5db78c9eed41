"""Atom-level probes: embedding similarity and gradient attribution."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import encode_multiscale
from .graph import batch_graphs


@dataclass
class SimilarityMatrix:
    values: np.ndarray  # (n, n); NaN where undefined
    flagged: np.ndarray  # indices of atoms with constant embeddings

    def to_table(self, delimiter="\t"):
        return _matrix_table(self.values, delimiter)


def atom_similarity_matrix(node_states):
    """Pearson correlation between every pair of atom embeddings (rows)."""
    x = np.asarray(node_states, dtype=float)
    centered = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.sum(centered * centered, axis=1))
    flagged = np.flatnonzero(norms == 0)
    safe = np.where(norms == 0, 1.0, norms)
    unit = centered / safe[:, None]
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    np.fill_diagonal(sim, 1.0)
    sim[flagged, :] = np.nan
    sim[:, flagged] = np.nan
    return SimilarityMatrix(sim, flagged)


def block_contrast(matrix, block):
    """(mean similarity inside ``block``, mean between ``block`` and the rest).

    Diagonal and undefined entries are excluded.
    """
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    inside = np.zeros(n, dtype=bool)
    inside[list(block)] = True
    off_diag = ~np.eye(n, dtype=bool)
    within = m[np.outer(inside, inside) & off_diag]
    across = m[np.outer(inside, ~inside)]
    return float(np.nanmean(within)), float(np.nanmean(across))


def final_node_states(model, graph):
    """Evaluation-mode node states after the last block for one molecule."""
    with ad.no_grad():
        emb = encode_multiscale(batch_graphs([graph]), model.encoder, training=False)
    return emb.node_states[-1].data.copy()


@dataclass
class Attribution:
    scores: np.ndarray  # (n_atoms,), sums to 1
    raw: np.ndarray  # gradient norms before normalization
    top_atom: int
    neighborhood: list  # atoms within ``radius`` bonds of the top atom
    uniform_fallback: bool = False


def neighborhood(graph, atom, radius):
    adj = graph.neighbors()
    seen = {atom: 0}
    queue = deque([atom])
    while queue:
        a = queue.popleft()
        if seen[a] == radius:
            continue
        for b in adj[a]:
            if b not in seen:
                seen[b] = seen[a] + 1
                queue.append(b)
    return sorted(seen)


def _normalize(raw, graph, radius):
    total = raw.sum()
    uniform = not np.isfinite(total) or total <= 0
    scores = np.full_like(raw, 1.0 / raw.size) if uniform else raw / total
    top = int(np.argmax(scores))
    return Attribution(scores, raw, top, neighborhood(graph, top, radius), uniform)


def atom_attribution(model, graph_i, graph_j, relation, radius=1):
    """Per-atom ||d mu / d x_v|| for both drugs, from one backward pass.

    Returns (Attribution for drug i, Attribution for drug j).
    """
    batch = batch_graphs([graph_i, graph_j])
    node_input = Tensor(batch.node_features.copy(), requires_grad=True)
    out = model.forward([graph_i], [graph_j], [relation], training=False,
                        node_input=node_input, batch=batch)
    out.mu.backward()
    grad = node_input.grad
    model.zero_grad()
    raw = np.sqrt(np.sum(grad * grad, axis=1))
    n_i = graph_i.num_atoms
    return _normalize(raw[:n_i], graph_i, radius), _normalize(raw[n_i:], graph_j, radius)


def _matrix_table(values, delimiter):
    rows = [delimiter.join(repr(float(v)) for v in row) for row in np.asarray(values)]
    return "\n".join(rows) + "\n"


def attribution_table(attr, delimiter="\t"):
    lines = [delimiter.join(("atom", "score", "raw", "in_neighborhood"))]
    near = set(attr.neighborhood)
    for a, (s, r) in enumerate(zip(attr.scores, attr.raw)):
        lines.append(delimiter.join((str(a), repr(float(s)), repr(float(r)), str(int(a in near)))))
    return "\n".join(lines) + "\n"
