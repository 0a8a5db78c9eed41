"""Line graphs and batching of featurized molecular graphs.

Every bond ``b = (u, v)`` is carried as two arcs: ``2b`` (u -> v) and
``2b + 1`` (v -> u). Both arcs share the bond's features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LineGraph:
    node_of_bond: np.ndarray  # bond index -> line-node index
    adjacency: np.ndarray  # (L, 2) unordered pairs a < b, each once
    incidence: list  # atom -> list of incident bond indices

    @property
    def num_nodes(self):
        return len(self.node_of_bond)

    @property
    def num_edges(self):
        return len(self.adjacency)


def build_line_graph(g):
    """Line graph of ``g`` built from per-atom incidence lists."""
    incidence = [[] for _ in range(g.num_atoms)]
    for b, (u, v, _) in enumerate(g.bonds):
        incidence[u].append(b)
        incidence[v].append(b)
    pairs = set()
    for bonds in incidence:
        for i in range(len(bonds)):
            for j in range(i + 1, len(bonds)):
                a, b = bonds[i], bonds[j]
                pairs.add((a, b) if a < b else (b, a))
    adjacency = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    return LineGraph(np.arange(g.num_bonds, dtype=np.int64), adjacency, incidence)


@dataclass
class GraphBatch:
    node_features: np.ndarray  # (N, d_v)
    edge_features: np.ndarray  # (B, d_e), one row per bond
    bonds: np.ndarray  # (B, 2) global atom indices
    line_adjacency: np.ndarray  # (L, 2) global bond indices
    node_offsets: np.ndarray  # (G + 1,)
    bond_offsets: np.ndarray  # (G + 1,)
    line_offsets: np.ndarray  # (G + 1,)
    node_graph: np.ndarray  # (N,) membership
    num_graphs: int

    @property
    def num_nodes(self):
        return len(self.node_features)

    @property
    def num_bonds(self):
        return len(self.bonds)

    @property
    def num_arcs(self):
        return 2 * len(self.bonds)

    # -- arc view -------------------------------------------------------
    @property
    def arc_src(self):
        return np.stack([self.bonds[:, 0], self.bonds[:, 1]], axis=1).reshape(-1)

    @property
    def arc_dst(self):
        return np.stack([self.bonds[:, 1], self.bonds[:, 0]], axis=1).reshape(-1)

    @property
    def arc_bond(self):
        return np.repeat(np.arange(self.num_bonds), 2)

    def arc_neighbor_pairs(self):
        """(target arc, source arc) pairs for line-graph aggregation.

        Each arc receives the forward-arc message of every bond adjacent to
        its own bond.
        """
        a, b = self.line_adjacency[:, 0], self.line_adjacency[:, 1]
        targets = np.concatenate([2 * a, 2 * a + 1, 2 * b, 2 * b + 1])
        sources = np.concatenate([2 * b, 2 * b, 2 * a, 2 * a])
        order = np.lexsort((sources, targets))
        return targets[order], sources[order]

    def unbatch(self):
        """Per-graph (node_features, edge_features, bonds, line_adjacency), re-indexed locally."""
        out = []
        for k in range(self.num_graphs):
            n0, n1 = self.node_offsets[k], self.node_offsets[k + 1]
            b0, b1 = self.bond_offsets[k], self.bond_offsets[k + 1]
            l0, l1 = self.line_offsets[k], self.line_offsets[k + 1]
            out.append((
                self.node_features[n0:n1],
                self.edge_features[b0:b1],
                self.bonds[b0:b1] - n0,
                self.line_adjacency[l0:l1] - b0,
            ))
        return out


def _line_graph_of(g):
    lg = getattr(g, "_line_graph", None)
    if lg is None:
        lg = build_line_graph(g)
        g._line_graph = lg
    return lg


def batch_graphs(graphs):
    """Concatenate featurized graphs with index offsets."""
    if not graphs:
        raise ValueError("batch_graphs needs at least one graph")
    for g in graphs:
        if g.node_features is None:
            raise ValueError("graphs must be featurized before batching")
    d_v = graphs[0].node_features.shape[1]
    d_e = graphs[0].edge_features.shape[1]
    for i, g in enumerate(graphs):
        if g.node_features.shape[1] != d_v or g.edge_features.shape[1] != d_e:
            raise ValueError(
                f"graph {i} has feature dims ({g.node_features.shape[1]}, "
                f"{g.edge_features.shape[1]}); expected ({d_v}, {d_e})"
            )
    node_counts = [g.num_atoms for g in graphs]
    bond_counts = [g.num_bonds for g in graphs]
    lines = [_line_graph_of(g) for g in graphs]
    line_counts = [lg.num_edges for lg in lines]
    node_offsets = np.concatenate([[0], np.cumsum(node_counts)]).astype(np.int64)
    bond_offsets = np.concatenate([[0], np.cumsum(bond_counts)]).astype(np.int64)
    line_offsets = np.concatenate([[0], np.cumsum(line_counts)]).astype(np.int64)
    bonds = np.concatenate(
        [g.bond_index_array() + node_offsets[k] for k, g in enumerate(graphs)]
    ).reshape(-1, 2)
    line_adj = np.concatenate(
        [lg.adjacency + bond_offsets[k] for k, lg in enumerate(lines)]
    ).reshape(-1, 2)
    return GraphBatch(
        node_features=np.concatenate([g.node_features for g in graphs]),
        edge_features=np.concatenate([g.edge_features for g in graphs]).reshape(-1, d_e),
        bonds=bonds,
        line_adjacency=line_adj,
        node_offsets=node_offsets,
        bond_offsets=bond_offsets,
        line_offsets=line_offsets,
        node_graph=np.repeat(np.arange(len(graphs)), node_counts),
        num_graphs=len(graphs),
    )
