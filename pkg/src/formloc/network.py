"""Sensing topology and rigidity quantities for a team of planar agents.

Agent indices are 0-based throughout the library; configuration files use
1-based labels and the CLI converts at the boundary (`Graph.from_one_based`).
Edges are ordered (tail, head) pairs; the tail conventionally owns the edge
when a single shared estimate per edge is wanted.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "DesiredDistances",
    "Graph",
    "distance_errors",
    "edge_offsets",
    "incidence_matrix",
    "neighbors",
    "relative_position_stack",
    "rigidity_matrix",
    "sorted_neighbors",
]


@dataclass(frozen=True)
class Graph:
    """Undirected sensing graph with an orientation per edge.

    edges holds 0-based (tail, head) pairs; at most one edge joins any two
    agents regardless of orientation.
    """

    agent_count: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.agent_count < 1:
            raise ValueError(f"agent_count must be positive, got {self.agent_count}")
        edges = tuple((int(t), int(h)) for t, h in self.edges)
        seen = set()
        for t, h in edges:
            if not (0 <= t < self.agent_count and 0 <= h < self.agent_count):
                raise ValueError(f"edge ({t}, {h}) references an agent outside 0..{self.agent_count - 1}")
            if t == h:
                raise ValueError(f"self-loop at agent {t}")
            key = (min(t, h), max(t, h))
            if key in seen:
                raise ValueError(f"duplicate edge between agents {t} and {h}")
            seen.add(key)
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_one_based(cls, agent_count: int, edges) -> "Graph":
        """Build from 1-based agent labels as used in configuration files."""
        return cls(agent_count, tuple((t - 1, h - 1) for t, h in edges))

    @property
    def edge_count(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class DesiredDistances:
    """Target inter-agent distances, one positive value per edge."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size == 0 or np.any(values <= 0) or not np.all(np.isfinite(values)):
            raise ValueError("desired distances must be finite and positive")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def uniform(cls, edge_count: int, d: float) -> "DesiredDistances":
        return cls(np.full(edge_count, float(d)))


@lru_cache(maxsize=None)
def _edge_arrays(graph: Graph):
    tails = np.array([t for t, _ in graph.edges], dtype=int)
    heads = np.array([h for _, h in graph.edges], dtype=int)
    tails.setflags(write=False)
    heads.setflags(write=False)
    return tails, heads


def neighbors(graph: Graph, i: int) -> frozenset:
    """Agents sharing an edge with agent i."""
    if not (0 <= i < graph.agent_count):
        raise ValueError(f"agent {i} outside 0..{graph.agent_count - 1}")
    out = set()
    for t, h in graph.edges:
        if t == i:
            out.add(h)
        elif h == i:
            out.add(t)
    return frozenset(out)


@lru_cache(maxsize=None)
def sorted_neighbors(graph: Graph, i: int) -> tuple:
    """Neighbors of i in ascending order; fixes estimator block layout."""
    return tuple(sorted(neighbors(graph, i)))


def incidence_matrix(graph: Graph) -> np.ndarray:
    """Agents-by-edges incidence matrix: +1 at the tail, -1 at the head."""
    b = np.zeros((graph.agent_count, graph.edge_count))
    for k, (t, h) in enumerate(graph.edges):
        b[t, k] = 1.0
        b[h, k] = -1.0
    return b


def _positions_2d(graph: Graph, r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float).reshape(-1)
    if r.size != 2 * graph.agent_count:
        raise ValueError(f"expected {2 * graph.agent_count} position coordinates, got {r.size}")
    return r.reshape(-1, 2)


def edge_offsets(graph: Graph, r: np.ndarray) -> np.ndarray:
    """Per-edge relative positions r_tail - r_head as an (m, 2) array."""
    r2 = _positions_2d(graph, r)
    tails, heads = _edge_arrays(graph)
    return r2[tails] - r2[heads]


def relative_position_stack(graph: Graph, r: np.ndarray) -> np.ndarray:
    """Stacked relative positions: first half r_tail - r_head per edge, second
    half its negation (both edge orientations)."""
    z1 = edge_offsets(graph, r).ravel()
    return np.concatenate([z1, -z1])


def distance_errors(z1, d) -> np.ndarray:
    """Squared-distance errors e_k = |z1_k|^2 - d_k^2 per edge."""
    z1 = np.asarray(z1, dtype=float).reshape(-1, 2)
    dv = np.asarray(getattr(d, "values", d), dtype=float).reshape(-1)
    if z1.shape[0] != dv.size:
        raise ValueError(f"got {z1.shape[0]} edge offsets but {dv.size} distances")
    return (z1 ** 2).sum(axis=1) - dv ** 2


def rigidity_matrix(z1, graph: Graph) -> np.ndarray:
    """Edges-by-coordinates matrix with z1_k^T at the tail block and -z1_k^T
    at the head block of row k, so that (matrix @ r) recovers |z1_k|^2."""
    z1 = np.asarray(z1, dtype=float).reshape(-1, 2)
    if z1.shape[0] != graph.edge_count:
        raise ValueError(f"got {z1.shape[0]} edge offsets for {graph.edge_count} edges")
    out = np.zeros((graph.edge_count, 2 * graph.agent_count))
    for k, (t, h) in enumerate(graph.edges):
        out[k, 2 * t : 2 * t + 2] = z1[k]
        out[k, 2 * h : 2 * h + 2] = -z1[k]
    return out
