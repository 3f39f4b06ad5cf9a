"""Distance-based formation control laws.

All three laws steer squared-distance errors e_k = |r_tail - r_head|^2 - d_k^2
to zero along edge directions; they differ in where those directions come
from.  `ideal_control` is the gradient flow of the quartic shape potential
and needs the true relative positions.  `estimated_control` substitutes each
agent's own estimate of every incident edge, which is what a relative
localizer actually provides; with per-agent estimates the interaction is no
longer symmetric and the flow can stall or translate instead of converging.
`mismatch_control` shares one estimate per edge (the owner's) and biases the
two endpoints' error signals by +-a_k, which forces a steady rotation that
keeps the estimator excited.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .network import DesiredDistances, Graph, _edge_arrays, distance_errors, edge_offsets

__all__ = [
    "EdgeOwnership",
    "MismatchConfig",
    "assign_ownership",
    "estimated_control",
    "formation_potential",
    "ideal_control",
    "mismatch_control",
]


@dataclass(frozen=True)
class EdgeOwnership:
    """Owner agent per edge; the owner's estimate is the edge's shared one."""

    owners: tuple[int, ...]


@dataclass(frozen=True)
class MismatchConfig:
    """Per-edge error biases a_k added with opposite signs at the two ends."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise ValueError("mismatches must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def uniform(cls, edge_count: int, a: float) -> "MismatchConfig":
        return cls(np.full(edge_count, float(a)))


def assign_ownership(graph: Graph) -> EdgeOwnership:
    """Default ownership: each edge belongs to its tail agent."""
    return EdgeOwnership(owners=tuple(t for t, _ in graph.edges))


@lru_cache(maxsize=None)
def _scatter_matrices(graph: Graph):
    """(agents x edges) indicators for tails and heads; their difference is
    the incidence matrix."""
    at = np.zeros((graph.agent_count, graph.edge_count))
    ah = np.zeros((graph.agent_count, graph.edge_count))
    for k, (t, h) in enumerate(graph.edges):
        at[t, k] = 1.0
        ah[h, k] = 1.0
    at.setflags(write=False)
    ah.setflags(write=False)
    return at, ah


def formation_potential(graph: Graph, r, d) -> float:
    """Shape potential V = (1/4) sum_k e_k^2."""
    e = distance_errors(edge_offsets(graph, r), d)
    return 0.25 * float(e @ e)


def ideal_control(graph: Graph, r, d) -> np.ndarray:
    """Gradient descent on the shape potential with true relative positions.

    Per edge the tail moves along -(r_tail - r_head) e_k and the head along
    the opposite, so the stacked velocity is minus the transposed rigidity
    matrix times e and the centroid never moves.
    """
    z1 = edge_offsets(graph, r)
    e = distance_errors(z1, d)
    at, ah = _scatter_matrices(graph)
    terms = z1 * e[:, None]
    return (ah @ terms - at @ terms).ravel()


def estimated_control(graph: Graph, estimates, e) -> np.ndarray:
    """Per-agent law: agent i moves along -sum_j est(i, j) e_ij.

    `estimates` maps each directed pair (i, j) with {i, j} an edge to agent
    i's estimate of r_i - r_j.  Errors are symmetric (e_ij = e_ji, one value
    per edge) but the two endpoints' direction estimates need not agree,
    which is exactly what breaks the gradient structure.
    """
    e = np.asarray(e, dtype=float).reshape(-1)
    if e.size != graph.edge_count:
        raise ValueError(f"expected {graph.edge_count} errors, got {e.size}")
    try:
        est_tail = np.array([estimates[(t, h)] for t, h in graph.edges], dtype=float)
        est_head = np.array([estimates[(h, t)] for t, h in graph.edges], dtype=float)
    except KeyError as exc:
        raise ValueError(f"missing estimate for directed pair {exc}") from exc
    if est_tail.shape != (graph.edge_count, 2) or est_head.shape != (graph.edge_count, 2):
        raise ValueError("estimates must be planar vectors")
    at, ah = _scatter_matrices(graph)
    return -(at @ (est_tail * e[:, None]) + ah @ (est_head * e[:, None])).ravel()


def mismatch_control(graph: Graph, ownership: EdgeOwnership, shared_estimates,
                     e, a: MismatchConfig) -> np.ndarray:
    """Shared-estimate law with deliberate error biases.

    shared_estimates[k] is the owner's estimate of r_tail - r_head for edge
    k.  The tail applies -est_k (e_k - a_k) and the head +est_k (e_k + a_k);
    with a = 0 and exact estimates this reduces to `ideal_control`, and with
    a != 0 the biased equilibrium is a slightly distorted shape in steady
    rotation.
    """
    m = graph.edge_count
    est = np.asarray(shared_estimates, dtype=float).reshape(-1, 2)
    e = np.asarray(e, dtype=float).reshape(-1)
    av = a.values
    if est.shape[0] != m or e.size != m or av.size != m:
        raise ValueError(f"expected {m} estimates, errors and mismatches, "
                         f"got {est.shape[0]}, {e.size}, {av.size}")
    if len(ownership.owners) != m:
        raise ValueError(f"ownership lists {len(ownership.owners)} edges, graph has {m}")
    for k, owner in enumerate(ownership.owners):
        if owner not in graph.edges[k]:
            raise ValueError(f"owner {owner} is not an endpoint of edge {graph.edges[k]}")
    at, ah = _scatter_matrices(graph)
    return (ah @ (est * (e + av)[:, None]) - at @ (est * (e - av)[:, None])).ravel()
