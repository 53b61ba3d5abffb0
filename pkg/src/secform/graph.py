"""Formation graphs, rigidity, and the distance-based gradient control laws.

Positions are ``(n, 2)`` arrays with row ``i`` holding agent ``i``; the
stacked vector ``p = col(p_1, ..., p_n)`` is ``positions.ravel()``.  Edge
``k = (tail, head)`` has relative position ``z_k = p_tail - p_head`` and
squared-distance error ``e_k = |z_k|^2 - d_k^2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import DegenerateState
from .quantizer import MulqConfig, rescale, to_plaintext


@dataclass(frozen=True, eq=False)
class FormationGraph:
    n_agents: int
    edges: tuple[tuple[int, int], ...]
    desired_distances: np.ndarray

    def __init__(self, n_agents: int, edges: Sequence[tuple[int, int]], desired_distances):
        edges = tuple((int(t), int(h)) for t, h in edges)
        d = np.asarray(desired_distances, dtype=float).copy()
        d.flags.writeable = False
        object.__setattr__(self, "n_agents", int(n_agents))
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "desired_distances", d)
        self._validate()

    def _validate(self):
        n = self.n_agents
        if n < 2:
            raise ValueError("need at least two agents")
        seen = set()
        for t, h in self.edges:
            if not (0 <= t < n and 0 <= h < n):
                raise ValueError(f"edge ({t}, {h}) references an unknown agent")
            if t == h:
                raise ValueError(f"self-loop at agent {t}")
            key = frozenset((t, h))
            if key in seen:
                raise ValueError(f"duplicate edge between {t} and {h}")
            seen.add(key)
        if self.desired_distances.shape != (len(self.edges),):
            raise ValueError("need exactly one desired distance per edge")
        if np.any(~(self.desired_distances > 0)):
            raise ValueError("desired distances must be positive")
        # connectivity by flood fill
        adj = {i: set() for i in range(n)}
        for t, h in self.edges:
            adj[t].add(h)
            adj[h].add(t)
        stack, reached = [0], {0}
        while stack:
            for j in adj[stack.pop()] - reached:
                reached.add(j)
                stack.append(j)
        if len(reached) != n:
            raise ValueError("formation graph must be connected")

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def incidence(self) -> np.ndarray:
        """``B``: +1 at the tail, -1 at the head of each edge column."""
        B = np.zeros((self.n_agents, self.n_edges))
        for k, (t, h) in enumerate(self.edges):
            B[t, k] = 1.0
            B[h, k] = -1.0
        B.flags.writeable = False
        return B

    @property
    def incidence_bar(self) -> np.ndarray:
        return np.kron(self.incidence, np.eye(2))

    def incident_edges(self, agent: int) -> list[int]:
        return [k for k, (t, h) in enumerate(self.edges) if agent in (t, h)]

    def is_minimally_rigid(self) -> bool:
        return self.n_edges == 2 * self.n_agents - 3

    def edge_errors(self, positions) -> np.ndarray:
        return FormationState(positions, self).e

    def __repr__(self):
        return f"FormationGraph(n_agents={self.n_agents}, edges={self.edges})"


def incidence(graph: FormationGraph) -> np.ndarray:
    return graph.incidence


def is_minimally_rigid(graph: FormationGraph) -> bool:
    return graph.is_minimally_rigid()


class FormationState:
    """Positions on a graph; ``z`` and ``e`` are recomputed from ``p`` on access."""

    __slots__ = ("positions", "graph")

    def __init__(self, positions, graph: FormationGraph):
        p = np.array(positions, dtype=float).reshape(graph.n_agents, 2)
        p.flags.writeable = False
        self.positions = p
        self.graph = graph

    @property
    def p(self) -> np.ndarray:
        return self.positions.ravel()

    @property
    def z(self) -> np.ndarray:
        """Relative positions, shape ``(|E|, 2)``."""
        tails, heads = _endpoints(self.graph)
        return self.positions[tails] - self.positions[heads]

    @property
    def e(self) -> np.ndarray:
        z = self.z
        d = self.graph.desired_distances
        return z[:, 0] * z[:, 0] + z[:, 1] * z[:, 1] - d * d

    def moved(self, positions) -> "FormationState":
        return FormationState(positions, self.graph)


def _endpoints(graph: FormationGraph) -> tuple[np.ndarray, np.ndarray]:
    e = np.asarray(graph.edges, dtype=np.intp).reshape(-1, 2)
    return e[:, 0], e[:, 1]


def rigidity_matrix(state: FormationState) -> np.ndarray:
    """``R(z) = D_z^T Bbar^T``, shape ``(|E|, 2n)``."""
    g = state.graph
    z = state.z
    R = np.zeros((g.n_edges, 2 * g.n_agents))
    for k, (t, h) in enumerate(g.edges):
        R[k, 2 * t:2 * t + 2] = z[k]
        R[k, 2 * h:2 * h + 2] = -z[k]
    return R


def numerical_rank(M: np.ndarray) -> int:
    """Rank with singular values below ``max_dim * eps * s_max`` treated as zero."""
    s = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    tol = max(M.shape) * np.finfo(float).eps * s[0]
    return int(np.count_nonzero(s > tol))


def is_infinitesimally_rigid(state: FormationState) -> bool:
    p = state.positions
    if np.all(p == p[0]):
        raise DegenerateState("all agent positions coincide")
    return numerical_rank(rigidity_matrix(state)) == 2 * state.graph.n_agents - 3


def control_law_exact(state: FormationState) -> np.ndarray:
    """``u = -Bbar D_z e``, returned as ``(n, 2)``."""
    B = state.graph.incidence
    return -(B @ (state.z * state.e[:, None]))


def quantized_edge_terms(state: FormationState, cfg_z: MulqConfig, cfg_e: MulqConfig) -> np.ndarray:
    """Per-edge ``Q(z_k) Q(e_k)``, formed from exact digit products, shape ``(|E|, 2)``."""
    z, e = state.z, state.e
    out = np.empty_like(z)
    for k in range(len(e)):
        qe = to_plaintext(float(e[k]), cfg_e)
        for j in range(2):
            qz = to_plaintext(float(z[k, j]), cfg_z)
            out[k, j] = rescale(qz.digits * qe.digits, qz.scale_exp + qe.scale_exp)
    return out


def accumulate_commands(graph: FormationGraph, terms: np.ndarray) -> np.ndarray:
    """``u_i = -sum_k B_ik term_k`` summed in increasing edge order."""
    u = np.zeros((graph.n_agents, 2))
    for k, (t, h) in enumerate(graph.edges):
        u[t] -= terms[k]
        u[h] += terms[k]
    return u


def control_law_quantized(state: FormationState, cfg_z: MulqConfig, cfg_e: MulqConfig) -> np.ndarray:
    """``u = -Bbar D_Q(z) Q(e)`` with the quantizer applied element-wise."""
    return accumulate_commands(state.graph, quantized_edge_terms(state, cfg_z, cfg_e))
