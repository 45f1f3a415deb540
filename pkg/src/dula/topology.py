"""Undirected agent graphs, their Laplacians and spectra.

Graphs here are small (tens of agents), so everything is dense and the
spectrum is computed once, eagerly, at construction.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, InvalidTopologyError

CONNECTIVITY_TOL = 1e-9


@dataclass(frozen=True)
class SpectralSummary:
    """Laplacian spectrum of a graph.

    Attributes:
        lambda2: Algebraic connectivity (second smallest eigenvalue).
        sigma_max: Largest singular value, equal to the top eigenvalue.
        eigenvalues: Full spectrum, ascending.
        connected: Graph connectivity, decided by breadth-first search.
    """

    lambda2: float
    sigma_max: float
    eigenvalues: np.ndarray
    connected: bool


@dataclass(frozen=True)
class BVerdict:
    admissible: bool
    margin: float


class Graph:
    """Immutable undirected, unweighted graph on agents ``0..n-1``."""

    def __init__(self, n, edges=()):
        n = int(n)
        if n < 1:
            raise InvalidTopologyError(f"agent count must be positive, got {n}")
        seen = set()
        for e in edges:
            i, j = (int(v) for v in e)
            if i == j:
                raise InvalidTopologyError(f"self-loop at agent {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise InvalidTopologyError(f"edge ({i}, {j}) outside 0..{n - 1}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise InvalidTopologyError(f"duplicate edge {key}")
            seen.add(key)
        self.n = n
        self.edges = frozenset(seen)

        adj = np.zeros((n, n), dtype=np.int64)
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = 1
        lap = np.diag(adj.sum(axis=1)) - adj
        adj.setflags(write=False)
        self._adjacency = adj
        self._laplacian_int = lap
        lap_f = lap.astype(float)
        lap_f.setflags(write=False)
        self._laplacian = lap_f
        self._spectrum = _spectrum(lap_f, self.is_connected())

    def __repr__(self):
        return f"Graph(n={self.n}, edges={sorted(self.edges)})"

    def __eq__(self, other):
        return isinstance(other, Graph) and self.n == other.n and self.edges == other.edges

    def __hash__(self):
        return hash((self.n, self.edges))

    @property
    def adjacency(self):
        return self._adjacency

    @property
    def degrees(self):
        return self._adjacency.sum(axis=1)

    def neighbors(self, i):
        return [int(j) for j in np.flatnonzero(self._adjacency[i])]

    def is_connected(self):
        """Breadth-first search from agent 0."""
        seen = {0}
        queue = deque([0])
        while queue:
            i = queue.popleft()
            for j in self.neighbors(i):
                if j not in seen:
                    seen.add(j)
                    queue.append(j)
        return len(seen) == self.n


def _spectrum(lap, connected):
    eig = np.sort(np.linalg.eigvalsh(lap))
    eig.setflags(write=False)
    lambda2 = float(eig[1]) if lap.shape[0] > 1 else 0.0
    return SpectralSummary(
        lambda2=max(lambda2, 0.0),
        sigma_max=float(eig[-1]),
        eigenvalues=eig,
        connected=connected,
    )


def ring(n):
    """Cycle graph on ``n`` agents; ``n == 2`` is a single edge."""
    if n < 2:
        raise InvalidTopologyError(f"ring needs at least 2 agents, got {n}")
    if n == 2:
        return Graph(2, [(0, 1)])
    return Graph(n, [(i, (i + 1) % n) for i in range(n)])


def from_edges(n, edges):
    return Graph(n, edges)


def laplacian(g):
    """Dense Laplacian ``D - A`` as float64 (built from integers, so rows sum to exactly 0)."""
    return g._laplacian


def spectral_summary(g):
    return g._spectrum


def validate_b(g, b):
    """Check ``b * sigma_max(L) < 1`` strictly.

    Returns:
        BVerdict: ``admissible`` flag and the margin ``1 - b * sigma_max``.
    """
    if not b > 0:
        raise InvalidParameterError(f"b must be positive, got {b}")
    margin = 1.0 - b * g._spectrum.sigma_max
    return BVerdict(admissible=margin > 0, margin=margin)


def mixing_matrix(g, beta):
    """``W = I - beta * L``; symmetric with unit row and column sums."""
    return np.eye(g.n) - beta * g._laplacian


def projection_identity_check(g):
    """Max-abs deviation between the centering projector and ``L @ pinv(L)``.

    Near zero for connected graphs; at least 1/n-ish otherwise.
    """
    n = g.n
    lap = g._laplacian
    proj = np.eye(n) - np.ones((n, n)) / n
    return float(np.max(np.abs(proj - lap @ np.linalg.pinv(lap))))
