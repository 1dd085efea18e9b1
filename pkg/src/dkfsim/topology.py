"""Directed sensor graphs with row-stochastic adjacency weights."""

from collections import deque
from importlib import resources
import json

import numpy as np


class TopologyError(ValueError):
    pass


class NetworkTopology:
    """Fixed directed graph on sensors ``0..N-1``.

    ``adjacency[i, j] > 0`` means sensor ``i`` receives from sensor ``j``.
    Every sensor is its own neighbor.
    """

    def __init__(self, adjacency, name="custom"):
        A = np.array(adjacency, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] == 0:
            raise TopologyError("adjacency must be a nonempty square matrix")
        if (A < 0).any():
            raise TopologyError("adjacency weights must be nonnegative")
        if (np.diag(A) <= 0).any():
            raise TopologyError("every diagonal weight must be positive")
        if not np.allclose(A.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise TopologyError("adjacency rows must sum to one")
        A.setflags(write=False)
        self.adjacency = A
        self.name = name

    @property
    def N(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        """Indices ``j`` with ``a_ij > 0``, self included, ascending."""
        return np.flatnonzero(self.adjacency[i] > 0)

    @property
    def edges(self):
        """Directed pairs ``(i, j)``: ``i`` receives from ``j``, ``i != j``."""
        rows, cols = np.nonzero(self.adjacency > 0)
        return [(int(i), int(j)) for i, j in zip(rows, cols) if i != j]

    def __repr__(self):
        return f"NetworkTopology(name={self.name!r}, N={self.N}, edges={len(self.edges)})"


def uniform_weights(edges, N: int, name="custom") -> NetworkTopology:
    """``a_ij = 1/|N_i|`` over in-neighbors plus self.

    ``edges`` holds ``(i, j)`` pairs meaning ``i`` receives from ``j``
    (0-based).
    """
    if N <= 0:
        raise TopologyError("N must be positive")
    mask = np.eye(N, dtype=bool)
    for i, j in edges:
        if not (0 <= i < N and 0 <= j < N):
            raise TopologyError(f"edge {(i, j)} out of range for N={N}")
        mask[i, j] = True
    A = mask / mask.sum(axis=1, keepdims=True)
    return NetworkTopology(A, name)


def _reachable(mask, start, reverse=False):
    M = mask.T if reverse else mask
    seen = np.zeros(len(M), dtype=bool)
    seen[start] = True
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(M[u]):
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return seen


def is_strongly_connected(topology: NetworkTopology) -> bool:
    # information flows j -> i when a_ij > 0
    flow = topology.adjacency.T > 0
    return bool(_reachable(flow, 0).all() and _reachable(flow, 0, reverse=True).all())


def check_primitivity(topology: NetworkTopology, s: int) -> bool:
    """True iff every entry of ``A^s`` is strictly positive."""
    if s < 1:
        raise ValueError("s must be at least 1")
    return bool((np.linalg.matrix_power(topology.adjacency, s) > 0).all())


def cycle(N: int, name=None) -> NetworkTopology:
    """Directed ring ``0 -> 1 -> ... -> N-1 -> 0``."""
    return uniform_weights([((j + 1) % N, j) for j in range(N)], N,
                           name or f"cycle{N}")


def undirected(edges, N: int, name="custom") -> NetworkTopology:
    both = [(i, j) for i, j in edges] + [(j, i) for i, j in edges]
    return uniform_weights(both, N, name)


def fig7_edges():
    """20-node undirected edge list (0-based pairs) used for the second study.

    Drawn by hand as a connected stand-in for the published picture; it is not
    a transcription of it.
    """
    data = json.loads(resources.files("dkfsim.data").joinpath("fig7_20node.json").read_text())
    return [tuple(e) for e in data["edges"]]


PRESETS = {
    "fig2_4cycle": lambda: cycle(4, "fig2_4cycle"),
    "fig7_20node": lambda: undirected(fig7_edges(), 20, "fig7_20node"),
}


def preset(name: str) -> NetworkTopology:
    try:
        return PRESETS[name]()
    except KeyError:
        raise TopologyError(f"unknown topology preset {name!r}") from None
