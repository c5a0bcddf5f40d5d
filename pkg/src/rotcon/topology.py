"""Communication graphs for the consensus protocols.

Edges are ordered pairs (i, j) meaning "agent j can communicate its state
to agent i".  Every node carries a self-loop.  Experiment topologies are
symmetric; custom graphs from edge-list files may not be.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path


class TopologyError(ValueError):
    """Raised for invalid graph construction arguments."""


@dataclass(frozen=True)
class CommGraph:
    """Directed communication graph with mandatory self-loops."""

    N: int
    edges: frozenset[tuple[int, int]]
    # i -> sorted incoming neighbors {j : (i,j) in edges}, self included
    _in: dict[int, tuple[int, ...]] = field(init=False, repr=False, compare=False)
    # j -> sorted {i : (i,j) in edges}: nodes that receive from j
    _out: dict[int, tuple[int, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for (i, j) in self.edges:
            if not (0 <= i < self.N and 0 <= j < self.N):
                raise TopologyError(f"edge ({i},{j}) references node outside 0..{self.N - 1}")
        for i in range(self.N):
            if (i, i) not in self.edges:
                raise TopologyError(f"missing self-loop at node {i}")
        incoming = {i: tuple(sorted(j for (a, j) in self.edges if a == i)) for i in range(self.N)}
        outgoing = {j: tuple(sorted(i for (i, b) in self.edges if b == j)) for j in range(self.N)}
        object.__setattr__(self, "_in", incoming)
        object.__setattr__(self, "_out", outgoing)

    def in_neighbors(self, i: int) -> tuple[int, ...]:
        """Nodes that can send their state to i (self included)."""
        if not 0 <= i < self.N:
            raise TopologyError(f"node {i} outside 0..{self.N - 1}")
        return self._in[i]

    def receivers(self, j: int) -> tuple[int, ...]:
        """Nodes i with (i, j) in the edge set, i.e. that hear from j."""
        if not 0 <= j < self.N:
            raise TopologyError(f"node {j} outside 0..{self.N - 1}")
        return self._out[j]


def from_edges(N: int, pairs, warn_missing_self_loops: bool = True) -> CommGraph:
    """Build a graph from explicit ordered pairs; self-loops added if absent."""
    if N < 1:
        raise TopologyError(f"N={N} must be >= 1")
    edges = {(int(i), int(j)) for (i, j) in pairs}
    missing = [i for i in range(N) if (i, i) not in edges]
    if missing and warn_missing_self_loops:
        warnings.warn(f"adding missing self-loops at nodes {missing[:8]}{'...' if len(missing) > 8 else ''}")
    edges.update((i, i) for i in range(N))
    return CommGraph(N=N, edges=frozenset(edges))


def ring(N: int, hops: int = 1) -> CommGraph:
    """Ring of N nodes where each talks to all neighbors within ``hops``."""
    if N < 2:
        raise TopologyError(f"ring needs N >= 2, got {N}")
    if hops < 1 or hops >= N / 2:
        raise TopologyError(f"ring hops must satisfy 1 <= hops < N/2, got hops={hops}, N={N}")
    pairs = set()
    for i in range(N):
        for h in range(1, hops + 1):
            pairs.add((i, (i + h) % N))
            pairs.add((i, (i - h) % N))
    return from_edges(N, pairs, warn_missing_self_loops=False)


def complete(N: int) -> CommGraph:
    """All-to-all communication."""
    if N < 1:
        raise TopologyError(f"complete graph needs N >= 1, got {N}")
    return from_edges(N, ((i, j) for i in range(N) for j in range(N)),
                      warn_missing_self_loops=False)


def is_strongly_connected(g: CommGraph) -> bool:
    """True iff every node can reach every node along directed edges."""

    def reaches_all(neighbors) -> bool:
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in neighbors(u):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == g.N

    # (i,j) means j sends to i: information flows j -> i, so in_neighbors
    # traverses edges backwards and receivers forwards.
    return reaches_all(g.receivers) and reaches_all(g.in_neighbors)


def load_edge_list(path) -> CommGraph:
    """Read a graph from a text file of "i j" pairs, 0-indexed.

    Lines starting with '#' are comments.  N is one plus the largest node
    id.  Missing self-loops are added with a warning.
    """
    path = Path(path)
    pairs = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise TopologyError(f"{path}:{lineno}: expected 'i j', got {raw!r}")
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError as exc:
            raise TopologyError(f"{path}:{lineno}: non-integer node id in {raw!r}") from exc
    if not pairs:
        raise TopologyError(f"{path}: no edges found")
    n = 1 + max(max(i, j) for (i, j) in pairs)
    return from_edges(n, pairs)
