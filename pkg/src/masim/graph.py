"""Leader-rooted communication digraph and the matrices derived from it.

Follower agents are numbered 1..N; id 0 denotes the leader and appears only
in traces, never inside the topology. An edge (j, i, a) means agent i
receives agent j's broadcast with weight a. Pinning gains b_i > 0 mark
direct leader links.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositivePhi, SpanningTreeMissing

__all__ = [
    "GraphTopology",
    "GraphMatrices",
    "build_matrices",
    "has_spanning_tree",
    "connectivity_margin",
]


@dataclass(frozen=True)
class GraphTopology:
    """Immutable description of the follower digraph plus leader pinning.

    edges are (sender, receiver, weight) triples with 1-based agent ids.
    """

    n_agents: int
    edges: tuple[tuple[int, int, float], ...]
    pinning: tuple[float, ...]

    def __post_init__(self):
        n = self.n_agents
        if n < 1:
            raise ValueError("need at least one follower agent")
        object.__setattr__(self, "edges", tuple((int(j), int(i), float(a)) for j, i, a in self.edges))
        object.__setattr__(self, "pinning", tuple(float(b) for b in self.pinning))
        if len(self.pinning) != n:
            raise ValueError(f"pinning vector has {len(self.pinning)} entries for {n} agents")
        seen = set()
        for j, i, a in self.edges:
            if not (1 <= j <= n and 1 <= i <= n):
                raise ValueError(f"edge ({j},{i}) references an unknown agent id")
            if j == i:
                raise ValueError(f"self-loop on agent {i}")
            if a <= 0.0:
                raise ValueError(f"edge ({j},{i}) weight must be positive, got {a}")
            if (j, i) in seen:
                raise ValueError(f"duplicate edge ({j},{i})")
            seen.add((j, i))
        if any(b < 0.0 for b in self.pinning):
            raise ValueError("pinning gains must be nonnegative")
        if not any(b > 0.0 for b in self.pinning):
            raise ValueError("at least one agent must be pinned to the leader")

    def in_neighbors(self, i: int) -> tuple[int, ...]:
        """Ids of agents whose broadcasts agent i receives, ascending."""
        return tuple(sorted(j for j, k, _ in self.edges if k == i))

    @property
    def adjacency(self) -> np.ndarray:
        """In-adjacency matrix: row i holds the weights agent i+1 listens with."""
        a = np.zeros((self.n_agents, self.n_agents))
        for j, i, w in self.edges:
            a[i - 1, j - 1] = w
        return a


@dataclass(frozen=True)
class GraphMatrices:
    """Matrices and scalars derived from a topology.

    coupling is the grounded matrix (laplacian plus pinning); phi solves
    coupling.T @ phi = 1 and scales the quadratic form used by the observer
    gain bound.
    """

    laplacian: np.ndarray
    pinning_matrix: np.ndarray
    coupling: np.ndarray
    phi: np.ndarray
    Phi: np.ndarray
    lambda_min_sym: float
    adjacency: np.ndarray = field(repr=False)
    pinning: np.ndarray = field(repr=False)
    min_real_eig: float = field(repr=False, default=float("nan"))

    @property
    def n_agents(self) -> int:
        return self.coupling.shape[0]


def has_spanning_tree(topology: GraphTopology) -> bool:
    """True iff every follower is reachable from the leader via pinning + edges."""
    n = topology.n_agents
    frontier = [i for i in range(1, n + 1) if topology.pinning[i - 1] > 0.0]
    out_lists: dict[int, list[int]] = {i: [] for i in range(1, n + 1)}
    for j, i, _ in topology.edges:
        out_lists[j].append(i)
    reached = set(frontier)
    while frontier:
        nxt = frontier.pop()
        for child in out_lists[nxt]:
            if child not in reached:
                reached.add(child)
                frontier.append(child)
    return len(reached) == n


def build_matrices(topology: GraphTopology) -> GraphMatrices:
    """Compute laplacian, pinning, coupling, scaling vector, and eigen margins.

    Raises SpanningTreeMissing when the coupling matrix is singular (no
    leader-rooted spanning tree) and NonPositivePhi when the scaling vector
    fails to be componentwise positive.
    """
    n = topology.n_agents
    adjacency = topology.adjacency
    degree = np.diag(adjacency.sum(axis=1))
    laplacian = degree - adjacency
    pinning = np.asarray(topology.pinning, dtype=float)
    pinning_matrix = np.diag(pinning)
    coupling = laplacian + pinning_matrix

    if not has_spanning_tree(topology):
        raise SpanningTreeMissing(
            "no leader-rooted spanning tree: some agent receives no information path"
        )
    # A reachable pinned digraph yields a nonsingular M-matrix; guard anyway.
    if abs(np.linalg.det(coupling)) < 1e-12 * max(1.0, np.abs(coupling).max()) ** n:
        raise SpanningTreeMissing("coupling matrix is numerically singular")

    phi = np.linalg.solve(coupling.T, np.ones(n))
    if np.any(phi <= 0.0):
        raise NonPositivePhi(f"scaling vector has non-positive entries: {phi}")
    Phi = np.diag(phi)
    sym = Phi @ coupling + coupling.T @ Phi
    lambda_min_sym = float(np.linalg.eigvalsh(sym).min())
    min_real_eig = float(np.linalg.eigvals(coupling).real.min())
    return GraphMatrices(
        laplacian=laplacian,
        pinning_matrix=pinning_matrix,
        coupling=coupling,
        phi=phi,
        Phi=Phi,
        lambda_min_sym=lambda_min_sym,
        adjacency=adjacency,
        pinning=pinning,
        min_real_eig=min_real_eig,
    )


def connectivity_margin(topology: GraphTopology, compromised: frozenset[int] | set[int] = frozenset()) -> int:
    """Largest f such that the relevant intact agents keep 2f+1 in-neighbors.

    In-neighbor counts include the leader link. When a compromised set is
    given, only intact agents that actually listen to a compromised agent
    are constrained (they are the ones that must be able to discard data);
    with no compromised set, all intact agents count. Returns 0 when some
    constrained agent has a single information source.
    """
    compromised = set(compromised)
    n = topology.n_agents
    counts = []
    for i in range(1, n + 1):
        if i in compromised:
            continue
        sources = topology.in_neighbors(i)
        if compromised and not any(j in compromised for j in sources):
            continue
        total = len(sources) + (1 if topology.pinning[i - 1] > 0.0 else 0)
        counts.append(total)
    if not counts:
        # Nobody listens to a compromised agent: fall back to all intact agents.
        for i in range(1, n + 1):
            if i in compromised:
                continue
            total = len(topology.in_neighbors(i)) + (1 if topology.pinning[i - 1] > 0.0 else 0)
            counts.append(total)
    if not counts:
        return 0
    return max(0, (min(counts) - 1) // 2)
