"""Per-agent confidence and per-edge trust from local observer evidence.

Each agent runs two estimators on the data it already receives:

  confidence C_i: a first-order filter of the gap statistic
      q_i = Delta / (Delta + |s_i - o_i|),
  where o_i is the norm of the (weighted) observer error actually used for
  control and s_i is the unweighted sum of received-difference norms. A
  vector sum that keeps cancelling while the norm sum stays large is the
  signature of corrupted incoming data.

  edge trust T_ij = max(C_i, d_ij): d_ij filters the locality statistic
      l_ij = theta / (||r_j - h_i|| + theta),
  with h_i the plain average of the received neighbor observers. A sender
  far from the neighborhood average loses trust first.

A compromised agent is assumed to broadcast confidence 1 to its neighbors
(worst case), so the receiving side's own statistics carry the detection
burden. All filter states live in [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import GraphMatrices, GraphTopology

__all__ = [
    "TrustParams",
    "gap_statistic",
    "confidence_rate",
    "evidence_rate",
    "observe",
    "update_confidence",
    "update_trust",
    "trust_values",
    "excision_capacity",
    "select_excision",
]


@dataclass(frozen=True)
class TrustParams:
    """Monitor constants; the defaults give 0.1 s filter time constants and
    thresholds wide enough to ignore integrator noise."""

    delta: float = 0.1
    theta: float = 0.1
    beta: float = 10.0
    kappa: float = 10.0
    alarm_level: float = 0.9
    arm_time: float = 0.0
    normalize: bool = False
    excision: bool = True

    def __post_init__(self):
        for name in ("delta", "theta", "beta", "kappa"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.alarm_level <= 1.0:
            raise ValueError("alarm_level must lie in (0, 1]")
        if self.arm_time < 0.0:
            raise ValueError("arm_time must be nonnegative")


def gap_statistic(o: np.ndarray, s: np.ndarray, delta: float) -> np.ndarray:
    """q = delta / (delta + |s - o|), elementwise; equals 1 when evidence agrees."""
    return delta / (delta + np.abs(np.asarray(s) - np.asarray(o)))


def confidence_rate(C: np.ndarray, q: np.ndarray, beta: float) -> np.ndarray:
    """Right-hand side of the confidence filter Cdot = beta (q - C)."""
    return beta * (np.asarray(q) - np.asarray(C))


def evidence_rate(d: np.ndarray, l: np.ndarray, kappa: float) -> np.ndarray:
    """Right-hand side of the edge-evidence filter ddot = kappa (l - d)."""
    return kappa * (np.asarray(l) - np.asarray(d))


def _rk4_scalar_filter(state, target, rate, dt):
    """Exact-order RK4 step of xdot = rate (target - x) with target frozen."""
    k1 = rate * (target - state)
    k2 = rate * (target - (state + 0.5 * dt * k1))
    k3 = rate * (target - (state + 0.5 * dt * k2))
    k4 = rate * (target - (state + dt * k3))
    return state + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def observe(i: int, observer_states: np.ndarray, leader_state: np.ndarray,
            gm: GraphMatrices, trust_weights: np.ndarray, params: TrustParams,
            control_mask: np.ndarray | None = None) -> tuple[float, float, float]:
    """Evidence pair and gap statistic of agent i (1-based id).

    trust_weights[i-1, j-1] multiplies edge (j -> i) in the control-side
    observer error (sender confidence times edge trust); control_mask zeroes
    edges the agent has excised. The raw statistic s always sums over the
    full neighbor set.
    """
    r = np.asarray(observer_states, dtype=float)
    idx = i - 1
    b = gm.pinning[idx]
    adj_row = gm.adjacency[idx]
    diffs = r - r[idx][None, :]
    mask = np.ones_like(adj_row) if control_mask is None else control_mask
    eta = ((trust_weights[idx] * adj_row * mask)[:, None] * diffs).sum(axis=0)
    eta = eta + b * (leader_state - r[idx])
    o = float(np.linalg.norm(eta))
    s = float((adj_row * np.linalg.norm(diffs, axis=1)).sum()
              + b * np.linalg.norm(leader_state - r[idx]))
    q = float(params.delta / (params.delta + abs(s - o)))
    return o, s, q


def update_confidence(q: float | np.ndarray, C: float | np.ndarray, beta: float,
                      dt: float) -> float | np.ndarray:
    """One RK4 step of the confidence filter, clipped into [0, 1]."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    out = _rk4_scalar_filter(np.asarray(C, dtype=float), np.asarray(q, dtype=float), beta, dt)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if np.ndim(C) == 0 else out


def update_trust(i: int, j: int, observer_states: np.ndarray, C_i: float,
                 d_ij: float, kappa: float, theta: float, dt: float,
                 in_neighbors: tuple[int, ...]) -> tuple[float, float, float]:
    """One step of the edge (j -> i) trust pipeline.

    Returns (T_ij, d_ij_next, l_ij). h_i averages the received neighbor
    observers only; the leader is never part of the average.
    """
    if not in_neighbors:
        raise ValueError("agent has no in-neighbors; edge trust undefined")
    r = np.asarray(observer_states, dtype=float)
    h_i = r[[k - 1 for k in in_neighbors]].mean(axis=0)
    l_ij = theta / (np.linalg.norm(r[j - 1] - h_i) + theta)
    d_next = float(np.clip(_rk4_scalar_filter(d_ij, l_ij, kappa, dt), 0.0, 1.0))
    return max(C_i, d_next), d_next, float(l_ij)


def trust_values(C_i: float, d_row: np.ndarray, normalize: bool = False) -> np.ndarray:
    """T_ij = max(C_i, d_ij) over an agent's in-edges, optionally normalized
    to sum to one."""
    T = np.maximum(C_i, np.asarray(d_row, dtype=float))
    if normalize and T.size:
        total = T.sum()
        if total > 0.0:
            T = T / total
    return T


def excision_capacity(topology: GraphTopology) -> np.ndarray:
    """Edges each agent can drop while keeping a majority of honest sources.

    f_i = floor((indegree_i + pinned_i - 1) / 2): the classic majority rule
    counting the leader link as one trusted source.
    """
    caps = np.zeros(topology.n_agents, dtype=int)
    for i in range(1, topology.n_agents + 1):
        sources = len(topology.in_neighbors(i)) + (1 if topology.pinning[i - 1] > 0 else 0)
        caps[i - 1] = max(0, (sources - 1) // 2)
    return caps


def select_excision(d_values: dict[int, float], capacity: int) -> tuple[int, ...]:
    """Pick the senders to drop: the `capacity` lowest-evidence edges.

    Ties break toward the lower agent id so runs are reproducible.
    """
    if capacity <= 0:
        return ()
    ranked = sorted(d_values.items(), key=lambda kv: (kv[1], kv[0]))
    return tuple(sorted(j for j, _ in ranked[:capacity]))
