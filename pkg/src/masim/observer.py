"""Distributed leader-state observer with trust-confidence weighting.

Every agent integrates a private copy of the leader model, driven by a
two-term input on its trust-weighted observer error. Because the observer
layer exchanges only internally generated estimates, physical-channel
injections cannot touch it; hijacked estimates are downweighted through the
trust pipeline and, where connectivity permits, excised outright.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotStabilizable
from .graph import GraphMatrices
from .plant import SystemModel
from .riccati import solve_standard_are

__all__ = ["ObserverGains", "design_gains", "eta", "eta_all", "observer_input", "observer_input_all"]


@dataclass(frozen=True)
class ObserverGains:
    """Applied observer gains.

    F is the feedback row applied to the neighborhood observer error
    (neighbors minus own estimate); c must dominate the scaling-vector
    maximum over the smallest eigenvalue of the symmetrized weighted
    coupling; rho must dominate the leader input bound.
    """

    F: np.ndarray
    c: float
    rho: float
    P_obs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "F", np.atleast_2d(np.asarray(self.F, dtype=float)))


def design_gains(model: SystemModel, gm: GraphMatrices,
                 state_weight: np.ndarray | None = None,
                 c_margin: float = 1.1, rho_margin: float = 1.1) -> ObserverGains:
    """Observer gain selection with verified margins.

    F = B'P where P solves A'P + PA + Q - P B B' P = 0 (Q = state_weight,
    identity by default); the sign stabilizes the neighbors-minus-own error
    convention. c = c_margin * max(phi) / lambda_min of the symmetrized
    scaled coupling; rho = rho_margin * v_m. When a non-identity weight is
    used, the convergence argument additionally needs Q + F'F positive
    definite, which is verified here.
    """
    sol = solve_standard_are(model.A, model.B, Q=state_weight)
    P = sol.P
    F = model.B.T @ P
    Q = np.eye(model.n) if state_weight is None else np.asarray(state_weight, dtype=float)
    if np.linalg.eigvalsh(Q + F.T @ F).min() <= 0.0:
        raise NotStabilizable("state weight leaves a direction the observer gain cannot see")
    c = c_margin * float(gm.phi.max()) / gm.lambda_min_sym
    rho = rho_margin * model.v_m
    for lam in np.linalg.eigvals(gm.coupling):
        cl = np.linalg.eigvals(model.A - c * lam * (model.B @ F))
        if np.any(cl.real >= 0.0):
            raise NotStabilizable(f"observer loop unstable at coupling eigenvalue {lam:.4g}")
    return ObserverGains(F=F, c=float(c), rho=float(rho), P_obs=P)


def eta_all(observer_states: np.ndarray, leader_state: np.ndarray, gm: GraphMatrices,
            trust_weights: np.ndarray | None = None,
            control_mask: np.ndarray | None = None) -> np.ndarray:
    """Trust-weighted neighborhood observer errors, one row per agent.

    eta_i = sum_j w_ij a_ij (r_j - r_i) + b_i (leader - r_i), where
    w_ij = (sender confidence) * (edge trust) and excised edges are masked
    out. With all weights one this reduces to the unweighted error.
    """
    r = np.asarray(observer_states, dtype=float)
    w = gm.adjacency.copy()
    if trust_weights is not None:
        w = w * trust_weights
    if control_mask is not None:
        w = w * control_mask
    return w @ r - w.sum(axis=1)[:, None] * r + gm.pinning[:, None] * (leader_state[None, :] - r)


def eta(i: int, observer_states: np.ndarray, leader_state: np.ndarray, gm: GraphMatrices,
        trust_weights: np.ndarray | None = None,
        control_mask: np.ndarray | None = None) -> np.ndarray:
    """Neighborhood observer error of agent i (1-based id)."""
    return eta_all(observer_states, leader_state, gm, trust_weights, control_mask)[i - 1]


def observer_input_all(etas: np.ndarray, gains: ObserverGains, eps: float = 1e-6) -> np.ndarray:
    """Two-term observer input for every agent: c F eta + rho h(F eta)."""
    s = np.asarray(etas, dtype=float) @ gains.F.T
    return gains.c * s + gains.rho * (s / (np.linalg.norm(s, axis=1, keepdims=True) + eps))


def observer_input(eta_i: np.ndarray, gains: ObserverGains, eps: float = 1e-6) -> np.ndarray:
    """Observer input from one agent's neighborhood error."""
    s = gains.F @ np.asarray(eta_i, dtype=float)
    return gains.c * s + gains.rho * (s / (np.linalg.norm(s) + eps))
