"""Standard (non-resilient) distributed tracking protocol.

Each agent applies a two-term control on its local neighborhood tracking
error: a proportional term and a relay term that rejects the bounded leader
input. This controller synchronizes an intact network but is the designated
victim of resonant channel injections: an attacker matching a plant mode
drives every tracking error to zero while detaching downstream agents from
the leader.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotStabilizable
from .graph import GraphMatrices
from .plant import SystemModel
from .riccati import solve_standard_are

__all__ = [
    "BaselineGains",
    "design_baseline_gains",
    "normalizer",
    "local_tracking_error",
    "local_tracking_errors",
    "control",
    "control_all",
]

DEFAULT_BOUNDARY_LAYER = 1e-6


@dataclass(frozen=True)
class BaselineGains:
    """Applied protocol gains.

    c1 scales the proportional term and must dominate the reciprocal of the
    coupling matrix's smallest eigenvalue real part; c2 scales the relay and
    must dominate the leader input bound; K is the feedback row applied to
    the neighborhood error (measured as neighbors minus own state).
    """

    c1: float
    c2: float
    K: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "K", np.atleast_2d(np.asarray(self.K, dtype=float)))


def design_baseline_gains(model: SystemModel, gm: GraphMatrices,
                          state_weight: np.ndarray | None = None,
                          gain_scale: float = 1.0,
                          c1_margin: float = 1.1,
                          c2_margin: float = 1.1) -> BaselineGains:
    """Riccati-based gain selection with verified certificates.

    K = B' X_eff where X_eff = gain_scale * X and X solves the design
    equation A'X + XA + Q - X B B' X = 0 (Q = state_weight, identity by
    default). The sign makes the loop stable for the neighbors-minus-own
    error convention used throughout this package. Both certificates are
    re-verified numerically on the scaled gain: the inverse-form matrix
    inequality and Hurwitz closed loops at every coupling eigenvalue.
    """
    if gain_scale < 1.0:
        raise ValueError("gain_scale below 1 voids the design certificate")
    X = solve_standard_are(model.A, model.B, Q=state_weight).P * gain_scale
    K = model.B.T @ X
    # Inverse-form certificate on the scaled solution.
    cert = model.A.T @ X + X @ model.A - 2.0 * X @ (model.B @ model.B.T) @ X
    if np.linalg.eigvalsh(0.5 * (cert + cert.T)).max() >= 0.0:
        raise NotStabilizable("scaled design violates the matrix inequality certificate")
    c1 = c1_margin / gm.min_real_eig
    c2 = c2_margin * model.v_m
    for lam in np.linalg.eigvals(gm.coupling):
        cl = np.linalg.eigvals(model.A - c1 * lam * (model.B @ K))
        if np.any(cl.real >= 0.0):
            raise NotStabilizable(
                f"closed loop unstable at coupling eigenvalue {lam:.4g}"
            )
    return BaselineGains(c1=float(c1), c2=float(c2), K=K)


def normalizer(x: np.ndarray, eps: float = DEFAULT_BOUNDARY_LAYER) -> np.ndarray:
    """Smoothed unit-vector map x / (||x|| + eps).

    The exact normalizer is discontinuous at the origin; the boundary layer
    eps trades a small steady residual for integrator stability.
    """
    x = np.asarray(x, dtype=float)
    return x / (np.linalg.norm(x) + eps)


def _rows_normalized(S: np.ndarray, eps: float) -> np.ndarray:
    return S / (np.linalg.norm(S, axis=1, keepdims=True) + eps)


def local_tracking_errors(states: np.ndarray, leader_state: np.ndarray,
                          gm: GraphMatrices) -> np.ndarray:
    """All local neighborhood tracking errors, one row per agent.

    e_i = sum_j a_ij (x_j - x_i) + b_i (leader - x_i).
    """
    x = np.asarray(states, dtype=float)
    adj = gm.adjacency
    deg = adj.sum(axis=1)
    return adj @ x - deg[:, None] * x + gm.pinning[:, None] * (leader_state[None, :] - x)


def local_tracking_error(i: int, states: np.ndarray, leader_state: np.ndarray,
                         gm: GraphMatrices) -> np.ndarray:
    """Local neighborhood tracking error of agent i (1-based id)."""
    return local_tracking_errors(states, leader_state, gm)[i - 1]


def control_all(states: np.ndarray, leader_state: np.ndarray, gains: BaselineGains,
                gm: GraphMatrices, eps: float = DEFAULT_BOUNDARY_LAYER) -> np.ndarray:
    """Two-term control for every agent: u = c1 K e + c2 h(K e), rows are agents."""
    e = local_tracking_errors(states, leader_state, gm)
    s = e @ gains.K.T
    return gains.c1 * s + gains.c2 * _rows_normalized(s, eps)


def control(i: int, states: np.ndarray, leader_state: np.ndarray, gains: BaselineGains,
            gm: GraphMatrices, eps: float = DEFAULT_BOUNDARY_LAYER) -> np.ndarray:
    """Control input of agent i (1-based id)."""
    return control_all(states, leader_state, gains, gm, eps=eps)[i - 1]
