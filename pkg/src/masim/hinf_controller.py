"""Per-agent observer-tracking controller with a guaranteed disturbance gain.

The tracked quantity is the agent's own observer estimate: stacking the
tracking error eps = x - r on top of the estimate r gives an augmented
linear system driven by the control, the physical-channel disturbance, and
the observer input. A discounted two-player Riccati design yields a state
feedback whose discounted output energy is bounded by gamma^2 times the
disturbance energy, no matter what the attacker injects on the physical
channel.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, ZeroAttackEnergy
from .plant import SystemModel
from .riccati import AreProblem, solve_discounted_game_are

__all__ = [
    "AugmentedSystem",
    "GareSolution",
    "assemble",
    "solve",
    "control",
    "worst_case_attack",
    "pi_quasi_steady",
    "pi_filter_rate",
    "gamma_rate",
    "L2Result",
    "l2_gain_ratio",
]


@dataclass(frozen=True)
class AugmentedSystem:
    """Stacked (tracking error, observer estimate) system and cost weights.

    T = blkdiag(A, A); B1 = [B; 0]; D1 = [D; 0]; E1 = [-B; B];
    Q = blkdiag(Q1, 0). Only the tracking-error block is penalized: the
    estimate block is driven by the observer layer and costs nothing here.
    """

    T: np.ndarray
    B1: np.ndarray
    D1: np.ndarray
    E1: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    alpha: float
    gamma: float

    @property
    def n2(self) -> int:
        return self.T.shape[0]

    @property
    def m(self) -> int:
        return self.B1.shape[1]

    @property
    def d(self) -> int:
        return self.D1.shape[1]


def assemble(model: SystemModel, Q1: np.ndarray, R: np.ndarray, alpha: float,
             gamma: float) -> AugmentedSystem:
    """Build the augmented system from the plant model and cost weights."""
    n, m, d = model.n, model.m, model.d
    Q1 = np.atleast_2d(np.asarray(Q1, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if Q1.shape != (n, n):
        raise DimensionMismatch(f"Q1 must be {n}x{n}")
    if R.shape != (m, m):
        raise DimensionMismatch(f"R must be {m}x{m}")
    if alpha < 0.0 or gamma <= 0.0:
        raise ValueError("need alpha >= 0 and gamma > 0")
    Z = np.zeros((n, n))
    T = np.block([[model.A, Z], [Z, model.A]])
    B1 = np.vstack([model.B, np.zeros_like(model.B)])
    D1 = np.vstack([model.D, np.zeros_like(model.D)])
    E1 = np.vstack([-model.B, model.B])
    Q = np.block([[Q1, Z], [Z, Z]])
    return AugmentedSystem(T=T, B1=B1, D1=D1, E1=E1, Q=Q, R=R, alpha=float(alpha), gamma=float(gamma))


@dataclass(frozen=True)
class GareSolution:
    """Value-function parameters and the gains derived from them.

    K and W are the minimizing control and maximizing disturbance feedbacks.
    For model-based solutions the affine feedforward is available in two
    modes: "quasi_steady" solves the affine-term equation pointwise in the
    observer input (matrix M_pi, feedforward G_ff), while "filter" integrates
    the affine-term differential equation forward (states owned by the
    caller; the forcing matrix A_pi is anti-stable, so divergence detection
    is mandatory). Learned solutions carry constant Pi/g/w estimates from the
    regression instead; source records which path produced the object.
    """

    aug: AugmentedSystem | None
    P: np.ndarray
    K: np.ndarray
    W: np.ndarray
    residual_norm: float
    pi_mode: str = "quasi_steady"
    source: str = "model"
    A_pi: np.ndarray | None = field(default=None, repr=False)
    M_pi: np.ndarray | None = field(default=None, repr=False)
    G_ff: np.ndarray | None = field(default=None, repr=False)
    Pi_const: np.ndarray | None = field(default=None, repr=False)
    g_const: np.ndarray | None = field(default=None, repr=False)
    w_const: np.ndarray | None = field(default=None, repr=False)
    Gamma_const: float = field(default=0.0, repr=False)


def solve(aug: AugmentedSystem, pi_mode: str = "quasi_steady") -> GareSolution:
    """Solve the discounted two-player design for the augmented system.

    The affine term's defining equation is an ODE with no stated boundary
    condition; the default mode treats the observer input as slowly varying
    and solves the algebraic (rate-zero) version pointwise, which is always
    well-posed. The value offset term is tracked by callers for diagnostics
    only; the control never depends on it.
    """
    if pi_mode not in ("quasi_steady", "filter"):
        raise ValueError(f"unknown pi_mode {pi_mode!r}")
    problem = AreProblem(A=aug.T, B=aug.B1, Q=aug.Q, R=aug.R, D1=aug.D1,
                         gamma=aug.gamma, alpha=aug.alpha)
    sol = solve_discounted_game_are(problem)
    P = sol.P
    Rinv = np.linalg.inv(aug.R)
    K = -Rinv @ aug.B1.T @ P
    W = (aug.D1.T @ P) / aug.gamma**2
    T_cl = aug.T + aug.B1 @ K + (aug.D1 @ aug.D1.T @ P) / aug.gamma**2
    A_pi = aug.alpha * np.eye(aug.n2) - T_cl.T
    M_pi = np.linalg.solve(A_pi, P @ aug.E1)
    G_ff = -Rinv @ aug.B1.T @ M_pi
    return GareSolution(
        aug=aug, P=P, K=K, W=W, residual_norm=sol.residual_norm,
        pi_mode=pi_mode, source="model", A_pi=A_pi, M_pi=M_pi, G_ff=G_ff,
    )


def pi_quasi_steady(sol: GareSolution, ups: np.ndarray) -> np.ndarray:
    """Algebraic affine term for the current observer input."""
    return sol.M_pi @ np.asarray(ups, dtype=float)


def pi_filter_rate(sol: GareSolution, Pi: np.ndarray, ups: np.ndarray) -> np.ndarray:
    """Rate of the affine-term filter: Pidot = A_pi Pi - P E1 ups."""
    return sol.A_pi @ np.asarray(Pi, dtype=float) - sol.P @ (sol.aug.E1 @ np.asarray(ups, dtype=float))


def gamma_rate(sol: GareSolution, Gamma: float, Pi: np.ndarray,
               ups: np.ndarray) -> float:
    """Rate of the value offset term (diagnostics only)."""
    aug = sol.aug
    Pi = np.asarray(Pi, dtype=float)
    Rinv = np.linalg.inv(aug.R)
    t1 = float(Pi @ aug.B1 @ Rinv @ aug.B1.T @ Pi)
    t2 = float(Pi @ aug.D1 @ aug.D1.T @ Pi) / aug.gamma**2
    t3 = 2.0 * float(np.asarray(ups, dtype=float) @ aug.E1.T @ Pi)
    return aug.alpha * float(Gamma) + t1 - t2 - t3


def control(X: np.ndarray, sol: GareSolution, ups: np.ndarray | None = None,
            Pi: np.ndarray | None = None) -> np.ndarray:
    """Evaluate the control policy u = K X + feedforward.

    Model-based solutions derive the feedforward from the affine term: the
    quasi-steady mode maps the observer input through G_ff, the filter mode
    consumes the caller-integrated Pi state. Learned solutions add their
    constant regression estimate g.
    """
    X = np.asarray(X, dtype=float)
    u = sol.K @ X
    if sol.source == "learned":
        if sol.g_const is not None:
            u = u + sol.g_const
        return u
    if Pi is not None:
        Rinv = np.linalg.inv(sol.aug.R)
        return u - Rinv @ (sol.aug.B1.T @ np.asarray(Pi, dtype=float))
    if ups is not None:
        return u + sol.G_ff @ np.asarray(ups, dtype=float)
    return u


def worst_case_attack(X: np.ndarray, sol: GareSolution, ups: np.ndarray | None = None,
                      Pi: np.ndarray | None = None) -> np.ndarray:
    """Evaluate the maximizing disturbance policy gamma^-2 D1'(P X + Pi)."""
    X = np.asarray(X, dtype=float)
    w = sol.W @ X
    if sol.source == "learned":
        if sol.w_const is not None:
            w = w + sol.w_const
        return w
    if Pi is None and ups is not None and sol.M_pi is not None:
        Pi = sol.M_pi @ np.asarray(ups, dtype=float)
    if Pi is not None:
        w = w + (sol.aug.D1.T @ np.asarray(Pi, dtype=float)) / sol.aug.gamma**2
    return w


@dataclass(frozen=True)
class L2Result:
    """Discounted energy ratio with its certification bound.

    ratio <= bound + slack certifies the design; slack is the value of the
    stored quadratic form at attack onset divided by the attack energy.
    """

    ratio: float
    bound: float
    slack: float
    numerator: float
    denominator: float
    onset_time: float

    @property
    def passed(self) -> bool:
        return self.ratio <= self.bound + self.slack + 1e-12


def l2_gain_ratio(ts: np.ndarray, eps_states: np.ndarray, u: np.ndarray,
                  omega: np.ndarray, Q1: np.ndarray, R: np.ndarray, alpha: float,
                  gamma: float, P: np.ndarray | None = None,
                  r_states: np.ndarray | None = None) -> L2Result:
    """Discounted output-to-attack energy ratio along a recorded trace.

    numerator = integral of exp(-alpha (t - t0)) (eps' Q1 eps + u' R u),
    denominator = same discounting of ||omega||^2, both by trapezoid rule
    from the attack onset t0 (first sample with nonzero omega). Passing P
    (and the estimate trace) adds the stored-energy slack at onset to the
    certification bound. Raises ZeroAttackEnergy when omega vanishes
    identically.
    """
    ts = np.asarray(ts, dtype=float)
    eps_states = np.atleast_2d(np.asarray(eps_states, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float).reshape(len(ts), -1))
    omega = np.atleast_2d(np.asarray(omega, dtype=float).reshape(len(ts), -1))
    Q1 = np.atleast_2d(np.asarray(Q1, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    nz = np.nonzero(np.linalg.norm(omega, axis=1) > 0.0)[0]
    if nz.size == 0:
        raise ZeroAttackEnergy("disturbance is identically zero on the trace")
    i0 = int(nz[0])
    t0 = float(ts[i0])
    tt = ts[i0:]
    disc = np.exp(-alpha * (tt - t0))
    out_power = np.einsum("ti,ij,tj->t", eps_states[i0:], Q1, eps_states[i0:])
    out_power = out_power + np.einsum("ti,ij,tj->t", u[i0:], R, u[i0:])
    atk_power = (omega[i0:] ** 2).sum(axis=1)
    numerator = float(np.trapezoid(disc * out_power, tt))
    denominator = float(np.trapezoid(disc * atk_power, tt))
    if denominator <= 0.0:
        raise ZeroAttackEnergy("attack energy is zero over the trace")
    slack = 0.0
    if P is not None:
        X0 = np.concatenate([
            eps_states[i0],
            r_states[i0] if r_states is not None else np.zeros(P.shape[0] - eps_states.shape[1]),
        ])
        slack = float(X0 @ P @ X0) / denominator
    return L2Result(
        ratio=numerator / denominator,
        bound=float(gamma) ** 2,
        slack=slack,
        numerator=numerator,
        denominator=denominator,
        onset_time=t0,
    )
