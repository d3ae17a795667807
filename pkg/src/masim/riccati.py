"""Continuous-time Riccati solvers used by every controller design path.

Three entry points:

  solve_standard_are      A'P + PA + Q - P B B' P = 0 (Q defaults to I)
  solve_inverse_form_lmi  inverse-form certificate A P + P A' - 2 B B' < 0
  solve_discounted_game_are
                          discounted two-player equation
                          T'P + PT - aP + Q - P B1 R^-1 B1' P + g^-2 P D1 D1' P = 0

All solve through an ordered real Schur decomposition of the associated
Hamiltonian; a Kleinman-style Newton iteration backs up the Schur route when
the stable invariant subspace is ill-conditioned. scipy supplies only the
factorization primitives.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, GammaTooSmall, NotStabilizable

__all__ = [
    "AreProblem",
    "AreSolution",
    "solve_standard_are",
    "solve_inverse_form_lmi",
    "solve_discounted_game_are",
]

_HURWITZ_MARGIN = 1e-9
_PBH_TOL = 1e-9


@dataclass(frozen=True)
class AreProblem:
    """Data for the discounted two-player equation.

    D1/gamma describe the adversarial channel; leaving them None reduces the
    problem to a discounted single-player design.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    D1: np.ndarray | None = None
    gamma: float | None = None
    alpha: float = 0.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float).reshape(A.shape[0], -1)
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        n = A.shape[0]
        if A.shape != (n, n) or Q.shape != (n, n) or B.shape[0] != n:
            raise DimensionMismatch("A, B, Q dimensions are inconsistent")
        if R.shape[0] != R.shape[1] or R.shape[0] != B.shape[1]:
            raise DimensionMismatch("R must be m x m for B n x m")
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise ValueError("Q must be symmetric")
        if not np.allclose(R, R.T, atol=1e-12):
            raise ValueError("R must be symmetric")
        if np.linalg.eigvalsh(R).min() <= 0.0:
            raise ValueError("R must be positive definite")
        if np.linalg.eigvalsh(Q).min() < -1e-10:
            raise ValueError("Q must be positive semidefinite")
        if self.D1 is not None:
            D1 = np.asarray(self.D1, dtype=float).reshape(n, -1)
            object.__setattr__(self, "D1", D1)
            if self.gamma is None or self.gamma <= 0.0:
                raise ValueError("gamma must be positive when an attack channel is present")
        if self.alpha < 0.0:
            raise ValueError("discount must be nonnegative")


@dataclass(frozen=True)
class AreSolution:
    P: np.ndarray
    residual_norm: float
    stabilizing: bool
    closed_loop_eigs: np.ndarray = field(repr=False, default=None)


def _pbh_stabilizable(A: np.ndarray, B: np.ndarray) -> bool:
    """PBH test: rank [A - lam I, B] full for every eigenvalue with Re >= 0."""
    n = A.shape[0]
    scale = max(1.0, float(np.abs(A).max()), float(np.abs(B).max()))
    for lam in np.linalg.eigvals(A):
        if lam.real < -_PBH_TOL * scale:
            continue
        pencil = np.hstack([A - lam * np.eye(n), B.astype(complex)])
        if np.linalg.svd(pencil, compute_uv=False)[-1] < _PBH_TOL * scale:
            return False
    return True


def _hamiltonian_schur(Am: np.ndarray, M: np.ndarray, Q: np.ndarray):
    """Stabilizing solution of Am'P + P Am - P M P + Q = 0 via ordered Schur.

    Returns (P, min |Re| of Hamiltonian eigenvalues, condition of the basis
    block). Raises np.linalg.LinAlgError if the ordered basis is unusable.
    """
    n = Am.shape[0]
    ham = np.block([[Am, -M], [-Q, -Am.T]])
    scale = max(1.0, float(np.abs(ham).max()))
    eigs = np.linalg.eigvals(ham)
    axis_dist = float(np.abs(eigs.real).min())
    if axis_dist < _HURWITZ_MARGIN * scale:
        raise _ImaginaryAxisEigs(axis_dist)
    T, Z, sdim = sla.schur(ham, output="real", sort="lhp")
    if sdim != n:
        raise np.linalg.LinAlgError(f"stable subspace has dimension {sdim}, expected {n}")
    U11 = Z[:n, :n]
    U21 = Z[n:, :n]
    cond = np.linalg.cond(U11)
    P = np.linalg.solve(U11.T, U21.T).T
    P = 0.5 * (P + P.T)
    return P, axis_dist, cond


class _ImaginaryAxisEigs(Exception):
    def __init__(self, dist: float):
        self.dist = dist


def _kleinman(Am: np.ndarray, M: np.ndarray, Q: np.ndarray, P0: np.ndarray, iters: int = 60):
    """Newton refinement for Am'P + P Am - P M P + Q = 0 starting at P0."""
    P = P0.copy()
    for _ in range(iters):
        Acl = Am - M @ P
        rhs = -(Q + P @ M @ P)
        P_next = sla.solve_continuous_lyapunov(Acl.T, rhs)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise np.linalg.LinAlgError("Newton iteration diverged")
        if np.linalg.norm(P_next - P, "fro") < 1e-13 * max(1.0, np.linalg.norm(P, "fro")):
            return P_next
        P = P_next
    return P


def _residual(Am, M, Q, P) -> float:
    return float(np.linalg.norm(Am.T @ P + P @ Am - P @ M @ P + Q, "fro"))


def _solve_care(Am: np.ndarray, M: np.ndarray, Q: np.ndarray):
    """Shared core: stabilizing P for Am'P + P Am - P M P + Q = 0."""
    try:
        P, _, cond = _hamiltonian_schur(Am, M, Q)
    except np.linalg.LinAlgError:
        P, cond = None, np.inf
    if P is None or cond > 1e8 or not np.all(np.isfinite(P)):
        seed = P if P is not None and np.all(np.isfinite(P)) else np.zeros_like(Am)
        P = _kleinman(Am, M, Q, seed)
    elif _residual(Am, M, Q, P) > 1e-11 * max(1.0, np.linalg.norm(P, "fro") ** 2):
        P = _kleinman(Am, M, Q, P, iters=5)
    return 0.5 * (P + P.T)


def solve_standard_are(A: np.ndarray, B: np.ndarray, Q: np.ndarray | None = None) -> AreSolution:
    """Positive definite P with A'P + PA + Q - P B B' P = 0 (Q defaults to I).

    The returned P is the stabilizing solution: A - B B' P is Hurwitz.
    Raises NotStabilizable when (A, B) fails the PBH test or the Hamiltonian
    has imaginary-axis eigenvalues.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n = A.shape[0]
    Q = np.eye(n) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape != (n, n):
        raise DimensionMismatch("Q must match the state dimension")
    if not _pbh_stabilizable(A, B):
        raise NotStabilizable("(A, B) has an unreachable unstable mode")
    M = B @ B.T
    try:
        P = _solve_care(A, M, Q)
    except _ImaginaryAxisEigs as exc:
        raise NotStabilizable(
            f"Hamiltonian eigenvalues within {exc.dist:.2e} of the imaginary axis"
        ) from None
    res = _residual(A, M, Q, P)
    cl = np.linalg.eigvals(A - M @ P)
    stabilizing = bool(np.all(cl.real < -_HURWITZ_MARGIN))
    if res > 1e-10 * max(1.0, np.linalg.norm(P, "fro") ** 2) or not stabilizing:
        raise NotStabilizable(f"no stabilizing solution found (residual {res:.2e})")
    return AreSolution(P=P, residual_norm=res, stabilizing=stabilizing, closed_loop_eigs=cl)


def solve_inverse_form_lmi(A: np.ndarray, B: np.ndarray, Q: np.ndarray | None = None):
    """Inverse-form certificate: (P_lmi, K) with A P + P A' - 2 B B' < 0.

    P_lmi is the inverse of the Riccati solution X; K = -B'X. This K's sign
    pairs with a tracking error measured as own-state minus neighbors; the
    protocol in this package measures neighbors minus own state and applies
    the negated gain (see baseline_protocol.design_baseline_gains).
    """
    sol = solve_standard_are(A, B, Q=Q)
    X = sol.P
    P_lmi = np.linalg.inv(X)
    P_lmi = 0.5 * (P_lmi + P_lmi.T)
    K = -(np.asarray(B, dtype=float).reshape(X.shape[0], -1).T @ X)
    return P_lmi, K


def solve_discounted_game_are(problem: AreProblem) -> AreSolution:
    """Stabilizing solution of the discounted two-player Riccati equation.

    Solves T'P + PT - alpha P + Q - P B R^-1 B' P + gamma^-2 P D1 D1' P = 0
    by shifting the drift (T - alpha/2 I) and folding both quadratic terms
    into a single sign-indefinite kernel. Raises GammaTooSmall when the
    attenuation level admits no stabilizing solution.
    """
    A, B, Q, R = problem.A, problem.B, problem.Q, problem.R
    n = A.shape[0]
    Am = A - 0.5 * problem.alpha * np.eye(n)
    if not _pbh_stabilizable(Am, B):
        raise NotStabilizable("(shifted drift, B) has an unreachable unstable mode")
    Rinv = np.linalg.inv(R)
    M = B @ Rinv @ B.T
    has_attack = problem.D1 is not None
    if has_attack:
        M = M - (problem.D1 @ problem.D1.T) / problem.gamma**2
    try:
        P = _solve_care(Am, M, Q)
    except _ImaginaryAxisEigs as exc:
        msg = f"Hamiltonian eigenvalues within {exc.dist:.2e} of the imaginary axis"
        if has_attack:
            raise GammaTooSmall(f"attenuation level too aggressive: {msg}") from None
        raise NotStabilizable(msg) from None
    res = _residual(Am, M, Q, P)
    cl = np.linalg.eigvals(Am - M @ P)
    stabilizing = bool(np.all(cl.real < -_HURWITZ_MARGIN))
    ok = res < 1e-8 * max(1.0, np.linalg.norm(P, "fro") ** 2) and stabilizing
    if not ok:
        if has_attack:
            raise GammaTooSmall(
                f"no stabilizing solution at gamma={problem.gamma} (residual {res:.2e})"
            )
        raise NotStabilizable(f"no stabilizing solution found (residual {res:.2e})")
    return AreSolution(P=P, residual_norm=res, stabilizing=stabilizing, closed_loop_eigs=cl)
