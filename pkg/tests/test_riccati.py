"""Riccati solver oracles: scalar closed forms, radicals, and cross-checks."""

import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from masim.errors import DimensionMismatch, GammaTooSmall, NotStabilizable
from masim.riccati import (AreProblem, solve_discounted_game_are,
                           solve_standard_are, solve_inverse_form_lmi)

A_PLANT = np.array([[0.0, -4.0], [1.0, 0.0]])
B_PLANT = np.array([[1.0], [0.0]])


def test_scalar_integrator_closed_form():
    # A=0, B=1, Q=1: 1 - P^2 = 0, stabilizing root P = 1.
    sol = solve_standard_are(0.0, 1.0, Q=1.0)
    assert sol.P[0, 0] == pytest.approx(1.0, abs=1e-10)
    assert sol.residual_norm < 1e-10
    assert sol.stabilizing


def test_identity_shift_closed_form():
    # A=-I, B=I, Q=I: P^2 + 2P - I = 0, so P = (sqrt(2)-1) I.
    sol = solve_standard_are(-np.eye(2), np.eye(2))
    np.testing.assert_allclose(sol.P, (math.sqrt(2.0) - 1.0) * np.eye(2),
                               atol=1e-10)


def test_plant_matrix_radical_solution():
    # For the oscillator drift and single input channel the stabilizing
    # solution has p12 = sqrt(17) - 4 and the rest follows by substitution.
    sol = solve_standard_are(A_PLANT, B_PLANT)
    p12 = math.sqrt(17.0) - 4.0
    assert sol.P[0, 1] == pytest.approx(p12, abs=1e-10)
    assert sol.P[0, 0] == pytest.approx(1.1163383, abs=1e-6)
    assert sol.P[1, 1] == pytest.approx(4.6027805, abs=1e-6)
    assert sol.residual_norm < 1e-10
    # the certificate form pairs with it through the matrix inverse
    P_lmi, K = solve_inverse_form_lmi(A_PLANT, B_PLANT)
    np.testing.assert_allclose(P_lmi, np.linalg.inv(sol.P), atol=1e-10)
    np.testing.assert_allclose(K, [[-1.1163383, -0.1231056]], atol=1e-6)
    lmi = A_PLANT @ P_lmi + P_lmi @ A_PLANT.T - 2.0 * B_PLANT @ B_PLANT.T
    assert np.linalg.eigvalsh(lmi).max() < 0.0


def test_scalar_game_closed_form():
    # a=-1, alpha=0.1, gamma=10: 0.99 P^2 + 2.1 P - 1 = 0.
    prob = AreProblem(A=-1.0, B=1.0, Q=1.0, R=1.0, D1=1.0, gamma=10.0,
                      alpha=0.1)
    sol = solve_discounted_game_are(prob)
    expected = (-2.1 + math.sqrt(8.37)) / 1.98
    assert sol.P[0, 0] == pytest.approx(expected, abs=1e-10)
    assert sol.P[0, 0] == pytest.approx(0.4005531, abs=1e-6)


def test_scalar_game_gamma_too_small():
    prob = AreProblem(A=-1.0, B=1.0, Q=1.0, R=1.0, D1=1.0, gamma=0.1,
                      alpha=0.1)
    with pytest.raises(GammaTooSmall):
        solve_discounted_game_are(prob)


def _augmented_problem(gamma: float) -> AreProblem:
    T = sla.block_diag(A_PLANT, A_PLANT)
    B1 = np.vstack([B_PLANT, np.zeros((2, 1))])
    D1 = np.vstack([B_PLANT, np.zeros((2, 1))])
    Q = sla.block_diag(100.0 * np.eye(2), np.zeros((2, 2)))
    return AreProblem(A=T, B=B1, Q=Q, R=np.eye(1), D1=D1, gamma=gamma,
                      alpha=0.1)


def test_augmented_game_against_scipy_care():
    prob = _augmented_problem(10.0)
    sol = solve_discounted_game_are(prob)
    # independent route: fold the two quadratic terms into one scaled input
    Am = prob.A - 0.05 * np.eye(4)
    scale = math.sqrt(1.0 - 10.0**-2)
    P_ref = sla.solve_continuous_are(Am, prob.B * scale, prob.Q, np.eye(1))
    np.testing.assert_allclose(sol.P, P_ref, atol=1e-8)
    # the known block values of the solution
    assert sol.P[0, 0] == pytest.approx(10.611659541743286, rel=1e-9)
    assert sol.P[0, 1] == pytest.approx(6.2712055008733705, rel=1e-9)
    assert sol.P[1, 1] == pytest.approx(108.9562, abs=1e-4)
    np.testing.assert_allclose(sol.P[2:, :], 0.0, atol=1e-9)
    assert sol.residual_norm < 1e-8


def test_huge_gamma_reduces_to_single_player():
    prob = _augmented_problem(1e6)
    single = AreProblem(A=prob.A, B=prob.B, Q=prob.Q, R=prob.R, alpha=0.1)
    P_game = solve_discounted_game_are(prob).P
    P_lqr = solve_discounted_game_are(single).P
    np.testing.assert_allclose(P_game, P_lqr, rtol=1e-7, atol=1e-10)


def test_unstabilizable_pair_rejected():
    with pytest.raises(NotStabilizable):
        solve_standard_are(np.eye(2), np.array([[1.0], [0.0]]))


def test_problem_validation():
    with pytest.raises(ValueError, match="symmetric"):
        AreProblem(A=np.zeros((2, 2)), B=np.eye(2),
                   Q=np.array([[1.0, 1.0], [0.0, 1.0]]), R=np.eye(2))
    with pytest.raises(ValueError, match="positive definite"):
        AreProblem(A=0.0, B=1.0, Q=1.0, R=0.0)
    with pytest.raises(ValueError, match="gamma"):
        AreProblem(A=0.0, B=1.0, Q=1.0, R=1.0, D1=1.0)
    with pytest.raises(DimensionMismatch):
        AreProblem(A=np.zeros((2, 2)), B=np.eye(2), Q=np.eye(3), R=np.eye(2))


@st.composite
def stabilizable_pairs(draw):
    n = draw(st.integers(min_value=1, max_value=3))
    elems = st.floats(min_value=-2.0, max_value=2.0, allow_nan=False)
    A = np.array(draw(st.lists(st.lists(elems, min_size=n, max_size=n),
                               min_size=n, max_size=n)))
    B = np.array(draw(st.lists(elems, min_size=n, max_size=n))).reshape(n, 1)
    # shift the drift until it is Hurwitz, which makes any B admissible
    shift = float(np.linalg.eigvals(A).real.max()) + 0.5
    return A - shift * np.eye(n), B


@settings(max_examples=8, deadline=None)
@given(stabilizable_pairs())
def test_standard_are_properties(pair):
    A, B = pair
    sol = solve_standard_are(A, B)
    n = A.shape[0]
    assert sol.residual_norm < 1e-8 * max(1.0, np.linalg.norm(sol.P) ** 2)
    assert np.linalg.eigvalsh(sol.P).min() > -1e-9
    cl = np.linalg.eigvals(A - B @ B.T @ sol.P)
    assert np.all(cl.real < 0.0)
    np.testing.assert_allclose(sol.P, sol.P.T, atol=1e-12)
    assert sol.P.shape == (n, n)
