"""Data windowing, regression assembly, and model-free recovery of the design."""

import numpy as np
import pytest
import scipy.integrate
from hypothesis import given, settings, strategies as st

from masim import rl_learner as rl
from masim.errors import SingularRegression
from masim.hinf_controller import assemble, solve
from masim.plant import SystemModel, make_leader_input

A_PLANT = np.array([[0.0, -4.0], [1.0, 0.0]])
B_COL = np.array([[1.0], [0.0]])


def multisine(freqs, phases, amplitude):
    freqs = np.asarray(freqs)
    phases = np.asarray(phases)

    def signal(t):
        return amplitude * np.sin(t * freqs + phases).sum()

    return signal


def rk4(rhs, ts, x0):
    dt = ts[1] - ts[0]
    X = np.zeros((len(ts), len(x0)))
    X[0] = x0
    for k in range(len(ts) - 1):
        t, x = ts[k], X[k]
        k1 = rhs(t, x)
        k2 = rhs(t + dt / 2, x + dt / 2 * k1)
        k3 = rhs(t + dt / 2, x + dt / 2 * k2)
        k4 = rhs(t + dt, x + dt * k3)
        X[k + 1] = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return X

_CACHE: dict[str, tuple] = {}


def augmented_trace():
    """Probe-excited trajectory of the augmented system, model gains applied.

    The estimate block runs open loop, so it conserves a quadratic form and
    the regression carries exactly one benign free direction.
    """
    if "aug" in _CACHE:
        return _CACHE["aug"]
    v0 = make_leader_input("decaying_sine", amplitude=4.0, decay=0.15,
                           frequency=2.0)
    model = SystemModel(A=A_PLANT, B=B_COL, D=B_COL, leader_input=v0, v_m=4.0)
    aug = assemble(model, Q1=100.0 * np.eye(2), R=np.eye(1), alpha=0.1,
                   gamma=10.0)
    sol = solve(aug)
    probe_u = multisine([0.3, 1.1, 2.7, 5.3, 9.2], [0.0, 1.0, 2.0, 3.0, 4.0], 2.0)
    probe_w = multisine([0.2, 0.9, 2.1, 4.4, 7.6], [0.5, 1.5, 2.5, 3.5, 4.5], 1.5)

    def rhs(t, x):
        uu = sol.K @ x + np.array([probe_u(t)])
        ww = sol.W @ x + np.array([probe_w(t)])
        return aug.T @ x + aug.B1 @ uu + aug.D1 @ ww

    dt = 2e-4
    ts = np.linspace(0.0, 5.0, int(round(5.0 / dt)) + 1)
    X = rk4(rhs, ts, np.array([0.4, -0.3, 0.5, 0.0]))
    u = X @ sol.K.T + np.array([[probe_u(t)] for t in ts])
    w = X @ sol.W.T + np.array([[probe_w(t)] for t in ts])
    tuples = rl.collect_from_trace(ts, X, u, w, alpha=0.1, sample_interval=0.1,
                                   n_windows=30, window_start=0.5,
                                   window_spacing=0.15)
    _CACHE["aug"] = (aug, sol, tuples)
    return _CACHE["aug"]


def scalar_trace(on_policy: bool = False):
    """Scalar plant xdot = -x + u + w with independent input and attack probes."""
    key = "scalar_on" if on_policy else "scalar"
    if key in _CACHE:
        return _CACHE[key]
    probe_u = multisine([0.5, 1.3, 3.1, 6.2, 9.7], [0.1, 0.7, 1.9, 2.8, 4.1], 1.0)
    probe_w = multisine([0.4, 1.0, 2.3, 4.9, 8.3], [0.3, 1.2, 2.2, 3.3, 4.8], 0.7)
    dt = 5e-4
    ts = np.linspace(0.0, 5.0, int(round(5.0 / dt)) + 1)
    if on_policy:
        rhs = lambda t, x: -x + 0.5 * x
        X = rk4(rhs, ts, np.array([1.0]))
        u = 0.5 * X
        w = np.zeros_like(X)
    else:
        rhs = lambda t, x: -x + probe_u(t) + probe_w(t)
        X = rk4(rhs, ts, np.array([1.0]))
        u = np.array([[probe_u(t)] for t in ts])
        w = np.array([[probe_w(t)] for t in ts])
    tuples = rl.collect_from_trace(ts, X, u, w, alpha=0.1, sample_interval=0.2,
                                   n_windows=14, window_start=0.2,
                                   window_spacing=0.3)
    _CACHE[key] = tuples
    return tuples


def test_probe_spec_validation_and_determinism():
    with pytest.raises(ValueError):
        rl.ProbeSpec(n_components=0)
    with pytest.raises(ValueError):
        rl.ProbeSpec(freq_lo=0.0)
    with pytest.raises(ValueError):
        rl.ProbeSpec(freq_lo=5.0, freq_hi=1.0)
    p1 = rl.ProbeSpec(amplitude=2.0, seed=7)
    p2 = rl.ProbeSpec(amplitude=2.0, seed=7)
    t = np.linspace(0.0, 1.0, 11)
    np.testing.assert_array_equal(p1.signal(t), p2.signal(t))
    assert p1.frequencies[0] == pytest.approx(0.1)
    assert p1.frequencies[-1] == pytest.approx(20.0)
    single = rl.ProbeSpec(n_components=1, freq_lo=2.0, freq_hi=9.0)
    np.testing.assert_array_equal(single.frequencies, [2.0])


def test_n_unknowns_counts():
    assert rl.n_unknowns(4, 1, 1) == 25
    assert rl.n_unknowns(2, 1, 1) == 12
    assert rl.n_unknowns(1, 1, 1) == 7


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([1, 2, 3, 4]), st.integers(0, 2**31 - 1))
def test_sym_packing_roundtrip(n2, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n2, n2))
    M = 0.5 * (M + M.T)
    iu, ju = np.triu_indices(n2)
    theta = M[iu, ju]
    np.testing.assert_allclose(rl.sym_from_vec(theta, n2), M, atol=1e-14)
    X = rng.normal(size=n2)
    # The feature vector represents the quadratic form exactly.
    assert rl.sym_basis(X) @ theta == pytest.approx(X @ M @ X, rel=1e-12,
                                                    abs=1e-12)


def test_quad_weights_simpson_and_trapezoid():
    ts = np.linspace(0.0, 1.0, 5)
    w = rl._quad_weights(ts)
    # Simpson integrates cubics exactly.
    assert w @ ts**3 == pytest.approx(0.25, abs=1e-15)
    ts_even = np.linspace(0.0, 1.0, 4)
    w_even = rl._quad_weights(ts_even)
    assert w_even.sum() == pytest.approx(1.0)
    assert w_even @ ts_even == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        rl._quad_weights(np.array([0.0]))


def test_data_tuple_moments_match_direct_quadrature():
    ts = np.linspace(0.0, 0.3, 31)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(31, 2))
    u = rng.normal(size=(31, 1))
    w = rng.normal(size=(31, 1))
    alpha = 0.4
    tp = rl.make_tuple(ts, X, u, w, alpha)
    disc = np.exp(-alpha * (ts - ts[0]))
    ref = scipy.integrate.simpson(disc[:, None] * X, x=ts, axis=0)
    np.testing.assert_allclose(tp.M_X, ref, rtol=1e-12, atol=1e-14)
    ref_uX = scipy.integrate.simpson(disc[:, None] * (u[:, 0:1] * X), x=ts,
                                     axis=0)
    np.testing.assert_allclose(tp.M_uX[0], ref_uX, rtol=1e-12, atol=1e-14)
    assert tp.W0 == pytest.approx(scipy.integrate.simpson(disc, x=ts),
                                  rel=1e-12)
    assert tp.edisc == pytest.approx(np.exp(-alpha * 0.3), rel=1e-14)
    # Even sample count falls back to the trapezoid rule.
    tp2 = rl.make_tuple(ts[:30], X[:30], u[:30], w[:30], alpha)
    ref2 = np.trapezoid(disc[:30, None] * X[:30], x=ts[:30], axis=0)
    np.testing.assert_allclose(tp2.M_X, ref2, rtol=1e-12, atol=1e-14)


def test_collect_from_trace_window_layout_and_bounds():
    ts = np.linspace(0.0, 1.0, 1001)
    X = np.zeros((1001, 1))
    u = np.zeros(1001)
    w = np.zeros(1001)
    tuples = rl.collect_from_trace(ts, X, u, w, alpha=0.1,
                                   sample_interval=0.1, n_windows=3,
                                   window_start=0.2, window_spacing=0.25)
    assert len(tuples) == 3
    assert tuples[0].t_start == pytest.approx(0.2)
    assert tuples[0].t_end == pytest.approx(0.3)
    assert tuples[2].t_start == pytest.approx(0.7)
    assert len(tuples[0].ts) == 101
    with pytest.raises(ValueError):
        rl.collect_from_trace(ts, X, u, w, alpha=0.1, sample_interval=0.1,
                              n_windows=4, window_start=0.7,
                              window_spacing=0.25)
    with pytest.raises(ValueError):
        rl.collect_from_trace(ts, X, u, w, alpha=0.1, sample_interval=5e-4,
                              n_windows=1, window_start=0.0,
                              window_spacing=0.1)


def test_value_parameters_pack_order():
    params = rl.ValueParameters(P=np.array([[1.0, 2.0], [2.0, 3.0]]),
                                Pi=[4.0, 5.0], Gamma=6.0, K=[[7.0, 8.0]],
                                g=[9.0], W=[[10.0, 11.0]], w=[12.0])
    np.testing.assert_array_equal(params.vecs(), np.arange(1.0, 13.0))
    zero = rl.ValueParameters.initial(4, 1, 1)
    assert zero.vecs().shape == (25,)
    assert not zero.vecs().any()


def test_offset_only_classifier():
    # n2 = 2: coords 0-2 quadratic, 3-4 affine, 5 offset, 6-11 policies.
    v = np.zeros((1, 12))
    v[0, 0] = 0.8
    v[0, 5] = -0.6
    assert rl._offset_only(v, 2)
    v[0, 6] = 1e-3
    assert not rl._offset_only(v, 2)
    v2 = np.zeros((1, 12))
    v2[0, 3] = 1.0  # affine coordinate counts as a gain direction
    assert not rl._offset_only(v2, 2)


def test_model_solution_is_bellman_fixed_point():
    aug, sol, tuples = augmented_trace()
    params = rl.ValueParameters(P=sol.P, Pi=np.zeros(4), Gamma=0.0, K=sol.K,
                                g=np.zeros(1), W=sol.W, w=np.zeros(1))
    res = rl.bellman_residual(tuples, params, aug.Q, aug.R, aug.alpha,
                              aug.gamma)
    assert np.abs(res).max() < 1e-10


def test_learner_recovers_model_design_from_data():
    aug, sol, tuples = augmented_trace()
    # The open-loop estimate block conserves a quadratic form: expect one
    # benign free direction and a full-rank policy block.
    zero = rl.ValueParameters.initial(4, 1, 1)
    G, _ = rl._assemble(tuples, zero, aug.Q, aug.R, aug.gamma)
    rank, null_vecs = rl.regression_nullspace(G)
    assert rank == 24
    assert rl._offset_only(null_vecs, 4)
    learned, history = rl.learn_from_tuples(tuples, aug.Q, aug.R, aug.alpha,
                                            aug.gamma)
    assert history[-1].k <= 15
    assert learned.source == "learned"
    rel = np.linalg.norm(learned.P - sol.P) / np.linalg.norm(sol.P)
    assert rel < 1e-9
    np.testing.assert_allclose(learned.K, sol.K, atol=1e-9)
    np.testing.assert_allclose(learned.W, sol.W, atol=1e-9)
    np.testing.assert_allclose(learned.g_const, np.zeros(1), atol=1e-9)
    np.testing.assert_allclose(learned.w_const, np.zeros(1), atol=1e-9)


def test_scalar_game_learned_to_closed_form():
    # xdot = -x + u + w, Q = R = 1, alpha = 0.1, gamma = 10: the value
    # quadratic solves 0.99 p^2 + 2.1 p - 1 = 0.
    tuples = scalar_trace()
    learned, history = rl.learn_from_tuples(tuples, np.eye(1), np.eye(1),
                                            alpha=0.1, gamma=10.0)
    p_exact = (-2.1 + np.sqrt(8.37)) / 1.98
    assert history[-1].k <= 15
    assert learned.P[0, 0] == pytest.approx(p_exact, abs=1e-10)
    assert learned.K[0, 0] == pytest.approx(-p_exact, abs=1e-9)
    assert learned.W[0, 0] == pytest.approx(p_exact / 100.0, abs=1e-11)


def test_on_policy_data_raises_singular_regression():
    tuples = scalar_trace(on_policy=True)
    with pytest.raises(SingularRegression):
        rl.bellman_lsq(tuples, rl.ValueParameters.initial(1, 1, 1), np.eye(1),
                       np.eye(1), 0.1, 10.0)


def test_too_few_windows_raises():
    tuples = scalar_trace()[:3]
    with pytest.raises(SingularRegression):
        rl.bellman_lsq(tuples, rl.ValueParameters.initial(1, 1, 1), np.eye(1),
                       np.eye(1), 0.1, 10.0)
    with pytest.raises(SingularRegression):
        rl.bellman_lsq([], rl.ValueParameters.initial(1, 1, 1), np.eye(1),
                       np.eye(1), 0.1, 10.0)
