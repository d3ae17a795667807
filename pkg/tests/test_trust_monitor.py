"""Confidence and edge-trust statistics, filters, and excision bookkeeping."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from masim.graph import GraphTopology, build_matrices
from masim.trust_monitor import (TrustParams, confidence_rate, evidence_rate,
                                 excision_capacity, gap_statistic, observe,
                                 select_excision, trust_values,
                                 update_confidence, update_trust)

CHAIN_EDGES = ((1, 2, 1.0), (1, 3, 1.0), (2, 4, 1.0), (4, 5, 1.0))
MESH_EDGES = CHAIN_EDGES + ((5, 4, 1.0), (1, 4, 1.0))
PIN = (1.0, 0.0, 0.0, 0.0, 0.0)


def chain():
    return GraphTopology(n_agents=5, edges=CHAIN_EDGES, pinning=PIN)


def mesh():
    return GraphTopology(n_agents=5, edges=MESH_EDGES, pinning=PIN)


def test_gap_statistic_hand_values():
    assert gap_statistic(1.0, 1.9, delta=0.1) == pytest.approx(0.1)
    assert gap_statistic(2.5, 2.5, delta=0.1) == pytest.approx(1.0)
    q = gap_statistic(np.array([0.0, 1.0]), np.array([0.0, 3.0]), delta=0.5)
    np.testing.assert_allclose(q, [1.0, 0.2])


def test_filter_rates_are_linear():
    assert confidence_rate(0.7, 0.2, beta=10.0) == pytest.approx(-5.0)
    assert evidence_rate(0.0, 1.0, kappa=10.0) == pytest.approx(10.0)


def test_update_confidence_matches_exact_exponential():
    beta, dt = 10.0, 1e-3
    C, q = 0.7, 0.2
    stepped = update_confidence(q, C, beta, dt)
    exact = q + (C - q) * math.exp(-beta * dt)
    assert stepped == pytest.approx(exact, abs=1e-9)


def test_update_confidence_clips_and_validates():
    # Targets outside [0, 1] saturate at the box bounds.
    assert update_confidence(5.0, 0.9, beta=10.0, dt=0.1) == 1.0
    assert update_confidence(-5.0, 0.1, beta=10.0, dt=0.1) == 0.0
    with pytest.raises(ValueError):
        update_confidence(0.5, 0.5, beta=10.0, dt=0.0)


def test_observe_single_source_agents_agree_exactly():
    # Every agent of the chain has exactly one information source, so the
    # weighted vector sum and the norm sum coincide and q pins at 1.
    gm = build_matrices(chain())
    rng = np.random.default_rng(5)
    r = rng.normal(size=(5, 2))
    leader = rng.normal(size=2)
    weights = np.ones((5, 5))
    for i in range(1, 6):
        o, s, q = observe(i, r, leader, gm, weights, TrustParams())
        assert o == pytest.approx(s, abs=1e-12)
        assert q == pytest.approx(1.0, abs=1e-12)


def test_observe_detects_cancelling_neighbors():
    # Meshed agent 4 hears senders 1, 2, 5. Opposed differences cancel in
    # the vector sum but add in the norm sum.
    gm = build_matrices(mesh())
    r = np.zeros((5, 2))
    r[1] = [1.0, 0.0]   # agent 2
    r[4] = [-1.0, 0.0]  # agent 5
    leader = np.zeros(2)
    weights = np.ones((5, 5))
    o, s, q = observe(4, r, leader, gm, weights, TrustParams(delta=0.1))
    assert o == pytest.approx(0.0, abs=1e-14)
    assert s == pytest.approx(2.0, abs=1e-14)
    assert q == pytest.approx(0.1 / 2.1, abs=1e-12)


def test_observe_weights_shape_control_side_only():
    gm = build_matrices(mesh())
    r = np.zeros((5, 2))
    r[1] = [1.0, 0.0]
    r[4] = [-1.0, 0.0]
    leader = np.zeros(2)
    weights = np.ones((5, 5))
    weights[3, 1] = 0.5  # edge 2 -> 4 downweighted
    o, s, q = observe(4, r, leader, gm, weights, TrustParams(delta=0.1))
    assert o == pytest.approx(0.5, abs=1e-14)
    assert s == pytest.approx(2.0, abs=1e-14)
    assert q == pytest.approx(0.1 / 1.6, abs=1e-12)


def test_observe_mask_drops_excised_edge():
    gm = build_matrices(mesh())
    r = np.zeros((5, 2))
    r[1] = [1.0, 0.0]
    r[4] = [-1.0, 0.0]
    leader = np.zeros(2)
    weights = np.ones((5, 5))
    mask = np.ones(5)
    mask[4] = 0.0  # agent 4 stops listening to agent 5
    o, s, _ = observe(4, r, leader, gm, weights, TrustParams(),
                      control_mask=mask)
    assert o == pytest.approx(1.0, abs=1e-14)
    assert s == pytest.approx(2.0, abs=1e-14)


def test_update_trust_tracks_locality():
    r = np.zeros((5, 2))
    r[1] = [1.0, 1.0]
    r[4] = [1.0, 1.0]
    r[0] = [1.0, 1.0]
    # Sender 2 equals the neighborhood average, so l = 1.
    T, d_next, l = update_trust(4, 2, r, C_i=0.2, d_ij=0.5, kappa=10.0,
                                theta=0.1, dt=1e-3, in_neighbors=(1, 2, 5))
    assert l == pytest.approx(1.0)
    exact = 1.0 + (0.5 - 1.0) * math.exp(-10.0 * 1e-3)
    assert d_next == pytest.approx(exact, abs=1e-9)
    assert T == pytest.approx(max(0.2, d_next))
    # An outlying sender drives l toward zero.
    r[1] = [50.0, 0.0]
    _, _, l_far = update_trust(4, 2, r, C_i=0.2, d_ij=0.5, kappa=10.0,
                               theta=0.1, dt=1e-3, in_neighbors=(1, 2, 5))
    assert l_far < 0.01


def test_update_trust_requires_neighbors():
    with pytest.raises(ValueError):
        update_trust(1, 2, np.zeros((5, 2)), C_i=1.0, d_ij=1.0, kappa=10.0,
                     theta=0.1, dt=1e-3, in_neighbors=())


def test_trust_values_max_rule_and_normalization():
    T = trust_values(0.2, np.array([0.7, 0.1]))
    np.testing.assert_allclose(T, [0.7, 0.2])
    T = trust_values(0.2, np.array([0.7, 0.1]), normalize=True)
    np.testing.assert_allclose(T, [7.0 / 9.0, 2.0 / 9.0])
    assert T.sum() == pytest.approx(1.0)


def test_excision_capacity_majority_rule():
    np.testing.assert_array_equal(excision_capacity(chain()), np.zeros(5, int))
    np.testing.assert_array_equal(excision_capacity(mesh()), [0, 0, 0, 1, 0])
    dense_edges = tuple((j, 1, 1.0) for j in range(2, 6))
    dense = GraphTopology(n_agents=5, edges=dense_edges + ((1, 2, 1.0),),
                          pinning=PIN)
    # Agent 1: four in-edges plus the leader link, five sources, f = 2.
    assert excision_capacity(dense)[0] == 2


def test_select_excision_ranking_and_ties():
    d = {2: 0.5, 7: 0.1, 3: 0.1}
    assert select_excision(d, 0) == ()
    assert select_excision(d, 1) == (3,)
    assert select_excision(d, 2) == (3, 7)
    assert select_excision(d, 5) == (2, 3, 7)


def test_params_validation():
    with pytest.raises(ValueError):
        TrustParams(delta=0.0)
    with pytest.raises(ValueError):
        TrustParams(beta=-1.0)
    with pytest.raises(ValueError):
        TrustParams(alarm_level=0.0)
    with pytest.raises(ValueError):
        TrustParams(alarm_level=1.5)
    with pytest.raises(ValueError):
        TrustParams(arm_time=-0.1)
    assert TrustParams().alarm_level == 0.9


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.1, 50.0),
       st.floats(1e-4, 0.02))
def test_confidence_filter_stays_in_unit_interval(q, C, beta, dt):
    # beta * dt stays within the integrator's stable region, as in any
    # sensible run configuration.
    out = update_confidence(q, C, beta, dt)
    assert 0.0 <= out <= 1.0
    # The filter is a contraction toward q.
    assert abs(out - q) <= abs(C - q) + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(1e-3, 10.0))
def test_gap_statistic_range(o, s, delta):
    q = gap_statistic(o, s, delta)
    assert 0.0 < q <= 1.0
    if o == s:
        assert q == 1.0
