"""Session fixtures: the long simulations run once and feed many tests."""

import pytest

from masim import engine, rl_learner
from masim.scenario import load_scenario


@pytest.fixture(scope="session")
def baseline_attack_result():
    """Full-length baseline run with the resonant channel injection."""
    return engine.run_sim(load_scenario("chain_type1_baseline"))


@pytest.fixture(scope="session")
def baseline_quiet_result():
    """Same protocol with the attack amplitude zeroed, shorter horizon."""
    sc = load_scenario("chain_type1_baseline",
                       overrides=("attack.1.amplitude=0.0", "horizon=10.0"))
    return engine.run_sim(sc)


@pytest.fixture(scope="session")
def hinf_attack_result():
    """Observer-based attenuating controller under the channel injection."""
    return engine.run_sim(load_scenario("chain_type1_hinf"))


@pytest.fixture(scope="session")
def hinf_clean_result():
    """Attack-free twin of the attenuating-controller run."""
    sc = load_scenario("chain_type1_hinf",
                       overrides=("attack.1.amplitude=0.0",))
    return engine.run_sim(sc)


@pytest.fixture(scope="session")
def type2_chain_result():
    """Observer corruption on the chain graph: no excision headroom."""
    return engine.run_sim(load_scenario("chain_type2_monitor"))


@pytest.fixture(scope="session")
def type2_meshed_result():
    """Observer corruption on the meshed graph: excision available."""
    return engine.run_sim(load_scenario("mesh_type2_excision"))


@pytest.fixture(scope="session")
def learned_artifacts():
    """Collection windows, learned solution, and iterate history."""
    sc = load_scenario("rl_learn_hinf")
    tuples = rl_learner.collect(sc)
    sol, history = rl_learner.learn_from_tuples(
        tuples, rl_learner.augmented_weight(sc), sc.controller.R,
        sc.controller.alpha, sc.controller.gamma,
        tol=sc.rl.tol, k_max=sc.rl.k_max)
    return sc, tuples, sol, history
