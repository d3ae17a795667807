"""Resilient leader-follower multi-agent synchronization simulator.

Library layers: graph topology and coupling matrices, Riccati-based gain
design, the vulnerable baseline protocol, a distributed observer layer with
trust-confidence monitoring, a disturbance-attenuating tracking controller,
a model-free learner for the same design, and a deterministic simulation
harness with a CLI.
"""

from .errors import (DimensionMismatch, GammaTooSmall, InsufficientExcitation,
                     MasimError, ModeNotFound, NoConvergence, NonFinite,
                     NonPositivePhi, NotStabilizable, ScenarioError,
                     SingularLf, SingularRegression, SpanningTreeMissing,
                     ZeroAttackEnergy)
from .graph import (GraphMatrices, GraphTopology, build_matrices,
                    connectivity_margin, has_spanning_tree)
from .plant import (AttackKind, AttackSpec, LeaderInput, StealthyGenerator,
                    SystemModel, make_leader_input, make_stealthy_attack,
                    steady_state_under_attack)
from .riccati import (AreProblem, AreSolution, solve_discounted_game_are,
                      solve_standard_are, solve_inverse_form_lmi)
from .baseline_protocol import (BaselineGains, control, control_all,
                                design_baseline_gains, local_tracking_error,
                                local_tracking_errors, normalizer)
from .trust_monitor import (TrustParams, excision_capacity, observe,
                            select_excision, update_confidence, update_trust)
from .observer import ObserverGains, design_gains, eta, eta_all, observer_input
from .hinf_controller import (AugmentedSystem, GareSolution, L2Result,
                              assemble, l2_gain_ratio, solve,
                              worst_case_attack)
from .rl_learner import (DataTuple, ProbeSpec, ValueParameters, bellman_lsq,
                         bellman_residual, collect, learn, learn_from_tuples)
from .scenario import Scenario, load_scenario, packaged_scenarios
from .engine import SimResult, run_collection, run_sim

__version__ = "0.1.0"
