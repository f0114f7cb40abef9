"""Simulation and numerics for dynamic alternative routing on the complete graph."""

from .network import (
    AltArrival,
    Call,
    Departure,
    DirectArrival,
    ModelParams,
    NetworkState,
    StateError,
    new_empty,
    pair_index,
)
from .routing import PolicyKind, RouteDecision, route_call, sample_candidates
from .rng import replica_rng
from .simulation import (
    SimConfig,
    SimMode,
    Simulator,
    Trajectory,
    generate_initial_state,
    run,
    step_ctmc,
    step_jump_chain,
)
from .observables import (
    PhiReport,
    cross_statistic,
    drift_f,
    g_exact,
    generator_bruteforce,
    meanfield_gap,
    phi_report,
)
from .meanfield import (
    OdeParams,
    Variant,
    F_field,
    fixed_point,
    g_field,
    integrate,
    lipschitz_bound,
    theorem_constants,
)
from .coupling import CoupledPair, coupled_step, coupling_growth_experiment, l1_distance, node_distance

__version__ = "0.1.0"
