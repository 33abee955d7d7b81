"""Network-slicing resource allocation: guarded market allocation, share
policies, game dynamics, a desk-scale radio simulator, and sweep tooling."""

from .allocation import allocate_gps, allocate_guarded, allocate_scpf, rates_for_weights
from .experiments import ExperimentConfig, SliceClassConfig, run_experiment, sweep
from .game import (
    best_response, brd_run, contraction_bound, is_nash_equilibrium,
    policy_dynamics, social_optimal,
)
from .model import ScenarioSpec, SliceProfile, UserRecord, validate_scenario

__all__ = [
    "ExperimentConfig", "ScenarioSpec", "SliceClassConfig", "SliceProfile",
    "UserRecord", "allocate_gps", "allocate_guarded", "allocate_scpf",
    "best_response", "brd_run", "contraction_bound", "is_nash_equilibrium",
    "policy_dynamics", "rates_for_weights", "run_experiment",
    "social_optimal", "sweep", "validate_scenario",
]
