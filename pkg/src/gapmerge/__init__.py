"""Chance-aware lane-change planning and learning stack."""

__version__ = "0.1.0"

from .dynamics import ControlInput, VehicleParams, VehicleState, rollout, step_dynamics
from .mpc import DecisionVector, GoalState, MpcConfig, Trajectory, build_problem, replan, solve

__all__ = [
    "ControlInput",
    "VehicleParams",
    "VehicleState",
    "rollout",
    "step_dynamics",
    "DecisionVector",
    "GoalState",
    "MpcConfig",
    "Trajectory",
    "build_problem",
    "replan",
    "solve",
    "__version__",
]
