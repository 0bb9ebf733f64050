"""Implicit Euler simulation, adjoints and trajectory containers."""

from .container import Trajectory, read_arrays, read_trajectory, write_arrays, write_trajectory
from .implicit import (
    relative_residual,
    rollout,
    settle,
    solve_step,
    static_solve,
    step,
    step_adjoint,
    step_residual,
    step_vjp,
    total_energy,
)
from .state import GRAVITY, LoadSpec, SimContext, SimState, StepConfig, project_forces

__all__ = [
    "GRAVITY",
    "LoadSpec",
    "SimContext",
    "SimState",
    "StepConfig",
    "Trajectory",
    "project_forces",
    "read_arrays",
    "read_trajectory",
    "relative_residual",
    "rollout",
    "settle",
    "solve_step",
    "static_solve",
    "step",
    "step_adjoint",
    "step_residual",
    "step_vjp",
    "total_energy",
    "write_arrays",
    "write_trajectory",
]
