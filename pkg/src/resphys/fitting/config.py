from __future__ import annotations

from typing import List

from pydantic import BaseModel, ConfigDict, Field


class FitConfig(BaseModel):
    """Per-timestep residual force fitting settings."""

    model_config = ConfigDict(frozen=True)

    reg_lambda: float = Field(1e-4, ge=0, description="Weight of the squared force norm in the objective")
    lbfgs_memory: int = Field(10, ge=1, description="Number of L-BFGS correction pairs")
    lbfgs_max_iters: int = Field(200, ge=1, description="L-BFGS iteration cap")
    grad_tol: float = Field(1e-8, gt=0, description="Stop when the infinity norm of the gradient in the scaled L-BFGS variables falls below this")
    init_sigma: float = Field(1e-2, ge=0, description="Std-dev [N] of the random first-step initialization")
    warm_start: bool = Field(True, description="Start each step from the previous step's solution")
    seed: int = Field(0, description="Seed of the first-step initialization when no generator is passed")


class FitReport(BaseModel):
    """Outcome of one L-BFGS residual fit."""

    iterations: int = Field(..., description="L-BFGS iterations")
    evaluations: int = Field(..., description="Objective/gradient evaluations")
    objective: float = Field(..., description="Final objective value")
    data_term: float = Field(..., description="Final squared position error (without regularization)")
    initial_data_term: float = Field(..., description="Squared position error at the starting point")
    grad_norm: float = Field(..., description="Infinity norm of the final gradient in the scaled L-BFGS variables u (f = A0/h^2 * edge * u), not in newtons")
    converged: bool = Field(..., description="Gradient tolerance reached before the iteration cap")
    rejected: int = Field(0, description="Trial points rejected because the forward step diverged")
    trace: List[float] = Field(default_factory=list, description="Objective per accepted iteration")


class InitStateReport(BaseModel):
    """Outcome of the initial deformed state reconstruction."""

    marker_rms: float = Field(..., description="RMS marker error [m] of the returned state")
    converged: bool = Field(..., description="Marker RMS within the acceptance threshold")
    iterations: int = Field(..., description="L-BFGS iterations")
    virtual_steps: int = Field(..., description="Number of virtual-force steps T_v")
