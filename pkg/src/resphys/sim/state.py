from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from resphys.errors import SimulationError
from resphys.fem.corotated import gravity_forces, nodal_masses
from resphys.fem.material import Material
from resphys.fem.mesh import HexMesh

GRAVITY = (0.0, 0.0, -9.81)


class StepConfig(BaseModel):
    """Implicit Euler / Newton settings."""

    model_config = ConfigDict(frozen=True)

    h: float = Field(0.01, gt=0, description="Time step [s]")
    newton_tol: float = Field(1e-9, gt=0, description="Relative residual tolerance")
    newton_max_iters: int = Field(50, ge=1, description="Newton iteration cap")
    ls_backtracks: int = Field(16, ge=0, description="Line-search halvings per Newton iteration")


@dataclass
class SimState:
    """Nodal positions q and velocities v (N, 3) after t steps."""

    q: np.ndarray
    v: np.ndarray
    t: int = 0

    def __post_init__(self) -> None:
        self.q = np.asarray(self.q, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.q.shape != self.v.shape or self.q.ndim != 2 or self.q.shape[1] != 3:
            raise SimulationError(f"state shapes must match (N, 3): q {self.q.shape}, v {self.v.shape}")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.v))):
            raise SimulationError(f"non-finite state at t={self.t}")

    def copy(self) -> "SimState":
        return SimState(self.q.copy(), self.v.copy(), self.t)

    def flat(self) -> np.ndarray:
        """Concatenation of q and v, length 6N."""
        return np.concatenate([self.q.ravel(), self.v.ravel()])


@dataclass
class LoadSpec:
    """External loading for one step: optional gravity plus an applied force field."""

    applied: np.ndarray | None = None
    gravity_on: bool = True

    def applied_forces(self, num_nodes: int) -> np.ndarray:
        if self.applied is None:
            return np.zeros((num_nodes, 3))
        forces = np.asarray(self.applied, dtype=float)
        if forces.shape != (num_nodes, 3):
            raise SimulationError(f"applied force must be ({num_nodes}, 3), got {forces.shape}")
        if not np.all(np.isfinite(forces)):
            raise SimulationError("applied force must be finite")
        return forces

    def with_extra(self, extra: np.ndarray) -> "LoadSpec":
        """Same load with ``extra`` forces (e.g. residual corrections) added."""
        base = 0.0 if self.applied is None else np.asarray(self.applied, dtype=float)
        return replace(self, applied=base + extra)


def project_forces(mesh: HexMesh, forces: np.ndarray) -> np.ndarray:
    """Zero the force field on Dirichlet nodes."""
    out = np.array(forces, dtype=float, copy=True).reshape(mesh.num_nodes, 3)
    out[mesh.dirichlet_nodes] = 0.0
    return out


@dataclass(eq=False)
class SimContext:
    """Everything a forward step needs besides the state and the load."""

    mesh: HexMesh
    material: Material
    config: StepConfig = field(default_factory=StepConfig)
    gravity: tuple[float, float, float] = GRAVITY

    @cached_property
    def masses(self) -> np.ndarray:
        return nodal_masses(self.mesh, self.material.density)

    @cached_property
    def mass_diagonal(self) -> np.ndarray:
        return np.repeat(self.masses, 3)

    @cached_property
    def gravity_field(self) -> np.ndarray:
        return gravity_forces(self.mesh, self.material.density, self.gravity)

    @property
    def h(self) -> float:
        return self.config.h

    def with_material(self, material: Material) -> "SimContext":
        return SimContext(self.mesh, material, self.config, self.gravity)

    def rest_state(self) -> SimState:
        return SimState(self.mesh.nodes.copy(), np.zeros_like(self.mesh.nodes), 0)
