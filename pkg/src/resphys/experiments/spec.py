"""Experiment and run configuration.

Defaults follow the sim-to-sim beam setup: a 10 x 3 x 3 cm beam at 1 cm voxels
clamped at -x, a soft "incorrect" simulator (215 kPa, 0.45) and a stiffer
"correct" one (264 kPa, 0.499) that produces the targets.
"""

from __future__ import annotations

from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from resphys.fem.material import Material
from resphys.fem.mesh import HexMesh, build_voxel_beam
from resphys.fitting.config import FitConfig
from resphys.learning.network import NetSpec
from resphys.learning.training import TrainConfig
from resphys.sim.state import SimContext, StepConfig
from resphys.sysid.identification import SysIdConfig

ExperimentKind = Literal["oscillate", "twist", "pseudo_real", "actuated_synthetic"]

DEFAULT_STEPS = {"oscillate": 150, "twist": 100, "pseudo_real": 140, "actuated_synthetic": 100}
DEFAULT_SPLITS = {
    "oscillate": (9, 2, 5),
    "twist": (10, 2, 8),
    "pseudo_real": (9, 2, 5),
    "actuated_synthetic": (8, 2, 4),
}


def default_weights() -> List[float]:
    """17 tip weights [kg] between 50 and 210 g."""
    return np.round(np.linspace(0.05, 0.21, 17), 6).tolist()


def default_angles() -> List[float]:
    """20 twist angles [rad] between pi/6 and pi."""
    return np.linspace(np.pi / 6, np.pi, 20).tolist()


class ExperimentSpec(BaseModel):
    """What to simulate and how trajectories are split."""

    model_config = ConfigDict(frozen=True)

    kind: ExperimentKind = Field("oscillate", description="Experiment family")
    beam_size: Tuple[float, float, float] = Field((0.10, 0.03, 0.03), description="Beam extent [m]")
    voxel_edge: float = Field(0.01, gt=0, description="Voxel edge [m]")
    clamp_face: str = Field("-x", description="Clamped bounding-box face")
    sim1: Material = Field(
        Material(youngs_modulus=215e3, poissons_ratio=0.45),
        description="Simulator to be corrected",
    )
    sim2: Material = Field(
        Material(youngs_modulus=264e3, poissons_ratio=0.499),
        description="Simulator producing the targets",
    )
    step: StepConfig = Field(default_factory=StepConfig, description="Time step and Newton settings")
    steps: Optional[int] = Field(None, ge=1, description="Steps T per trajectory (default per kind)")
    gravity: bool = Field(True, description="Apply gravity")
    weights: List[float] = Field(default_factory=default_weights, description="Tip weights [kg]")
    angles: List[float] = Field(default_factory=default_angles, description="Twist angles [rad]")
    pseudo_real_base: Literal["oscillate", "twist"] = Field(
        "oscillate", description="Motion recorded by the pseudo-real markers"
    )
    marker_count: int = Field(10, ge=1, description="Markers for pseudo-real data")
    marker_seed: int = Field(0, description="Seed of the marker placement")
    noise_sigma: float = Field(1e-4, ge=0, description="Marker noise std-dev [m]")
    virtual_steps: int = Field(140, ge=1, description="Virtual-force steps for the initial state")
    actuation_amplitude: float = Field(0.05, ge=0, description="Std-dev of the tip actuation force [N]")
    actuation_kernel: float = Field(10.0, ge=0, description="Gaussian smoothing width [steps]")
    actuation_trajectories: Optional[int] = Field(None, ge=1, description="Number of actuated trajectories")
    splits: Optional[Tuple[int, int, int]] = Field(None, description="train/val/test trajectory counts")
    split_seed: int = Field(0, description="Seed of the trajectory-to-split assignment")

    @model_validator(mode="after")
    def _check(self) -> "ExperimentSpec":
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be non-negative")
        if any(not 0 <= a <= np.pi for a in self.angles):
            raise ValueError("twist angles must lie in [0, pi]")
        if self.splits is not None and min(self.splits) < 0:
            raise ValueError("split counts must be non-negative")
        return self

    @property
    def num_steps(self) -> int:
        return self.steps if self.steps is not None else DEFAULT_STEPS[self.kind]

    @property
    def split_counts(self) -> Tuple[int, int, int]:
        return self.splits if self.splits is not None else DEFAULT_SPLITS[self.kind]

    @property
    def rate_hz(self) -> float:
        return 1.0 / self.step.h

    def build_mesh(self) -> HexMesh:
        return build_voxel_beam(self.beam_size, self.voxel_edge, self.clamp_face)

    def context(self, which: Literal[1, 2], mesh: HexMesh | None = None) -> SimContext:
        material = self.sim1 if which == 1 else self.sim2
        return SimContext(mesh or self.build_mesh(), material, self.step)


class RunConfig(BaseModel):
    """Everything a CLI run reads from its JSON config file."""

    experiment: ExperimentSpec = Field(default_factory=ExperimentSpec)
    fit: FitConfig = Field(default_factory=FitConfig)
    net: NetSpec = Field(default_factory=NetSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    sysid: SysIdConfig = Field(default_factory=SysIdConfig)
    method: Literal["Original", "SysID", "SimFree", "ResPhys"] = Field(
        "ResPhys", description="Method evaluated by the eval and rollout commands"
    )
    simulator: Literal[1, 2] = Field(2, description="Simulator used by the simulate command")
    ablation_counts: List[int] = Field([1, 2, 4, 8, 16, 32, 64, 128], description="Marker counts")
    ablation_samples: int = Field(10, ge=1, description="Random marker subsets per count")
    search_budget: int = Field(0, ge=0, description="Random hyperparameter search trials (0 = off)")
