"""Per-timestep residual force fitting.

Dataset building lives in :mod:`resphys.fitting.dataset`; it pulls in the
experiment generators, so it is not re-exported here.
"""

from .config import FitConfig, FitReport, InitStateReport
from .jobs import JobItem, JobList
from .residual import FittedTrajectory, fit_initial_state, fit_step, fit_trajectory

__all__ = [
    "FitConfig",
    "FitReport",
    "FittedTrajectory",
    "InitStateReport",
    "JobItem",
    "JobList",
    "fit_initial_state",
    "fit_step",
    "fit_trajectory",
]
