"""Young's modulus / Poisson's ratio identification from marker trajectories."""

from .identification import (
    SysIdConfig,
    SysIdData,
    SysIdReport,
    read_grid,
    sysid_grid,
    sysid_loss,
    sysid_optimize,
    write_grid,
)

__all__ = [
    "SysIdConfig",
    "SysIdData",
    "SysIdReport",
    "read_grid",
    "sysid_grid",
    "sysid_loss",
    "sysid_optimize",
    "write_grid",
]
