"""Differentiable hexahedral FEM soft-body simulation with learned residual physics.

Sub-packages:

- ``resphys.fem``: voxel hex meshes and corotational linear elasticity
- ``resphys.sim``: implicit Euler stepping, adjoints, trajectory containers
- ``resphys.markers``: sparse surface markers and rigid registration
- ``resphys.fitting``: per-timestep residual force fitting and datasets
- ``resphys.learning``: residual network, training, hybrid rollouts
- ``resphys.sysid``: Young's modulus / Poisson's ratio identification
- ``resphys.experiments``: trajectory generators, metrics, ablations
"""

__version__ = "0.1.0"
