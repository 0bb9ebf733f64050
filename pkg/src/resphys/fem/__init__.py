"""Hexahedral voxel meshes and corotational linear elasticity."""

from .corotated import (
    deformation_gradients,
    degenerate_elements,
    elastic_energy,
    element_volumes,
    forces_and_stiffness,
    gravity_forces,
    internal_forces,
    lumped_mass,
    nodal_masses,
    polar_rotation,
    tangent_stiffness,
)
from .material import Material, lame_parameters
from .mesh import HexMesh, boundary_faces, build_voxel_beam, build_voxel_mesh, parse_face_tag

__all__ = [
    "HexMesh",
    "Material",
    "boundary_faces",
    "build_voxel_beam",
    "build_voxel_mesh",
    "deformation_gradients",
    "degenerate_elements",
    "elastic_energy",
    "element_volumes",
    "forces_and_stiffness",
    "gravity_forces",
    "internal_forces",
    "lame_parameters",
    "lumped_mass",
    "nodal_masses",
    "parse_face_tag",
    "polar_rotation",
    "tangent_stiffness",
]
