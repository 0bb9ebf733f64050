"""Sparse surface markers (observation model) and rigid registration."""

from .interpolation import (
    MarkerAttachment,
    MarkerSet,
    attach_markers,
    interpolate,
    interpolate_vjp,
    marker_jacobian,
    read_marker_trajectory,
    write_marker_trajectory,
)
from .registration import RigidTransform, frame_error, kabsch, register_trajectory

__all__ = [
    "MarkerAttachment",
    "MarkerSet",
    "RigidTransform",
    "attach_markers",
    "frame_error",
    "interpolate",
    "interpolate_vjp",
    "kabsch",
    "marker_jacobian",
    "read_marker_trajectory",
    "register_trajectory",
    "write_marker_trajectory",
]
