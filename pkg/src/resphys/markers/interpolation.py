"""Sparse surface markers riding on boundary quads.

A marker is attached once at rest to one surface face with bilinear weights
alpha and a signed offset s along the face normal. Its position for any
configuration q is

    x(q) = sum_i alpha_i e_i(q) + s n(q)

with e_i the deformed face corners and n the unit normal given by the cross
product of the face diagonals (e2 - e0) x (e3 - e1).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from resphys.errors import MarkerError
from resphys.fem.mesh import HexMesh
from resphys.sim.container import read_arrays, write_arrays

logger = logging.getLogger(__name__)

INVERSE_BILINEAR_ITERS = 20
INVERSE_BILINEAR_TOL = 1e-12
WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class MarkerAttachment:
    face: int
    alpha: tuple[float, float, float, float]
    offset_s: float


@dataclass(eq=False)
class MarkerSet:
    attachments: list[MarkerAttachment]
    rest_points: np.ndarray | None = field(default=None)

    def __post_init__(self) -> None:
        if len(self.attachments) < 1:
            raise MarkerError("a marker set needs at least one marker")
        for index, att in enumerate(self.attachments):
            alpha = np.asarray(att.alpha)
            if abs(alpha.sum() - 1.0) > 1e-9 or alpha.min() < -1e-12 or alpha.max() > 1 + 1e-12:
                raise MarkerError(f"marker {index}: weights {alpha.tolist()} are not a convex combination")

    def __len__(self) -> int:
        return len(self.attachments)

    @cached_property
    def faces(self) -> np.ndarray:
        return np.array([a.face for a in self.attachments], dtype=np.int64)

    @cached_property
    def alphas(self) -> np.ndarray:
        return np.array([a.alpha for a in self.attachments], dtype=float)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.array([a.offset_s for a in self.attachments], dtype=float)

    def subset(self, indices: np.ndarray) -> "MarkerSet":
        rest = None if self.rest_points is None else self.rest_points[indices]
        return MarkerSet([self.attachments[i] for i in indices], rest)

    def to_json(self) -> dict:
        return {
            "faces": self.faces.tolist(),
            "alpha": self.alphas.tolist(),
            "offset_s": self.offsets.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "MarkerSet":
        return cls(
            [
                MarkerAttachment(int(f), tuple(float(x) for x in a), float(s))
                for f, a, s in zip(data["faces"], data["alpha"], data["offset_s"])
            ]
        )


def bilinear_weights(ab: np.ndarray) -> np.ndarray:
    a, b = ab[..., 0], ab[..., 1]
    return np.stack([(1 - a) * (1 - b), a * (1 - b), a * b, (1 - a) * b], axis=-1)


def face_normals(corners: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals and the unnormalized diagonal cross products of quads (..., 4, 3)."""
    c = np.cross(corners[..., 2, :] - corners[..., 0, :], corners[..., 3, :] - corners[..., 1, :])
    norm = np.linalg.norm(c, axis=-1, keepdims=True)
    return c / np.where(norm > 0, norm, 1.0), c


def inverse_bilinear(corners: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Face coordinates (a, b) of the projection of ``points`` onto bilinear quads.

    Gauss-Newton on the 3D residual, which is Newton on the face plane for planar quads.
    """
    e0, e1, e2, e3 = (corners[..., i, :] for i in range(4))
    ab = np.full(np.broadcast_shapes(points.shape[:-1], corners.shape[:-2]) + (2,), 0.5)
    for _ in range(INVERSE_BILINEAR_ITERS):
        a, b = ab[..., 0:1], ab[..., 1:2]
        x = np.einsum("...k,...kj->...j", bilinear_weights(ab), corners)
        r = x - points
        ja = (1 - b) * (e1 - e0) + b * (e2 - e3)
        jb = (1 - a) * (e3 - e0) + a * (e2 - e1)
        J = np.stack([ja, jb], axis=-1)  # (..., 3, 2)
        JtJ = np.einsum("...ki,...kj->...ij", J, J)
        Jtr = np.einsum("...ki,...k->...i", J, r)
        delta = -np.linalg.solve(JtJ, Jtr[..., None])[..., 0]
        ab = ab + delta
        if np.abs(delta).max() < INVERSE_BILINEAR_TOL:
            break
    return ab


def attach_markers(mesh: HexMesh, rest_q: np.ndarray, marker_points: np.ndarray) -> MarkerSet:
    """Attach each point to the surface face it sits above with the smallest offset."""
    points = np.asarray(marker_points, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(points)):
        raise MarkerError("marker points must be finite")
    if mesh.surface_faces.shape[0] == 0:
        raise MarkerError("mesh has no surface faces")
    corners = np.asarray(rest_q, dtype=float)[mesh.surface_faces]  # (F, 4, 3)
    normals, _ = face_normals(corners)

    ab = inverse_bilinear(corners[None], points[:, None, :])  # (m, F, 2)
    weights = bilinear_weights(ab)
    projected = np.einsum("mfk,fkj->mfj", weights, corners)
    offsets = np.einsum("mfj,fj->mf", points[:, None, :] - projected, normals)
    inside = np.all((weights >= -WEIGHT_TOL) & (weights <= 1 + WEIGHT_TOL), axis=-1)
    distance = np.where(inside, np.abs(offsets), np.inf)

    attachments = []
    for i in range(points.shape[0]):
        f = int(np.argmin(distance[i]))
        if not np.isfinite(distance[i, f]):
            raise MarkerError(f"marker {i} at {points[i].tolist()} does not project onto any surface face")
        if distance[i, f] > mesh.voxel_edge:
            raise MarkerError(
                f"marker {i} is {distance[i, f]:.4g} m from the surface (limit {mesh.voxel_edge} m)"
            )
        alpha = np.clip(weights[i, f], 0.0, 1.0)
        alpha /= alpha.sum()
        attachments.append(MarkerAttachment(f, tuple(float(x) for x in alpha), float(offsets[i, f])))
    logger.debug("attached %d markers", len(attachments))
    return MarkerSet(attachments, rest_points=points.copy())


def _deformed_faces(markers: MarkerSet, mesh: HexMesh, q: np.ndarray) -> np.ndarray:
    corners = np.asarray(q, dtype=float)[mesh.surface_faces[markers.faces]]  # (m, 4, 3)
    _, c = face_normals(corners)
    area = np.linalg.norm(c, axis=-1)
    bad = np.flatnonzero(area <= 1e-14 * mesh.voxel_edge**2)
    if bad.size:
        raise MarkerError(f"degenerate marker faces (zero area) for markers {bad.tolist()}")
    return corners


def interpolate(markers: MarkerSet, mesh: HexMesh, q: np.ndarray) -> np.ndarray:
    """Marker positions (m, 3) for configuration q."""
    corners = _deformed_faces(markers, mesh, q)
    normals, _ = face_normals(corners)
    return np.einsum("mk,mkj->mj", markers.alphas, corners) + markers.offsets[:, None] * normals


def _cross_matrix(v: np.ndarray) -> np.ndarray:
    zero = np.zeros_like(v[..., 0])
    return np.stack(
        [
            np.stack([zero, -v[..., 2], v[..., 1]], axis=-1),
            np.stack([v[..., 2], zero, -v[..., 0]], axis=-1),
            np.stack([-v[..., 1], v[..., 0], zero], axis=-1),
        ],
        axis=-2,
    )


def marker_jacobian(markers: MarkerSet, mesh: HexMesh, q: np.ndarray) -> sp.csr_matrix:
    """dx/dq as a sparse (3m, 3N) matrix."""
    corners = _deformed_faces(markers, mesh, q)
    n, c = face_normals(corners)
    norm = np.linalg.norm(c, axis=-1)
    dn_dc = (np.eye(3) - n[:, :, None] * n[:, None, :]) / norm[:, None, None]
    d1 = corners[:, 2] - corners[:, 0]
    d2 = corners[:, 3] - corners[:, 1]
    x1, x2 = _cross_matrix(d1), _cross_matrix(d2)
    dc_de = np.stack([x2, -x1, -x2, x1], axis=1)  # (m, 4, 3, 3)

    m = len(markers)
    blocks = (
        markers.alphas[:, :, None, None] * np.eye(3)
        + markers.offsets[:, None, None, None] * np.einsum("mij,mkjl->mkil", dn_dc, dc_de)
    )
    nodes = mesh.surface_faces[markers.faces]  # (m, 4)
    rows = np.broadcast_to((3 * np.arange(m))[:, None, None, None] + np.arange(3)[None, None, :, None], blocks.shape)
    cols = np.broadcast_to(3 * nodes[:, :, None, None] + np.arange(3)[None, None, None, :], blocks.shape)
    return sp.coo_matrix(
        (blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * m, mesh.num_dofs)
    ).tocsr()


def interpolate_vjp(markers: MarkerSet, mesh: HexMesh, q: np.ndarray, dL_dx: np.ndarray) -> np.ndarray:
    """Pull a marker-space cotangent (m, 3) back to node space (N, 3)."""
    J = marker_jacobian(markers, mesh, q)
    return (J.T @ np.asarray(dL_dx, dtype=float).ravel()).reshape(-1, 3)


def write_marker_trajectory(directory: str | Path, markers: np.ndarray, rate_hz: float, **meta) -> Path:
    """Marker file: manifest {m, T, rate_hz} plus ``markers.f64`` of shape (T, m, 3)."""
    markers = np.asarray(markers, dtype=float)
    info = {"m": int(markers.shape[1]), "T": int(markers.shape[0]), "rate_hz": float(rate_hz), **meta}
    return write_arrays(directory, {"markers": markers}, info)


def read_marker_trajectory(directory: str | Path) -> tuple[np.ndarray, dict]:
    arrays, manifest = read_arrays(directory)
    return arrays["markers"], manifest
