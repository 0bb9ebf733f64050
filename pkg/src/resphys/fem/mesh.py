"""Voxel hexahedral meshes.

Corner ordering inside an element is fixed: corner ``c`` sits at the voxel
offset ``(c >> 2 & 1, c >> 1 & 1, c & 1)`` along (x, y, z). Surface faces are
stored as 4 node indices in cyclic order, oriented so that the cross product
of the two diagonals points out of the body.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Literal

import numpy as np

from resphys.errors import MeshError

logger = logging.getLogger(__name__)

CORNER_OFFSETS = np.array([[(c >> 2) & 1, (c >> 1) & 1, c & 1] for c in range(8)], dtype=float)

# Local faces per (axis, side): -x, +x, -y, +y, -z, +z. Outward for the corner ordering above.
LOCAL_FACES = np.array(
    [
        [0, 1, 3, 2],
        [4, 6, 7, 5],
        [0, 4, 5, 1],
        [2, 3, 7, 6],
        [0, 2, 6, 4],
        [1, 5, 7, 3],
    ],
    dtype=np.int64,
)

AXES = {"x": 0, "y": 1, "z": 2}
ClampFace = Literal["-x", "+x", "-y", "+y", "-z", "+z"]


def parse_face_tag(tag: str) -> tuple[int, int]:
    """Parse a face tag such as ``"-x"`` into ``(axis, side)`` with side 0 = min, 1 = max."""
    if len(tag) != 2 or tag[0] not in "+-" or tag[1] not in AXES:
        raise MeshError(f"invalid face tag {tag!r}; expected one of -x,+x,-y,+y,-z,+z")
    return AXES[tag[1]], 1 if tag[0] == "+" else 0


@dataclass(eq=False)
class HexMesh:
    """Voxelized hex mesh with Dirichlet-fixed nodes and outward surface quads."""

    nodes: np.ndarray
    elements: np.ndarray
    dirichlet_nodes: np.ndarray
    voxel_edge: float
    surface_faces: np.ndarray = field(default=None)  # type: ignore[assignment]
    face_elements: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        self.dirichlet_nodes = np.unique(np.asarray(self.dirichlet_nodes, dtype=np.int64))
        self.voxel_edge = float(self.voxel_edge)
        if self.surface_faces is None:
            self.surface_faces, self.face_elements = boundary_faces(self.elements)
        self.validate()

    @property
    def num_nodes(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def num_elements(self) -> int:
        return int(self.elements.shape[0])

    @property
    def num_dofs(self) -> int:
        return 3 * self.num_nodes

    def validate(self) -> None:
        n = self.num_nodes
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 3:
            raise MeshError(f"nodes must be (N, 3), got {self.nodes.shape}")
        if self.elements.ndim != 2 or self.elements.shape[1] != 8:
            raise MeshError(f"elements must be (E, 8), got {self.elements.shape}")
        if not np.all(np.isfinite(self.nodes)):
            raise MeshError("node positions must be finite")
        if self.voxel_edge <= 0:
            raise MeshError(f"voxel_edge must be positive, got {self.voxel_edge}")
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= n):
            raise MeshError(f"element index out of range [0, {n})")
        if self.dirichlet_nodes.size and (
            self.dirichlet_nodes.min() < 0 or self.dirichlet_nodes.max() >= n
        ):
            raise MeshError(f"dirichlet node index out of range [0, {n})")

        # Axis-aligned cubes of equal edge at rest.
        corners = self.nodes[self.elements]
        expected = corners[:, :1, :] + self.voxel_edge * CORNER_OFFSETS[None]
        bad = np.flatnonzero(np.abs(corners - expected).max(axis=(1, 2)) > 1e-9 * self.voxel_edge)
        if bad.size:
            raise MeshError(f"elements are not axis-aligned cubes of edge {self.voxel_edge}: {bad[:10].tolist()}")

        # Each surface face belongs to exactly one element.
        counts: dict[tuple[int, ...], int] = {}
        for face in self.elements[:, LOCAL_FACES].reshape(-1, 4):
            key = tuple(sorted(face.tolist()))
            counts[key] = counts.get(key, 0) + 1
        for face in self.surface_faces:
            if counts.get(tuple(sorted(face.tolist())), 0) != 1:
                raise MeshError(f"surface face {face.tolist()} is not owned by exactly one element")

        # Outward orientation at rest.
        p = self.nodes[self.surface_faces]
        normal = np.cross(p[:, 2] - p[:, 0], p[:, 3] - p[:, 1])
        outward = p.mean(axis=1) - self.nodes[self.elements[self.face_elements]].mean(axis=1)
        inward = np.flatnonzero(np.einsum("fi,fi->f", normal, outward) <= 0)
        if inward.size:
            raise MeshError(f"surface faces not outward-oriented: {inward[:10].tolist()}")

    @cached_property
    def free_dofs(self) -> np.ndarray:
        """Flat DoF indices not constrained by Dirichlet nodes."""
        mask = np.ones((self.num_nodes, 3), dtype=bool)
        mask[self.dirichlet_nodes] = False
        return np.flatnonzero(mask.ravel())

    @cached_property
    def free_mask(self) -> np.ndarray:
        """(N, 3) boolean mask, False on Dirichlet nodes."""
        mask = np.ones((self.num_nodes, 3), dtype=bool)
        mask[self.dirichlet_nodes] = False
        return mask

    def surface_nodes(self) -> np.ndarray:
        return np.unique(self.surface_faces)

    def face_nodes(self, axis: int, side: int) -> np.ndarray:
        """Nodes lying on the min (side 0) or max (side 1) bounding plane along ``axis``."""
        coord = self.nodes[:, axis]
        target = coord.max() if side else coord.min()
        return np.flatnonzero(np.abs(coord - target) <= 1e-9 * self.voxel_edge)

    def volume(self) -> float:
        return self.num_elements * self.voxel_edge**3

    def to_json(self) -> dict:
        return {
            "nodes": self.nodes.tolist(),
            "elements": self.elements.tolist(),
            "dirichlet": self.dirichlet_nodes.tolist(),
            "voxel_edge": self.voxel_edge,
        }

    @classmethod
    def from_json(cls, data: dict) -> "HexMesh":
        try:
            return cls(
                nodes=np.asarray(data["nodes"], dtype=float),
                elements=np.asarray(data["elements"], dtype=np.int64),
                dirichlet_nodes=np.asarray(data["dirichlet"], dtype=np.int64),
                voxel_edge=float(data["voxel_edge"]),
            )
        except KeyError as exc:
            raise MeshError(f"mesh manifest is missing field {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "HexMesh":
        return cls.from_json(json.loads(Path(path).read_text()))


def boundary_faces(elements: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (faces, owning element) for every element face not shared with another element."""
    elements = np.asarray(elements, dtype=np.int64)
    all_faces = elements[:, LOCAL_FACES]  # (E, 6, 4)
    owners: dict[tuple[int, ...], list[tuple[int, int]]] = {}
    for e in range(elements.shape[0]):
        for f in range(6):
            owners.setdefault(tuple(sorted(all_faces[e, f].tolist())), []).append((e, f))
    faces, face_elements = [], []
    for hits in owners.values():
        if len(hits) == 1:
            e, f = hits[0]
            faces.append(all_faces[e, f])
            face_elements.append(e)
    if not faces:
        return np.zeros((0, 4), dtype=np.int64), np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(len(faces)), np.asarray(face_elements)))
    return np.asarray(faces, dtype=np.int64)[order], np.asarray(face_elements, dtype=np.int64)[order]


def build_voxel_mesh(
    occupancy: np.ndarray,
    voxel_edge: float,
    origin: np.ndarray | None = None,
    dirichlet_nodes: np.ndarray | None = None,
) -> HexMesh:
    """Mesh an occupancy grid (nx, ny, nz) of voxels; unused grid nodes are dropped."""
    occupancy = np.asarray(occupancy, dtype=bool)
    if occupancy.ndim != 3 or not occupancy.any():
        raise MeshError("occupancy must be a non-empty 3D boolean grid")
    origin = np.zeros(3) if origin is None else np.asarray(origin, dtype=float)
    nx, ny, nz = occupancy.shape

    def grid_index(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    voxels = np.argwhere(occupancy)  # lexicographic (i, j, k) order
    corner_grid = voxels[:, None, :] + CORNER_OFFSETS[None].astype(np.int64)
    raw = grid_index(corner_grid[..., 0], corner_grid[..., 1], corner_grid[..., 2])
    used, elements = np.unique(raw, return_inverse=True)
    elements = elements.reshape(-1, 8)

    k = used % (nz + 1)
    j = (used // (nz + 1)) % (ny + 1)
    i = used // ((nz + 1) * (ny + 1))
    nodes = origin + voxel_edge * np.stack([i, j, k], axis=1).astype(float)
    return HexMesh(
        nodes=nodes,
        elements=elements,
        dirichlet_nodes=np.zeros(0, dtype=np.int64) if dirichlet_nodes is None else dirichlet_nodes,
        voxel_edge=voxel_edge,
    )


def build_voxel_beam(
    size: tuple[float, float, float] | np.ndarray,
    voxel_edge: float,
    clamp_face: ClampFace | None = "-x",
) -> HexMesh:
    """Box of ``size`` meters voxelized at ``voxel_edge``; nodes on ``clamp_face`` are fixed.

    ``clamp_face=None`` builds a free-floating body without Dirichlet nodes.
    """
    size = np.asarray(size, dtype=float)
    if voxel_edge <= 0:
        raise MeshError(f"voxel_edge must be positive, got {voxel_edge}")
    counts = size / voxel_edge
    rounded = np.rint(counts)
    for axis, name in enumerate("xyz"):
        if rounded[axis] < 1 or abs(counts[axis] - rounded[axis]) > 1e-9 * max(counts[axis], 1.0):
            raise MeshError(
                f"size along {name} ({size[axis]} m) is not an integer multiple of voxel edge {voxel_edge} m"
            )
    mesh = build_voxel_mesh(np.ones(rounded.astype(int), dtype=bool), voxel_edge)
    if clamp_face is not None:
        axis, side = parse_face_tag(clamp_face)
        mesh = HexMesh(
            nodes=mesh.nodes,
            elements=mesh.elements,
            dirichlet_nodes=mesh.face_nodes(axis, side),
            voxel_edge=voxel_edge,
            surface_faces=mesh.surface_faces,
            face_elements=mesh.face_elements,
        )
    logger.debug(
        "voxel beam %s m @ %s m: %d elements, %d nodes, %d fixed",
        size.tolist(), voxel_edge, mesh.num_elements, mesh.num_nodes, mesh.dirichlet_nodes.size,
    )
    return mesh
