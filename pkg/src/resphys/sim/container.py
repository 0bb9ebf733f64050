"""On-disk trajectory container.

A trajectory directory holds ``manifest.json`` ({N, T, h, fields}) and one raw
little-endian float64 file per field, row-major, named ``<field>.f64``. The
``fields`` entry maps each field name to its array shape.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from resphys.errors import ArtifactError, ContainerError
from resphys.sim.state import SimState

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
DTYPE = "<f8"


def write_arrays(directory: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> Path:
    """Write named arrays plus a manifest holding ``meta`` and the field shapes."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    fields = {}
    for name, array in arrays.items():
        array = np.ascontiguousarray(array, dtype=DTYPE)
        array.tofile(directory / f"{name}.f64")
        fields[name] = list(array.shape)
    manifest = {**meta, "fields": fields}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2))
    return directory


def read_manifest(directory: str | Path) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise ArtifactError(str(path))
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ContainerError(f"{path}: invalid JSON ({exc})") from exc


def read_arrays(directory: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    manifest = read_manifest(directory)
    arrays = {}
    for name, shape in manifest.get("fields", {}).items():
        path = directory / f"{name}.f64"
        if not path.exists():
            raise ArtifactError(str(path))
        data = np.fromfile(path, dtype=DTYPE)
        if data.size != int(np.prod(shape)):
            raise ContainerError(f"{path}: expected {int(np.prod(shape))} values, found {data.size}")
        arrays[name] = data.reshape(shape).astype(float)
    return arrays, manifest


@dataclass
class Trajectory:
    """Positions and velocities (T+1, N, 3) with the applied forces (T, N, 3) between them."""

    q: np.ndarray
    v: np.ndarray
    f_ext: np.ndarray
    h: float
    extra: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.q.shape != self.v.shape:
            raise ContainerError(f"q {self.q.shape} and v {self.v.shape} disagree")
        if self.f_ext.shape != (self.q.shape[0] - 1,) + self.q.shape[1:]:
            raise ContainerError(f"f_ext {self.f_ext.shape} does not match T={self.q.shape[0] - 1}")

    @property
    def num_steps(self) -> int:
        return int(self.q.shape[0] - 1)

    @property
    def num_nodes(self) -> int:
        return int(self.q.shape[1])

    def state(self, t: int) -> SimState:
        return SimState(self.q[t].copy(), self.v[t].copy(), t)

    def states(self) -> list[SimState]:
        return [self.state(t) for t in range(self.num_steps + 1)]

    @classmethod
    def from_states(
        cls, states: Sequence[SimState], f_ext: np.ndarray | None, h: float
    ) -> "Trajectory":
        q = np.stack([s.q for s in states])
        v = np.stack([s.v for s in states])
        if f_ext is None:
            f_ext = np.zeros((len(states) - 1,) + q.shape[1:])
        return cls(q=q, v=v, f_ext=np.asarray(f_ext, dtype=float), h=h)


def write_trajectory(directory: str | Path, trajectory: Trajectory, **meta) -> Path:
    arrays = {"q": trajectory.q, "v": trajectory.v, "f_ext": trajectory.f_ext, **trajectory.extra}
    info = {"N": trajectory.num_nodes, "T": trajectory.num_steps, "h": trajectory.h, **meta}
    path = write_arrays(directory, arrays, info)
    logger.debug("wrote trajectory %s (T=%d, N=%d)", path, trajectory.num_steps, trajectory.num_nodes)
    return path


def read_trajectory(directory: str | Path) -> tuple[Trajectory, dict]:
    arrays, manifest = read_arrays(directory)
    try:
        q, v, f_ext = arrays.pop("q"), arrays.pop("v"), arrays.pop("f_ext")
        h = float(manifest["h"])
    except KeyError as exc:
        raise ContainerError(f"{directory}: trajectory is missing {exc}") from exc
    trajectory = Trajectory(q=q, v=v, f_ext=f_ext, h=h, extra=arrays)
    if manifest.get("N") != trajectory.num_nodes or manifest.get("T") != trajectory.num_steps:
        raise ContainerError(f"{directory}: manifest N/T do not match the arrays")
    return trajectory, manifest
