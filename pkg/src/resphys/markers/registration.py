"""Rigid registration of measured marker data into the simulation frame."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import det, svd
from scipy.spatial.transform import Rotation

from resphys.errors import RegistrationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RigidTransform:
    """x -> R x + t with R a proper rotation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if R.shape != (3, 3) or t.shape != (3,):
            raise RegistrationError(f"rotation must be 3x3 and translation 3-vector, got {R.shape}, {t.shape}")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-10 or abs(det(R) - 1.0) > 1e-10:
            raise RegistrationError("rotation is not orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def random(cls, rng: np.random.Generator, translation_scale: float = 1.0) -> "RigidTransform":
        rotation = Rotation.random(random_state=rng).as_matrix()
        return cls(rotation, translation_scale * rng.standard_normal(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)


def kabsch(source: np.ndarray, target: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform mapping ``source`` onto ``target`` (both (m, 3))."""
    P = np.asarray(source, dtype=float)
    Q = np.asarray(target, dtype=float)
    if P.shape != Q.shape or P.ndim != 2 or P.shape[1] != 3:
        raise RegistrationError(f"point sets must be matching (m, 3) arrays, got {P.shape} and {Q.shape}")
    if P.shape[0] < 3:
        raise RegistrationError(f"need at least 3 points, got {P.shape[0]}")

    p_mean, q_mean = P.mean(axis=0), Q.mean(axis=0)
    Pc, Qc = P - p_mean, Q - q_mean
    spread = svd(Pc, compute_uv=False)
    if spread[0] == 0.0 or spread[1] <= 1e-12 * spread[0]:
        raise RegistrationError("source points are collinear or coincident")

    U, _, Vt = svd(Pc.T @ Qc)
    D = np.eye(3)
    D[2, 2] = 1.0 if det(Vt.T @ U.T) >= 0 else -1.0
    R = Vt.T @ D @ U.T
    return RigidTransform(R, q_mean - R @ p_mean)


def frame_error(found: RigidTransform, truth: RigidTransform) -> tuple[float, float]:
    """Rotation angle [rad] and translation [m] left after undoing ``truth`` with ``found``.

    ``found`` maps recorded points back to the simulation frame and ``truth``
    is the frame they were recorded in, so ``found.compose(truth)`` is the
    identity for a perfect registration.
    """
    residual = found.compose(truth)
    angle = float(Rotation.from_matrix(residual.rotation).magnitude())
    return angle, float(np.linalg.norm(residual.translation))


def register_trajectory(
    raw_markers: np.ndarray, rest_markers: np.ndarray, known_frame: RigidTransform | None = None
) -> np.ndarray:
    """Align every frame with the transform that maps raw frame 0 onto ``rest_markers``.

    With ``known_frame`` (synthetic recordings) the recovered transform is
    checked against it and the leftover rotation and translation are logged.
    """
    raw = np.asarray(raw_markers, dtype=float)
    transform = kabsch(raw[0], rest_markers)
    residual = np.linalg.norm(transform.apply(raw[0]) - rest_markers, axis=-1)
    logger.info(
        "registered %d frames of %d markers (rest-frame residual max %.3e m)",
        raw.shape[0], raw.shape[1], residual.max(),
    )
    if known_frame is not None:
        angle, offset = frame_error(transform, known_frame)
        logger.info("recording frame recovered to %.3e rad, %.3e m", angle, offset)
    return transform.apply(raw)
