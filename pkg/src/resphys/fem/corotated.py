"""Corotational linear elasticity on voxel hexes.

Energy density ``psi(F) = mu ||F - R||_F^2 + lambda/2 tr^2(R^T F - I)`` with R the
rotation of the polar decomposition of F, integrated with 2x2x2 Gauss points
per trilinear hex. Internal forces are the exact negative energy gradient and
the tangent stiffness ``K = -d f_int / dq`` is the exact energy Hessian
(including the derivative of R).
"""

from __future__ import annotations

import logging
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from resphys.errors import DegenerateElementError
from resphys.fem.material import Material
from resphys.fem.mesh import CORNER_OFFSETS, HexMesh

logger = logging.getLogger(__name__)

_GAUSS = 1.0 / np.sqrt(3.0)
_BASIS_9 = np.eye(9).reshape(9, 3, 3)


@lru_cache(maxsize=8)
def reference_gradients(voxel_edge: float) -> np.ndarray:
    """Shape function gradients dN/dX at the 8 Gauss points, shape (8 points, 8 nodes, 3)."""
    signs = 2.0 * CORNER_OFFSETS - 1.0  # (8, 3)
    points = _GAUSS * signs  # same sign pattern doubles as point layout
    factors = 1.0 + points[:, None, :] * signs[None, :, :]  # (Q, A, 3)
    grads = np.empty((8, 8, 3))
    for d in range(3):
        others = [o for o in range(3) if o != d]
        grads[:, :, d] = signs[None, :, d] / 8.0 * factors[:, :, others[0]] * factors[:, :, others[1]]
    grads *= 2.0 / voxel_edge
    grads.setflags(write=False)
    return grads


def quadrature_volume(voxel_edge: float) -> float:
    """Volume weight of one Gauss point (unit weights times det J)."""
    return (0.5 * voxel_edge) ** 3


def deformation_gradients(mesh: HexMesh, q: np.ndarray) -> np.ndarray:
    """Deformation gradients F at every element Gauss point, shape (E, 8, 3, 3)."""
    x = np.asarray(q, dtype=float)[mesh.elements]  # (E, 8, 3)
    return np.einsum("ean,qaj->eqnj", x, reference_gradients(mesh.voxel_edge))


def polar_rotation(F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotation R (det +1) and symmetric stretch S = R^T F of a stack of 3x3 matrices."""
    U, sigma, Vt = np.linalg.svd(F)
    flip = np.linalg.det(U) * np.linalg.det(Vt) < 0
    if np.any(flip):
        U = U.copy()
        U[flip, :, 2] *= -1.0
    R = U @ Vt
    S = np.swapaxes(R, -1, -2) @ F
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    return R, S


def degenerate_elements(mesh: HexMesh, q: np.ndarray) -> list[int]:
    """Elements with det F <= 0 at any Gauss point."""
    det = np.linalg.det(deformation_gradients(mesh, q))
    return np.flatnonzero((det <= 0).any(axis=1)).tolist()


def element_volumes(mesh: HexMesh, q: np.ndarray) -> np.ndarray:
    """Deformed volume of every element, shape (E,); voxel_edge**3 at rest."""
    det = np.linalg.det(deformation_gradients(mesh, q))
    return quadrature_volume(mesh.voxel_edge) * det.sum(axis=1)


def _report_degenerate(F: np.ndarray, strict: bool = False) -> None:
    bad = np.flatnonzero((np.linalg.det(F) <= 0).any(axis=1))
    if bad.size and strict:
        raise DegenerateElementError(bad.tolist())
    if bad.size:
        logger.warning("degenerate elements (det F <= 0): %s", bad[:20].tolist())


def _energy_density(F: np.ndarray, R: np.ndarray, S: np.ndarray, mu: float, lam: float) -> np.ndarray:
    stretch = np.trace(S, axis1=-2, axis2=-1) - 3.0
    return mu * np.sum((F - R) ** 2, axis=(-2, -1)) + 0.5 * lam * stretch**2


def _first_piola(F: np.ndarray, R: np.ndarray, S: np.ndarray, mu: float, lam: float) -> np.ndarray:
    stretch = np.trace(S, axis1=-2, axis2=-1) - 3.0
    return 2.0 * mu * (F - R) + lam * stretch[..., None, None] * R


def _skew(w: np.ndarray) -> np.ndarray:
    zero = np.zeros_like(w[..., 0])
    return np.stack(
        [
            np.stack([zero, -w[..., 2], w[..., 1]], axis=-1),
            np.stack([w[..., 2], zero, -w[..., 0]], axis=-1),
            np.stack([-w[..., 1], w[..., 0], zero], axis=-1),
        ],
        axis=-2,
    )


def _stress_derivative(R: np.ndarray, S: np.ndarray, mu: float, lam: float) -> np.ndarray:
    """dP_ij / dF_kl at every point, shape (..., 3, 3, 3, 3)."""
    RtdF = np.einsum("...ki,bkj->...bij", R, _BASIS_9)
    A = RtdF - np.swapaxes(RtdF, -1, -2)
    axial = np.stack([A[..., 2, 1], A[..., 0, 2], A[..., 1, 0]], axis=-1)

    trace_s = np.trace(S, axis1=-2, axis2=-1)
    H = trace_s[..., None, None] * np.eye(3) - S
    try:
        w = np.linalg.solve(H[..., None, :, :], axial[..., None])[..., 0]
    except np.linalg.LinAlgError:
        w = np.einsum("...ij,...bj->...bi", np.linalg.pinv(H), axial)
    dR = np.einsum("...ij,...bjk->...bik", R, _skew(w))

    trace_rtdf = np.trace(RtdF, axis1=-2, axis2=-1)
    stretch = (trace_s - 3.0)[..., None, None, None]
    dP = (
        2.0 * mu * (_BASIS_9 - dR)
        + lam * trace_rtdf[..., None, None] * R[..., None, :, :]
        + lam * stretch * dR
    )
    shape = dP.shape[:-3] + (3, 3, 3, 3)
    return np.moveaxis(dP.reshape(shape), (-4, -3), (-2, -1))


def elastic_energy(mesh: HexMesh, mat: Material, q: np.ndarray, strict: bool = False) -> float:
    """Total elastic energy [J].

    Inverted elements (det F <= 0) are logged and still integrated; with
    ``strict`` they raise :class:`DegenerateElementError` instead.
    """
    F = deformation_gradients(mesh, q)
    _report_degenerate(F, strict)
    R, S = polar_rotation(F)
    psi = _energy_density(F, R, S, mat.lame_mu, mat.lame_lambda)
    return float(quadrature_volume(mesh.voxel_edge) * psi.sum())


def _assemble_forces(mesh: HexMesh, P: np.ndarray) -> np.ndarray:
    grads = reference_gradients(mesh.voxel_edge)
    f_e = -quadrature_volume(mesh.voxel_edge) * np.einsum("eqij,qaj->eai", P, grads)
    forces = np.zeros((mesh.num_nodes, 3))
    np.add.at(forces, mesh.elements, f_e)
    return forces


def _element_dofs(mesh: HexMesh) -> np.ndarray:
    return (3 * mesh.elements[:, :, None] + np.arange(3)).reshape(-1, 24)


def _assemble_stiffness(mesh: HexMesh, C: np.ndarray) -> sp.csr_matrix:
    grads = reference_gradients(mesh.voxel_edge)
    k_e = quadrature_volume(mesh.voxel_edge) * np.einsum(
        "eqijkl,qaj,qbl->eaibk", C, grads, grads, optimize=True
    )
    k_e = k_e.reshape(-1, 24, 24)
    dofs = _element_dofs(mesh)
    rows = np.broadcast_to(dofs[:, :, None], k_e.shape).ravel()
    cols = np.broadcast_to(dofs[:, None, :], k_e.shape).ravel()
    n = mesh.num_dofs
    return sp.coo_matrix((k_e.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def internal_forces(mesh: HexMesh, mat: Material, q: np.ndarray) -> np.ndarray:
    """f_int = -dE/dq, shape (N, 3)."""
    F = deformation_gradients(mesh, q)
    R, S = polar_rotation(F)
    return _assemble_forces(mesh, _first_piola(F, R, S, mat.lame_mu, mat.lame_lambda))


def tangent_stiffness(mesh: HexMesh, mat: Material, q: np.ndarray) -> sp.csr_matrix:
    """K = -d f_int / dq as a sparse symmetric (3N, 3N) matrix."""
    F = deformation_gradients(mesh, q)
    R, S = polar_rotation(F)
    return _assemble_stiffness(mesh, _stress_derivative(R, S, mat.lame_mu, mat.lame_lambda))


def forces_and_stiffness(
    mesh: HexMesh, mat: Material, q: np.ndarray
) -> tuple[np.ndarray, sp.csr_matrix]:
    """Internal forces and tangent stiffness sharing one polar decomposition."""
    F = deformation_gradients(mesh, q)
    R, S = polar_rotation(F)
    mu, lam = mat.lame_mu, mat.lame_lambda
    forces = _assemble_forces(mesh, _first_piola(F, R, S, mu, lam))
    return forces, _assemble_stiffness(mesh, _stress_derivative(R, S, mu, lam))


def nodal_masses(mesh: HexMesh, density: float) -> np.ndarray:
    """Row-sum lumped trilinear mass per node: each element gives rho V / 8 to its corners."""
    per_corner = density * mesh.voxel_edge**3 / 8.0
    return np.bincount(mesh.elements.ravel(), minlength=mesh.num_nodes) * per_corner


def lumped_mass(mesh: HexMesh, density: float) -> sp.dia_matrix:
    """Diagonal (3N, 3N) lumped mass matrix."""
    return sp.diags(np.repeat(nodal_masses(mesh, density), 3))


def gravity_forces(
    mesh: HexMesh, density: float, gravity: tuple[float, float, float] = (0.0, 0.0, -9.81)
) -> np.ndarray:
    """Nodal weight of the lumped mass, shape (N, 3)."""
    return nodal_masses(mesh, density)[:, None] * np.asarray(gravity, dtype=float)[None, :]
