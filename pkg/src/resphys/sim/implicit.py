"""Implicit Euler stepping with Newton's method and one-step adjoints.

A step solves

    g(q') = M (q' - q - h v) - h^2 (f_int(q') + f_ext + f_grav) = 0

on the free DoFs, with Dirichlet DoFs held at their current positions, and
sets v' = (q' - q) / h. Gradients through a converged step follow from the
implicit function theorem with A = M + h^2 K(q'), K = -d f_int / dq.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from resphys.errors import NewtonConvergenceError, RolloutError, SimulationError
from resphys.fem.corotated import elastic_energy, internal_forces, tangent_stiffness
from resphys.sim.state import LoadSpec, SimContext, SimState

logger = logging.getLogger(__name__)

ABSOLUTE_FLOOR = 1e-12


@dataclass
class NewtonReport:
    iterations: int
    residual: float
    threshold: float


def factorize(matrix: sp.spmatrix):
    try:
        return splu(sp.csc_matrix(matrix), permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise SimulationError(f"singular system matrix: {exc}") from exc


def system_matrix(ctx: SimContext, q: np.ndarray) -> sp.csr_matrix:
    """Free-DoF block of A = M + h^2 K(q)."""
    h = ctx.h
    A = sp.diags(ctx.mass_diagonal) + h * h * tangent_stiffness(ctx.mesh, ctx.material, q)
    free = ctx.mesh.free_dofs
    return sp.csr_matrix(A)[free][:, free]


def _external(ctx: SimContext, load: LoadSpec) -> np.ndarray:
    f = load.applied_forces(ctx.mesh.num_nodes)
    if load.gravity_on:
        f = f + ctx.gravity_field
    return f


def step_residual(
    ctx: SimContext, state: SimState, load: LoadSpec, q_next: np.ndarray
) -> np.ndarray:
    """Implicit Euler residual g(q_next) on the free DoFs (flat)."""
    h = ctx.h
    f = internal_forces(ctx.mesh, ctx.material, q_next) + _external(ctx, load)
    g = ctx.masses[:, None] * (q_next - state.q - h * state.v) - h * h * f
    return g.ravel()[ctx.mesh.free_dofs]


def _residual_scale(ctx: SimContext, state: SimState, load: LoadSpec) -> float:
    h = ctx.h
    scale = h * h * _external(ctx, load) + h * ctx.masses[:, None] * state.v
    return float(np.linalg.norm(scale.ravel()[ctx.mesh.free_dofs]))


def residual_threshold(ctx: SimContext, state: SimState, load: LoadSpec) -> float:
    """Absolute residual norm below which a step counts as converged."""
    denom = _residual_scale(ctx, state, load)
    if denom <= ABSOLUTE_FLOOR:
        return ABSOLUTE_FLOOR
    return ctx.config.newton_tol * denom


def relative_residual(ctx: SimContext, state: SimState, load: LoadSpec, next_state: SimState) -> float:
    """Residual of ``next_state`` relative to the step scale, re-evaluated from scratch.

    Falls back to the absolute norm when the step scale vanishes.
    """
    g = float(np.linalg.norm(step_residual(ctx, state, load, next_state.q)))
    denom = _residual_scale(ctx, state, load)
    return g / denom if denom > ABSOLUTE_FLOOR else g


def solve_step(
    ctx: SimContext, state: SimState, load: LoadSpec
) -> tuple[np.ndarray, NewtonReport]:
    """Newton solve for q_{t+1}; returns positions and a convergence report."""
    cfg = ctx.config
    free = ctx.mesh.free_dofs
    threshold = residual_threshold(ctx, state, load)

    q = state.q + ctx.h * state.v
    q[ctx.mesh.dirichlet_nodes] = state.q[ctx.mesh.dirichlet_nodes]
    g = step_residual(ctx, state, load, q)
    r = float(np.linalg.norm(g))
    if not np.isfinite(r):
        raise SimulationError(f"non-finite residual at initial guess (t={state.t})")

    for it in range(cfg.newton_max_iters):
        if r <= threshold:
            return q, NewtonReport(it, r, threshold)
        lu = factorize(system_matrix(ctx, q))
        dq = lu.solve(-g)
        if not np.all(np.isfinite(dq)):
            raise SimulationError(f"non-finite Newton direction (t={state.t}, iteration {it})")

        alpha = 1.0
        for backtrack in range(cfg.ls_backtracks + 1):
            q_try = q.copy()
            q_try.ravel()[free] += alpha * dq
            g_try = step_residual(ctx, state, load, q_try)
            r_try = float(np.linalg.norm(g_try))
            if np.isfinite(r_try) and r_try < r:
                break
            alpha *= 0.5
        else:
            raise NewtonConvergenceError(r, it + 1)
        if backtrack:
            logger.debug("t=%d newton %d: %d backtracks", state.t, it, backtrack)
        q, g, r = q_try, g_try, r_try
        logger.debug("t=%d newton %d: |g|=%.3e (threshold %.3e)", state.t, it, r, threshold)

    if r <= threshold:
        return q, NewtonReport(cfg.newton_max_iters, r, threshold)
    raise NewtonConvergenceError(r, cfg.newton_max_iters)


def step(ctx: SimContext, state: SimState, load: LoadSpec) -> SimState:
    """One implicit Euler step; Dirichlet DoFs stay at their current positions."""
    q_next, _ = solve_step(ctx, state, load)
    v_next = (q_next - state.q) / ctx.h
    v_next[ctx.mesh.dirichlet_nodes] = 0.0
    return SimState(q_next, v_next, state.t + 1)


def _adjoint_solve(
    ctx: SimContext, next_state: SimState, dL_dq_next: np.ndarray, dL_dv_next: np.ndarray
) -> np.ndarray:
    free = ctx.mesh.free_dofs
    w = (np.asarray(dL_dq_next, dtype=float) + np.asarray(dL_dv_next, dtype=float) / ctx.h).ravel()
    lu = factorize(system_matrix(ctx, next_state.q))
    z = np.zeros(ctx.mesh.num_dofs)
    z[free] = lu.solve(w[free])
    if not np.all(np.isfinite(z)):
        raise SimulationError("non-finite adjoint solution")
    return z.reshape(-1, 3)


def step_adjoint(
    ctx: SimContext,
    state: SimState,
    load: LoadSpec,
    next_state: SimState,
    dL_dq_next: np.ndarray,
    dL_dv_next: np.ndarray,
) -> np.ndarray:
    """Gradient of a loss on (q_{t+1}, v_{t+1}) with respect to the applied force, (N, 3)."""
    z = _adjoint_solve(ctx, next_state, dL_dq_next, dL_dv_next)
    return ctx.h * ctx.h * z


def step_vjp(
    ctx: SimContext,
    state: SimState,
    load: LoadSpec,
    next_state: SimState,
    dL_dq_next: np.ndarray,
    dL_dv_next: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full one-step vector-Jacobian product: (dL/df, dL/dq_t, dL/dv_t) on free DoFs."""
    z = _adjoint_solve(ctx, next_state, dL_dq_next, dL_dv_next)
    h = ctx.h
    mz = ctx.masses[:, None] * z
    dL_dq = mz - np.asarray(dL_dv_next, dtype=float) / h
    dL_dv = h * mz
    dL_dq[ctx.mesh.dirichlet_nodes] = 0.0
    dL_dv[ctx.mesh.dirichlet_nodes] = 0.0
    return h * h * z, dL_dq, dL_dv


def rollout(
    ctx: SimContext, state0: SimState, loads: Sequence[LoadSpec]
) -> list[SimState]:
    """Iterate :func:`step`; element t is the state after t steps."""
    states = [state0]
    for index, load in enumerate(loads):
        try:
            states.append(step(ctx, states[-1], load))
        except SimulationError as exc:
            raise RolloutError(index, exc) from exc
    return states


def static_solve(
    ctx: SimContext,
    q_guess: np.ndarray,
    fixed_nodes: np.ndarray | None = None,
    prescribed: np.ndarray | None = None,
    load: LoadSpec | None = None,
    tol: float = 1e-10,
    max_iters: int = 100,
) -> np.ndarray:
    """Static equilibrium f_int + f_ext + f_grav = 0.

    ``fixed_nodes`` are held (in addition to the mesh Dirichlet nodes) at the
    matching rows of ``prescribed`` (defaults to ``q_guess``).
    """
    mesh = ctx.mesh
    load = load or LoadSpec()
    fixed = mesh.dirichlet_nodes if fixed_nodes is None else np.union1d(mesh.dirichlet_nodes, fixed_nodes)
    mask = np.ones((mesh.num_nodes, 3), dtype=bool)
    mask[fixed] = False
    free = np.flatnonzero(mask.ravel())

    q = np.array(q_guess, dtype=float, copy=True)
    if prescribed is not None:
        q[fixed] = np.asarray(prescribed, dtype=float)[fixed]
    f_ext = _external(ctx, load)

    def residual(x: np.ndarray) -> np.ndarray:
        return (internal_forces(mesh, ctx.material, x) + f_ext).ravel()[free]

    r_vec = residual(q)
    r = float(np.linalg.norm(r_vec))
    scale = max(float(np.linalg.norm(f_ext.ravel()[free])), r)
    threshold = max(tol * scale, ABSOLUTE_FLOOR)
    for it in range(max_iters):
        if r <= threshold:
            logger.debug("static solve converged in %d iterations (|r|=%.3e)", it, r)
            return q
        K = sp.csr_matrix(tangent_stiffness(mesh, ctx.material, q))[free][:, free]
        dq = factorize(K).solve(r_vec)
        alpha = 1.0
        for _ in range(ctx.config.ls_backtracks + 1):
            q_try = q.copy()
            q_try.ravel()[free] += alpha * dq
            r_try_vec = residual(q_try)
            r_try = float(np.linalg.norm(r_try_vec))
            if np.isfinite(r_try) and r_try < r:
                break
            alpha *= 0.5
        else:
            raise NewtonConvergenceError(r, it + 1)
        q, r_vec, r = q_try, r_try_vec, r_try
    if r <= threshold:
        return q
    raise NewtonConvergenceError(r, max_iters)


def settle(
    ctx: SimContext,
    state: SimState,
    load: LoadSpec,
    damping: float = 0.0,
    v_tol: float = 1e-6,
    max_steps: int = 5000,
) -> SimState:
    """Damped stepping (v <- damping * v after every step) until |v|_inf < v_tol."""
    current = state
    for n in range(max_steps):
        nxt = step(ctx, current, load)
        speed = float(np.abs(nxt.v).max())
        current = SimState(nxt.q, damping * nxt.v, nxt.t)
        if speed < v_tol:
            logger.debug("settled after %d steps (|v|=%.2e)", n + 1, speed)
            return SimState(current.q, np.zeros_like(current.v), 0)
    raise SimulationError(f"static settle did not reach |v| < {v_tol} within {max_steps} steps")


def total_energy(ctx: SimContext, state: SimState) -> float:
    """Kinetic + elastic + gravitational energy [J]."""
    kinetic = 0.5 * float(np.sum(ctx.masses[:, None] * state.v**2))
    elastic = elastic_energy(ctx.mesh, ctx.material, state.q)
    potential = -float(np.sum(ctx.gravity_field * state.q))
    return kinetic + elastic + potential
