"""Per-timestep residual force fitting.

For one step from state s_t the fitted force f minimizes

    |P(q_{t+1}(f)) - target|^2 + reg_lambda |f|^2

where q_{t+1}(f) is the implicit Euler step with f added to the external load
and P is either the identity (full-state targets) or marker interpolation.
Gradients come from the one-step adjoint.

L-BFGS runs on scaled variables u with f = (A0 / h^2) (edge * u), A0 being the
step system matrix at s_t. In these variables a unit of u moves the next
state by roughly one voxel edge, so the gradient tolerance means the same
thing for stiff and soft modes. The objective itself is unchanged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from resphys.errors import FitError, SimulationError
from resphys.fitting.config import FitConfig, FitReport, InitStateReport
from resphys.markers.interpolation import MarkerSet, interpolate, interpolate_vjp
from resphys.sim.container import Trajectory
from resphys.sim.implicit import factorize, step, step_adjoint, step_vjp, system_matrix
from resphys.sim.state import LoadSpec, SimContext, SimState

logger = logging.getLogger(__name__)

INIT_STATE_RMS_LIMIT = 1e-3


class _Scaling:
    """Map between L-BFGS variables and free-DoF forces."""

    def __init__(self, ctx: SimContext, q: np.ndarray) -> None:
        self.edge = ctx.mesh.voxel_edge
        self.matrix = system_matrix(ctx, q) / ctx.h**2
        self._lu = None

    def to_force(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ (self.edge * u)

    def to_vars(self, f_free: np.ndarray) -> np.ndarray:
        if self._lu is None:
            self._lu = factorize(self.matrix)
        return self._lu.solve(f_free) / self.edge

    def grad_to_vars(self, grad_f: np.ndarray) -> np.ndarray:
        return self.edge * (self.matrix @ grad_f)


def _unflatten(ctx: SimContext, f_free: np.ndarray) -> np.ndarray:
    f = np.zeros(ctx.mesh.num_dofs)
    f[ctx.mesh.free_dofs] = f_free
    return f.reshape(-1, 3)


def _data_term(
    ctx: SimContext, q_next: np.ndarray, target: np.ndarray, markers: MarkerSet | None
) -> tuple[float, np.ndarray]:
    """Squared error and its gradient with respect to q_next."""
    if markers is None:
        diff = q_next - target
        return float(np.sum(diff**2)), 2.0 * diff
    diff = interpolate(markers, ctx.mesh, q_next) - target
    return float(np.sum(diff**2)), interpolate_vjp(markers, ctx.mesh, q_next, 2.0 * diff)


def _check_target(ctx: SimContext, target: np.ndarray, markers: MarkerSet | None) -> np.ndarray:
    target = np.asarray(target, dtype=float)
    expected = (ctx.mesh.num_nodes, 3) if markers is None else (len(markers), 3)
    if target.shape != expected:
        raise FitError(f"target must have shape {expected}, got {target.shape}")
    if not np.all(np.isfinite(target)):
        raise FitError("target contains non-finite values")
    return target


def fit_step(
    ctx: SimContext,
    state: SimState,
    load: LoadSpec,
    target: np.ndarray,
    cfg: FitConfig,
    warm_start: np.ndarray | None = None,
    markers: MarkerSet | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, FitReport]:
    """Fit the residual force for one step.

    ``target`` holds next-state positions (N, 3), or marker positions (m, 3)
    when ``markers`` is given. Returns the force field (N, 3), zero on
    Dirichlet nodes, and a :class:`FitReport`.
    """
    target = _check_target(ctx, target, markers)
    free = ctx.mesh.free_dofs
    scaling = _Scaling(ctx, state.q)

    if warm_start is not None:
        f0 = np.asarray(warm_start, dtype=float).reshape(-1)[free]
    else:
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        f0 = cfg.init_sigma * rng.standard_normal(free.size)
    u0 = scaling.to_vars(f0)

    counters = {"evaluations": 0, "rejected": 0}
    last: dict = {}

    def objective(u: np.ndarray) -> tuple[float, np.ndarray]:
        counters["evaluations"] += 1
        f_free = scaling.to_force(u)
        f = _unflatten(ctx, f_free)
        try:
            nxt = step(ctx, state, load.with_extra(f))
        except SimulationError as exc:
            counters["rejected"] += 1
            logger.warning("t=%d: rejected trial force (forward step failed: %s)", state.t, exc)
            return float("inf"), np.zeros_like(u)
        data, dL_dq = _data_term(ctx, nxt.q, target, markers)
        grad_f = step_adjoint(ctx, state, load, nxt, dL_dq, np.zeros_like(dL_dq)).ravel()[free]
        grad_f = grad_f + 2.0 * cfg.reg_lambda * f_free
        value = data + cfg.reg_lambda * float(f_free @ f_free)
        last.update(u=u.copy(), value=value, data=data)
        logger.debug("t=%d eval %d: objective %.6e (data %.6e)", state.t, counters["evaluations"], value, data)
        return value, scaling.grad_to_vars(grad_f)

    value0, _ = objective(u0)
    if not np.isfinite(value0):
        raise FitError("forward step diverges at the starting force", timestep=state.t)
    initial_data = last["data"]
    trace = [value0]

    def record(xk: np.ndarray) -> None:
        if "u" in last and np.array_equal(xk, last["u"]):
            trace.append(last["value"])
        else:
            trace.append(objective(xk)[0])

    result = minimize(
        objective,
        u0,
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options={
            "maxcor": cfg.lbfgs_memory,
            "maxiter": cfg.lbfgs_max_iters,
            "gtol": cfg.grad_tol,
            "ftol": 0.0,
        },
    )

    final_value, final_grad = objective(result.x)
    if not np.isfinite(final_value):
        raise FitError(f"forward step diverges at the fitted force ({result.message})", timestep=state.t)
    grad_norm = float(np.abs(final_grad).max()) if final_grad.size else 0.0
    report = FitReport(
        iterations=int(result.nit),
        evaluations=counters["evaluations"],
        objective=final_value,
        data_term=last["data"],
        initial_data_term=initial_data,
        grad_norm=grad_norm,
        converged=grad_norm <= cfg.grad_tol,
        rejected=counters["rejected"],
        trace=trace,
    )
    return _unflatten(ctx, scaling.to_force(result.x)), report


@dataclass
class FittedTrajectory:
    """States reached by the corrected simulator with their fitted residual forces.

    ``states`` has T+1 entries; ``f_ext``, ``f_res`` and ``fit_loss`` have T.
    """

    states: list[SimState]
    f_ext: np.ndarray
    f_res: np.ndarray
    fit_loss: np.ndarray
    gravity_on: bool = True
    reports: list[FitReport] = field(default_factory=list)
    targets: np.ndarray | None = None
    markers: MarkerSet | None = None
    name: str = ""

    def __post_init__(self) -> None:
        T = len(self.states) - 1
        if self.f_ext.shape[0] != T or self.f_res.shape[0] != T or self.fit_loss.shape[0] != T:
            raise FitError(
                f"sequence lengths disagree: {T} steps, f_ext {self.f_ext.shape[0]}, "
                f"f_res {self.f_res.shape[0]}, fit_loss {self.fit_loss.shape[0]}"
            )

    @property
    def num_steps(self) -> int:
        return len(self.states) - 1

    def loads(self) -> list[LoadSpec]:
        return [LoadSpec(applied=f, gravity_on=self.gravity_on) for f in self.f_ext]

    def trajectory(self, h: float) -> Trajectory:
        traj = Trajectory.from_states(self.states, self.f_ext, h)
        traj.extra = {"f_res": self.f_res, "fit_loss": self.fit_loss}
        if self.targets is not None:
            traj.extra["targets"] = self.targets
        return traj


def fit_trajectory(
    ctx: SimContext,
    state0: SimState,
    loads: Sequence[LoadSpec],
    targets: np.ndarray,
    cfg: FitConfig,
    markers: MarkerSet | None = None,
    rng: np.random.Generator | None = None,
) -> FittedTrajectory:
    """Fit residuals step by step, advancing with the fitted force each time."""
    targets = np.asarray(targets, dtype=float)
    if not loads:
        raise FitError("a trajectory needs at least one step")
    if len(loads) != targets.shape[0]:
        raise FitError(f"{len(loads)} loads but {targets.shape[0]} targets")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    states = [SimState(state0.q, state0.v, 0)]
    forces, losses, reports = [], [], []
    warm = None
    for t, (load, target) in enumerate(zip(loads, targets)):
        current = states[-1]
        f_res, report = fit_step(ctx, current, load, target, cfg, warm_start=warm, markers=markers, rng=rng)
        try:
            nxt = step(ctx, current, load.with_extra(f_res))
        except SimulationError as exc:
            raise FitError(str(exc), timestep=t) from exc
        states.append(SimState(nxt.q, nxt.v, t + 1))
        forces.append(f_res)
        losses.append(report.data_term)
        reports.append(report)
        if cfg.warm_start:
            warm = f_res
        logger.debug("t=%d: %d iterations, data %.3e", t, report.iterations, report.data_term)

    f_ext = np.stack([load.applied_forces(ctx.mesh.num_nodes) for load in loads])
    fitted = FittedTrajectory(
        states=states,
        f_ext=f_ext,
        f_res=np.stack(forces),
        fit_loss=np.asarray(losses),
        gravity_on=loads[0].gravity_on if loads else True,
        reports=reports,
        targets=targets,
        markers=markers,
    )
    logger.info(
        "fitted %d steps: %d L-BFGS iterations, mean data term %.3e",
        fitted.num_steps, sum(r.iterations for r in reports), float(np.mean(losses)) if losses else 0.0,
    )
    return fitted


def fit_initial_state(
    ctx: SimContext,
    marker_targets: np.ndarray,
    markers: MarkerSet,
    virtual_steps: int = 140,
    cfg: FitConfig | None = None,
    gravity_on: bool = True,
    state0: SimState | None = None,
) -> tuple[SimState, InitStateReport]:
    """Reconstruct the deformed state matching ``marker_targets`` with virtual forces.

    Starting from the undeformed state, forces f_1..f_T (T = ``virtual_steps``)
    are optimized jointly so that the markers of every simulated state stay
    close to the targets. The last state is returned with zero velocity.
    """
    if virtual_steps < 1:
        raise FitError(f"virtual_steps must be >= 1, got {virtual_steps}")
    cfg = cfg or FitConfig()
    target = _check_target(ctx, marker_targets, markers)
    start = state0 if state0 is not None else ctx.rest_state()
    load = LoadSpec(gravity_on=gravity_on)
    free = ctx.mesh.free_dofs
    scaling = _Scaling(ctx, start.q)
    n_free = free.size
    cache: dict = {}

    def simulate(u: np.ndarray) -> tuple[list[SimState], list[np.ndarray]]:
        forces = [scaling.to_force(u[t * n_free:(t + 1) * n_free]) for t in range(virtual_steps)]
        states = [start]
        for f_free in forces:
            states.append(step(ctx, states[-1], load.with_extra(_unflatten(ctx, f_free))))
        return states, forces

    def objective(u: np.ndarray) -> tuple[float, np.ndarray]:
        try:
            states, forces = simulate(u)
        except SimulationError as exc:
            logger.warning("rejected virtual-force trial (%s)", exc)
            return float("inf"), np.zeros_like(u)
        value = 0.0
        grad = np.zeros_like(u)
        dq = np.zeros_like(start.q)
        dv = np.zeros_like(start.v)
        for t in range(virtual_steps - 1, -1, -1):
            data, dL_dq = _data_term(ctx, states[t + 1].q, target, markers)
            value += data + cfg.reg_lambda * float(forces[t] @ forces[t])
            nxt_load = load.with_extra(_unflatten(ctx, forces[t]))
            df, dq, dv = step_vjp(ctx, states[t], nxt_load, states[t + 1], dq + dL_dq, dv)
            grad_f = df.ravel()[free] + 2.0 * cfg.reg_lambda * forces[t]
            grad[t * n_free:(t + 1) * n_free] = scaling.grad_to_vars(grad_f)
        cache.update(u=u.copy(), states=states)
        return value, grad

    result = minimize(
        objective,
        np.zeros(virtual_steps * n_free),
        jac=True,
        method="L-BFGS-B",
        options={
            "maxcor": cfg.lbfgs_memory,
            "maxiter": cfg.lbfgs_max_iters,
            "gtol": cfg.grad_tol,
            "ftol": 0.0,
        },
    )
    if cache.get("u") is None or not np.array_equal(cache["u"], result.x):
        value, _ = objective(result.x)
        if not np.isfinite(value):
            raise FitError("virtual-force rollout diverges at the optimum")
    final = cache["states"][-1]
    rms = float(np.sqrt(np.mean(np.sum((interpolate(markers, ctx.mesh, final.q) - target) ** 2, axis=-1))))
    report = InitStateReport(
        marker_rms=rms,
        converged=rms <= INIT_STATE_RMS_LIMIT,
        iterations=int(result.nit),
        virtual_steps=virtual_steps,
    )
    if not report.converged:
        logger.warning("initial state reconstruction: marker RMS %.3e m exceeds %.0e m", rms, INIT_STATE_RMS_LIMIT)
    else:
        logger.info("initial state reconstruction: marker RMS %.3e m after %d iterations", rms, report.iterations)
    return SimState(final.q.copy(), np.zeros_like(final.v), 0), report
