"""System identification baseline: fit (E, nu) to marker trajectories.

The loss re-simulates every trajectory open-loop with the candidate material
and averages the squared marker distances:

    L(E, nu) = 1 / (2 R) * sum_j sum_t |x_t - xbar_t|^2
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import minimize

from resphys.errors import MaterialError, SimulationError, SysIdError
from resphys.markers.interpolation import MarkerSet, interpolate
from resphys.sim.implicit import rollout
from resphys.sim.state import LoadSpec, SimContext, SimState

logger = logging.getLogger(__name__)

E_SCALE = 1e5
GRID_COLUMNS = ["E_pa", "nu", "loss"]


class SysIdConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    E_bounds: Tuple[float, float] = Field((5e4, 2e6), description="Young's modulus range [Pa]")
    nu_bounds: Tuple[float, float] = Field((-0.999, 0.499), description="Poisson's ratio range")
    grid_resolution_E: float = Field(1e4, gt=0, description="Grid spacing of E [Pa]")
    grid_E_bounds: Optional[Tuple[float, float]] = Field(None, description="Grid range of E (default E_bounds)")
    nu_grid: List[float] = Field([0.3, 0.4, 0.45, 0.49, 0.499], description="Grid values of nu")
    fd_step: float = Field(1e-3, gt=0, description="Relative finite-difference step")
    start: Tuple[float, float] = Field((215e3, 0.45), description="Initial (E, nu)")
    max_iters: int = Field(50, ge=1, description="Optimizer iteration cap")

    @model_validator(mode="after")
    def _check_bounds(self) -> "SysIdConfig":
        for name in ("E_bounds", "nu_bounds", "grid_E_bounds"):
            bounds = getattr(self, name)
            if bounds is not None and not bounds[0] <= bounds[1]:
                raise ValueError(f"{name} must be a non-empty interval, got {bounds}")
        return self

    def scaled_bounds(self) -> list[tuple[float, float]]:
        return [(self.E_bounds[0] / E_SCALE, self.E_bounds[1] / E_SCALE), tuple(self.nu_bounds)]


@dataclass
class SysIdData:
    """One observed trajectory: initial state, loads and marker targets for steps 1..T."""

    initial: SimState
    loads: list[LoadSpec]
    targets: np.ndarray
    markers: MarkerSet


class SysIdReport(BaseModel):
    youngs_modulus: float = Field(..., description="Identified E [Pa]")
    poissons_ratio: float = Field(..., description="Identified nu")
    loss: float = Field(..., description="Loss at the optimum")
    history: List[dict] = Field(default_factory=list, description="Iterates {E_pa, nu, loss}")
    bounds_active: bool = Field(False, description="Optimum sits on a bound")
    evaluations: int = Field(0, description="Loss evaluations including finite differences")
    iterations: int = Field(0, description="Optimizer iterations")
    message: str = Field("", description="Optimizer termination message")


def sysid_loss(
    youngs_modulus: float, poissons_ratio: float, data: Sequence[SysIdData], ctx: SimContext
) -> float:
    """Mean marker error of open-loop rollouts with material (E, nu); +inf if the simulator fails."""
    if not data:
        raise SysIdError("system identification needs at least one trajectory")
    try:
        sim = ctx.with_material(ctx.material.with_elasticity(youngs_modulus, poissons_ratio))
    except (MaterialError, ValueError) as exc:
        logger.debug("invalid material (%g, %g): %s", youngs_modulus, poissons_ratio, exc)
        return float("inf")
    total = 0.0
    for item in data:
        try:
            states = rollout(sim, item.initial, item.loads)
        except SimulationError as exc:
            logger.debug("rollout failed at (%g, %g): %s", youngs_modulus, poissons_ratio, exc)
            return float("inf")
        for state, target in zip(states[1:], item.targets):
            total += float(np.sum((interpolate(item.markers, sim.mesh, state.q) - target) ** 2))
    return total / (2.0 * len(data))


def fd_gradient(fun, x: np.ndarray, bounds: Sequence[tuple[float, float]], rel_step: float) -> np.ndarray:
    """Central differences, one-sided where a step would leave the bounds."""
    grad = np.zeros_like(x)
    f0 = None
    for i in range(x.size):
        step = rel_step * max(abs(x[i]), 1e-2)
        lo, hi = bounds[i]
        up, down = x.copy(), x.copy()
        up[i] += step
        down[i] -= step
        if up[i] <= hi and down[i] >= lo:
            grad[i] = (fun(up) - fun(down)) / (2.0 * step)
            continue
        if f0 is None:
            f0 = fun(x)
        grad[i] = (fun(up) - f0) / step if up[i] <= hi else (f0 - fun(down)) / step
    return grad


def sysid_optimize(
    data: Sequence[SysIdData], ctx: SimContext, cfg: SysIdConfig | None = None
) -> tuple[float, float, SysIdReport]:
    """Bounded L-BFGS-B over (E / 1e5, nu) with finite-difference gradients."""
    cfg = cfg or SysIdConfig()
    bounds = cfg.scaled_bounds()
    counters = {"evaluations": 0, "finite": 0}

    def loss(x: np.ndarray) -> float:
        counters["evaluations"] += 1
        value = sysid_loss(x[0] * E_SCALE, x[1], data, ctx)
        if np.isfinite(value):
            counters["finite"] += 1
        return value

    x0 = np.clip(np.array([cfg.start[0] / E_SCALE, cfg.start[1]]), [b[0] for b in bounds], [b[1] for b in bounds])
    # optimized as loss / loss(x0) so gradient tolerances do not depend on marker units
    start_loss = loss(x0)
    scale = start_loss if np.isfinite(start_loss) and start_loss > 0 else 1.0

    def fun(x: np.ndarray) -> tuple[float, np.ndarray]:
        value = loss(x)
        if not np.isfinite(value):
            return value, np.zeros_like(x)
        return value / scale, fd_gradient(loss, x, bounds, cfg.fd_step) / scale

    history: list[dict] = []

    def record(xk: np.ndarray) -> None:
        value = sysid_loss(xk[0] * E_SCALE, xk[1], data, ctx)
        history.append({"E_pa": float(xk[0] * E_SCALE), "nu": float(xk[1]), "loss": value})
        logger.info("sysid iterate %d: E=%.1f Pa nu=%.4f loss=%.6e", len(history), xk[0] * E_SCALE, xk[1], value)

    result = minimize(
        fun, x0, jac=True, method="L-BFGS-B", bounds=bounds, callback=record, options={"maxiter": cfg.max_iters}
    )
    if counters["finite"] == 0:
        raise SysIdError("every loss evaluation was infinite")

    E, nu = float(result.x[0] * E_SCALE), float(result.x[1])
    final = sysid_loss(E, nu, data, ctx)
    active = any(
        np.isclose(value, lo, rtol=1e-6, atol=1e-9) or np.isclose(value, hi, rtol=1e-6, atol=1e-9)
        for value, (lo, hi) in zip(result.x, bounds)
    )
    if active:
        logger.warning("sysid optimum (E=%.1f Pa, nu=%.4f) lies on a bound", E, nu)
    report = SysIdReport(
        youngs_modulus=E,
        poissons_ratio=nu,
        loss=final,
        history=history,
        bounds_active=bool(active),
        evaluations=counters["evaluations"],
        iterations=int(result.nit),
        message=str(result.message),
    )
    return E, nu, report


def grid_values(cfg: SysIdConfig) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = cfg.grid_E_bounds or cfg.E_bounds
    count = int(np.floor((hi - lo) / cfg.grid_resolution_E + 1e-9)) + 1
    return lo + cfg.grid_resolution_E * np.arange(count), np.asarray(cfg.nu_grid, dtype=float)


def _grid_point(args: tuple) -> float:
    E, nu, data, ctx = args
    return sysid_loss(E, nu, data, ctx)


def sysid_grid(
    data: Sequence[SysIdData], ctx: SimContext, cfg: SysIdConfig | None = None, workers: int = 1
) -> tuple[pd.DataFrame, dict]:
    """Loss on the (E, nu) grid; returns the table and its argmin row."""
    cfg = cfg or SysIdConfig()
    E_values, nu_values = grid_values(cfg)
    points = [(float(E), float(nu)) for E in E_values for nu in nu_values]
    tasks = [(E, nu, list(data), ctx) for E, nu in points]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            losses = list(pool.map(_grid_point, tasks))
    else:
        losses = [_grid_point(task) for task in tasks]
    table = pd.DataFrame(
        {"E_pa": [p[0] for p in points], "nu": [p[1] for p in points], "loss": losses}, columns=GRID_COLUMNS
    )
    best = table.loc[table["loss"].idxmin()] if np.isfinite(table["loss"]).any() else table.iloc[0]
    argmin = {"E_pa": float(best["E_pa"]), "nu": float(best["nu"]), "loss": float(best["loss"])}
    logger.info("sysid grid: %d points, argmin E=%.1f Pa nu=%.4f", len(table), argmin["E_pa"], argmin["nu"])
    return table, argmin


def write_grid(path: str | Path, table: pd.DataFrame) -> Path:
    path = Path(path)
    table.to_csv(path, index=False)
    return path


def read_grid(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path)[GRID_COLUMNS]
