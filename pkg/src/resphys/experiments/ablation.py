"""How many markers are enough: fit residuals from random marker subsets and
measure the full-state error of the corrected trajectory."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from resphys.errors import MarkerError
from resphys.experiments.generators import GeneratedTrajectory
from resphys.experiments.metrics import distances
from resphys.fitting.config import FitConfig
from resphys.fitting.residual import fit_trajectory
from resphys.markers.interpolation import attach_markers, interpolate
from resphys.sim.state import SimContext

logger = logging.getLogger(__name__)

DEFAULT_COUNTS = (1, 2, 4, 8, 16, 32, 64, 128)
ABLATION_COLUMNS = ["count", "sample", "E_q"]


def _ablation_task(args: tuple) -> float:
    ctx, traj, count, sample, cfg, seed = args
    rng = np.random.default_rng(np.random.SeedSequence((seed, count, sample)))
    mesh = ctx.mesh
    nodes = rng.choice(mesh.surface_nodes(), size=count, replace=False)
    markers = attach_markers(mesh, mesh.nodes, mesh.nodes[nodes])
    targets = np.stack([interpolate(markers, mesh, q) for q in traj.target.q[1:]])
    fitted = fit_trajectory(ctx, traj.initial, traj.loads, targets, cfg, markers=markers, rng=rng)
    reached = np.stack([s.q for s in fitted.states])
    return float(distances(reached[1:], traj.target.q[1:]).mean())


def marker_ablation(
    ctx: SimContext,
    trajectory: GeneratedTrajectory,
    cfg: FitConfig,
    counts: Sequence[int] = DEFAULT_COUNTS,
    samples: int = 10,
    seed: int = 0,
    workers: int = 1,
) -> pd.DataFrame:
    """E_q of marker-mode fits for ``samples`` random vertex subsets of each size."""
    available = ctx.mesh.surface_nodes().size
    too_many = [c for c in counts if c > available or c < 1]
    if too_many:
        raise MarkerError(f"marker counts {too_many} outside 1..{available} surface vertices")
    tasks = [(ctx, trajectory, int(c), s, cfg, seed) for c in counts for s in range(samples)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            errors = list(pool.map(_ablation_task, tasks))
    else:
        errors = [_ablation_task(task) for task in tasks]
    table = pd.DataFrame(
        {"count": [t[2] for t in tasks], "sample": [t[3] for t in tasks], "E_q": errors}, columns=ABLATION_COLUMNS
    )
    for count, group in table.groupby("count"):
        logger.info("ablation: %d markers, median E_q %.4f mm", count, group["E_q"].median() * 1e3)
    return table


def write_ablation(path: str | Path, table: pd.DataFrame) -> Path:
    path = Path(path)
    table.to_csv(path, index=False)
    return path


def read_ablation(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path)[ABLATION_COLUMNS]
