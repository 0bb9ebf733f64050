"""Rollout error metrics and their CSV files.

E_q is the mean Euclidean node error over R trajectories, T steps and N
nodes; E_x the same over m markers. Step 0 (the shared initial state) is not
counted.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from resphys.errors import ArtifactError, ConfigError
from resphys.fem.material import Material
from resphys.learning.network import ResidualModel
from resphys.learning.rollout import rollout_hybrid, rollout_simfree
from resphys.markers.interpolation import MarkerSet, interpolate
from resphys.sim.implicit import rollout
from resphys.sim.state import LoadSpec, SimContext, SimState

logger = logging.getLogger(__name__)

Method = Literal["Original", "SysID", "SimFree", "ResPhys"]
SUMMARY_COLUMNS = ["method", "E_q", "E_q_std", "E_x", "E_x_std", "trajectories"]
CURVE_COLUMNS = ["step", "metric", "mean", "std"]


class MetricsReport(BaseModel):
    method: str = Field(..., description="Original, SysID, SimFree or ResPhys")
    E_q: Optional[float] = Field(None, description="Mean node error [m]")
    E_q_std: Optional[float] = Field(None, description="Std of node errors [m]")
    E_x: Optional[float] = Field(None, description="Mean marker error [m]")
    E_x_std: Optional[float] = Field(None, description="Std of marker errors [m]")
    curves: dict[str, dict[str, List[float]]] = Field(
        default_factory=dict, description="Per metric: per-step mean and std over trajectories"
    )
    per_trajectory: dict[str, dict[str, float]] = Field(
        default_factory=dict, description="Per trajectory name: mean error per metric"
    )


@dataclass
class EvalCase:
    """One test trajectory: initial state, loads and whatever ground truth is available."""

    name: str
    initial: SimState
    loads: list[LoadSpec]
    truth_q: np.ndarray | None = None
    truth_markers: np.ndarray | None = None
    markers: MarkerSet | None = None


def distances(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Point-wise Euclidean distances of (..., 3) arrays."""
    return np.linalg.norm(np.asarray(pred) - np.asarray(truth), axis=-1)


def mean_error(preds: Sequence[np.ndarray], truths: Sequence[np.ndarray]) -> float:
    """Mean distance over trajectories, steps 1..T and points (R * T * points terms)."""
    errors = [distances(p[1:], t[1:]) for p, t in zip(preds, truths)]
    return float(np.concatenate([e.ravel() for e in errors]).mean())


def error_curves(preds: Sequence[np.ndarray], truths: Sequence[np.ndarray]) -> dict[str, List[float]]:
    """Per-step mean and std over trajectories of the per-trajectory mean point error."""
    per_step = np.stack([distances(p, t).mean(axis=-1) for p, t in zip(preds, truths)])
    return {"mean": per_step.mean(axis=0).tolist(), "std": per_step.std(axis=0).tolist()}


def predict(
    method: Method,
    case: EvalCase,
    ctx: SimContext,
    model: ResidualModel | None = None,
    material: Material | None = None,
) -> np.ndarray:
    """Rolled-out positions (T+1, N, 3) of ``method`` for one case."""
    if method == "Original":
        states = rollout(ctx, case.initial, case.loads)
    elif method == "SysID":
        if material is None:
            raise ArtifactError("identified material (sysid_opt.json)")
        states = rollout(ctx.with_material(material), case.initial, case.loads)
    elif method == "ResPhys":
        if model is None:
            raise ArtifactError("ResPhys checkpoint")
        states = rollout_hybrid(ctx, model, case.initial, case.loads)
    elif method == "SimFree":
        if model is None:
            raise ArtifactError("SimFree checkpoint")
        states = rollout_simfree(model, case.initial, case.loads)
    else:
        raise ConfigError(f"unknown method {method!r}")
    return np.stack([s.q for s in states])


def evaluate(
    method: Method,
    cases: Sequence[EvalCase],
    ctx: SimContext,
    model: ResidualModel | None = None,
    material: Material | None = None,
) -> MetricsReport:
    """Roll out every case with ``method`` and compute E_q and/or E_x."""
    report = MetricsReport(method=method)
    q_pred, q_true, x_pred, x_true = [], [], [], []
    for case in cases:
        pred = predict(method, case, ctx, model, material)
        entry = {}
        if case.truth_q is not None:
            q_pred.append(pred)
            q_true.append(case.truth_q)
            entry["E_q"] = float(distances(pred[1:], case.truth_q[1:]).mean())
        if case.truth_markers is not None and case.markers is not None:
            markers = np.stack([interpolate(case.markers, ctx.mesh, q) for q in pred])
            x_pred.append(markers)
            x_true.append(case.truth_markers)
            entry["E_x"] = float(distances(markers[1:], case.truth_markers[1:]).mean())
        report.per_trajectory[case.name] = entry

    for name, preds, truths in (("E_q", q_pred, q_true), ("E_x", x_pred, x_true)):
        if not preds:
            continue
        errors = np.concatenate([distances(p[1:], t[1:]).ravel() for p, t in zip(preds, truths)])
        setattr(report, name, float(errors.mean()))
        setattr(report, f"{name}_std", float(errors.std()))
        report.curves[name] = error_curves(preds, truths)
    logger.info(
        "%s: E_q=%s E_x=%s over %d trajectories",
        method,
        "n/a" if report.E_q is None else f"{report.E_q * 1e3:.4f} mm",
        "n/a" if report.E_x is None else f"{report.E_x * 1e3:.4f} mm",
        len(cases),
    )
    return report


def write_metrics(directory: str | Path, reports: Sequence[MetricsReport]) -> tuple[Path, Path]:
    """Write ``summary.csv`` (one row per method) and ``curves.csv`` (long format)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    summary = pd.DataFrame(
        [
            {
                "method": r.method,
                "E_q": r.E_q,
                "E_q_std": r.E_q_std,
                "E_x": r.E_x,
                "E_x_std": r.E_x_std,
                "trajectories": len(r.per_trajectory),
            }
            for r in reports
        ],
        columns=SUMMARY_COLUMNS,
    )
    rows = [
        {"method": r.method, "step": step, "metric": metric, "mean": m, "std": s}
        for r in reports
        for metric, curve in r.curves.items()
        for step, (m, s) in enumerate(zip(curve["mean"], curve["std"]))
    ]
    curves = pd.DataFrame(rows, columns=["method"] + CURVE_COLUMNS)
    summary_path, curves_path = directory / "summary.csv", directory / "curves.csv"
    summary.to_csv(summary_path, index=False)
    curves.to_csv(curves_path, index=False)
    return summary_path, curves_path


def read_summary(path: str | Path) -> pd.DataFrame:
    if not Path(path).exists():
        raise ArtifactError(str(path))
    return pd.read_csv(path)[SUMMARY_COLUMNS]


def read_curves(path: str | Path) -> pd.DataFrame:
    if not Path(path).exists():
        raise ArtifactError(str(path))
    return pd.read_csv(path)[["method"] + CURVE_COLUMNS]
