"""End-to-end runs: generate -> fit -> train -> evaluate."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from resphys.experiments.generators import ExperimentData, generate, register_markers, sample_marker_layout
from resphys.experiments.metrics import EvalCase, MetricsReport, evaluate, write_metrics
from resphys.experiments.spec import RunConfig
from resphys.fitting.config import FitConfig
from resphys.fitting.dataset import ResidualDataset, build_dataset, write_dataset
from resphys.fitting.residual import fit_initial_state
from resphys.learning.network import ResidualModel
from resphys.learning.training import TrainHistory, random_search, train, train_simfree
from resphys.markers.interpolation import MarkerSet, interpolate
from resphys.sim.state import SimContext
from resphys.sysid.identification import SysIdData

logger = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    data: ExperimentData
    dataset: ResidualDataset
    model: ResidualModel
    history: TrainHistory
    reports: list[MetricsReport] = field(default_factory=list)
    simfree: ResidualModel | None = None

    def report(self, method: str) -> MetricsReport:
        return next(r for r in self.reports if r.method == method)


def sim_cases(data: ExperimentData, tag: str = "test", markers: MarkerSet | None = None) -> list[EvalCase]:
    """Full-state cases; with ``markers`` the marker truth is interpolated as well."""
    cases = []
    for traj in data.split(tag):
        truth_markers = None
        if markers is not None:
            truth_markers = np.stack([interpolate(markers, data.mesh, q) for q in traj.target.q])
        cases.append(EvalCase(traj.name, traj.initial, traj.loads, traj.target.q, truth_markers, markers))
    return cases


def pseudo_real_cases(
    data: ExperimentData, ctx: SimContext, cfg: FitConfig, tag: str = "test"
) -> list[EvalCase]:
    """Marker-only cases whose initial state is reconstructed from the first frame."""
    cases = []
    for traj in data.split(tag):
        reg = register_markers(data, traj)
        initial, _ = fit_initial_state(
            ctx, reg.frames[0], reg.markers, data.spec.virtual_steps, cfg, gravity_on=data.spec.gravity
        )
        cases.append(EvalCase(traj.name, initial, traj.loads, None, reg.frames, reg.markers))
    return cases


def sysid_data(data: ExperimentData, ctx: SimContext, cfg: FitConfig, tag: str = "train") -> list[SysIdData]:
    """Marker trajectories for system identification.

    Sim-to-sim data is observed through a random layout of ``marker_count``
    markers; pseudo-real data through its registered recordings.
    """
    out = []
    if data.marker_layout is None:
        layout = sample_marker_layout(data.mesh, data.spec.marker_count, np.random.default_rng(data.spec.marker_seed))
        for traj in data.split(tag):
            targets = np.stack([interpolate(layout, data.mesh, q) for q in traj.target.q[1:]])
            out.append(SysIdData(traj.initial, traj.loads, targets, layout))
        return out
    for case in pseudo_real_cases(data, ctx, cfg, tag):
        out.append(SysIdData(case.initial, case.loads, case.truth_markers[1:], case.markers))
    return out


def _train(dataset: ResidualDataset, run: RunConfig, seed: int) -> tuple[ResidualModel, TrainHistory]:
    if run.search_budget > 0:
        model, history, _, _ = random_search(dataset, run.search_budget, seed, run.train)
        return model, history
    return train(dataset, run.net, run.train)


def run_sim_to_sim(
    run: RunConfig, out_dir: str | Path | None = None, workers: int = 1, seed: int = 0, simfree: bool = True
) -> PipelineResult:
    """Oscillating/twisting/actuated beams with full-state targets."""
    spec = run.experiment
    data = generate(spec, seed)
    dataset = build_dataset(spec, run.fit, workers, seed, data=data)
    model, history = _train(dataset, run, seed)
    ctx = spec.context(1, data.mesh)
    cases = sim_cases(data)
    result = PipelineResult(data, dataset, model, history)
    result.reports.append(evaluate("Original", cases, ctx))
    result.reports.append(evaluate("ResPhys", cases, ctx, model=model))
    if simfree:
        result.simfree, _ = train_simfree(dataset, run.net, run.train)
        result.reports.append(evaluate("SimFree", cases, ctx, model=result.simfree))
    if out_dir is not None:
        write_dataset(Path(out_dir) / "dataset", dataset)
        write_metrics(Path(out_dir) / "metrics", result.reports)
    return result


def run_pseudo_real(
    run: RunConfig, out_dir: str | Path | None = None, workers: int = 1, seed: int = 0
) -> PipelineResult:
    """Registration -> attach -> initial state -> marker fits -> train -> hybrid rollout -> E_x."""
    spec = run.experiment
    if spec.kind != "pseudo_real":
        spec = spec.model_copy(update={"kind": "pseudo_real"})
    data = generate(spec, seed)
    dataset = build_dataset(spec, run.fit, workers, seed, data=data)
    model, history = _train(dataset, run, seed)
    ctx = spec.context(1, data.mesh)
    cases = pseudo_real_cases(data, ctx, run.fit)
    result = PipelineResult(data, dataset, model, history)
    result.reports.append(evaluate("Original", cases, ctx))
    result.reports.append(evaluate("ResPhys", cases, ctx, model=model))
    if out_dir is not None:
        write_dataset(Path(out_dir) / "dataset", dataset)
        write_metrics(Path(out_dir) / "metrics", result.reports)
    return result
