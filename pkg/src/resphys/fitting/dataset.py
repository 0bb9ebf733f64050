"""Residual force dataset: building, container I/O and training samples.

On disk a dataset directory holds ``mesh.json``, ``splits.json`` (trajectory
names per split), ``dataset.json`` (metadata) and one trajectory container per
trajectory with the extra fields ``f_res`` (T, N, 3) and ``fit_loss`` (T,).
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from resphys.errors import ArtifactError, ContainerError, FitError, ResPhysError
from resphys.experiments.generators import ExperimentData, generate, register_markers
from resphys.experiments.spec import ExperimentSpec
from resphys.fem.mesh import HexMesh
from resphys.fitting.config import FitConfig
from resphys.fitting.jobs import JobList
from resphys.fitting.residual import FittedTrajectory, fit_initial_state, fit_trajectory
from resphys.markers.interpolation import MarkerSet
from resphys.sim.container import read_trajectory, write_trajectory
from resphys.sim.state import LoadSpec, SimContext, SimState

logger = logging.getLogger(__name__)

SPLITS_FILE = "splits.json"
MESH_FILE = "mesh.json"
META_FILE = "dataset.json"


@dataclass
class ResidualDataset:
    mesh: HexMesh
    h: float
    trajectories: list[FittedTrajectory]
    splits: dict[str, list[str]]
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        names = {t.name for t in self.trajectories}
        for tag, members in self.splits.items():
            missing = set(members) - names
            if missing:
                raise ContainerError(f"split {tag!r} names unknown trajectories {sorted(missing)}")
        for traj in self.trajectories:
            if not np.all(np.isfinite(traj.f_res)):
                raise ContainerError(f"{traj.name}: non-finite residual forces")
            if np.any(traj.f_res[:, self.mesh.dirichlet_nodes] != 0.0):
                raise ContainerError(f"{traj.name}: residual forces on Dirichlet nodes")

    def split(self, tag: str) -> list[FittedTrajectory]:
        by_name = {t.name: t for t in self.trajectories}
        return [by_name[name] for name in self.splits.get(tag, [])]

    @property
    def actuated(self) -> bool:
        return any(np.any(t.f_ext != 0.0) for t in self.trajectories)

    def samples(self, tag: str) -> dict[str, np.ndarray]:
        """Flattened (state, force) samples of a split.

        Keys: ``q`` (positions minus rest), ``v``, ``f_ext``, ``f_res`` and the
        next state ``q_next``/``v_next``; each of shape (S, N, 3).
        """
        rest = self.mesh.nodes
        parts: dict[str, list[np.ndarray]] = {k: [] for k in ("q", "v", "f_ext", "f_res", "q_next", "v_next")}
        for traj in self.split(tag):
            q = np.stack([s.q for s in traj.states]) - rest
            v = np.stack([s.v for s in traj.states])
            parts["q"].append(q[:-1])
            parts["v"].append(v[:-1])
            parts["q_next"].append(q[1:])
            parts["v_next"].append(v[1:])
            parts["f_ext"].append(traj.f_ext)
            parts["f_res"].append(traj.f_res)
        if not parts["q"]:
            raise ContainerError(f"split {tag!r} is empty")
        return {k: np.concatenate(v) for k, v in parts.items()}


@dataclass
class FitJob:
    """One trajectory to fit; picklable so it can run in a worker process."""

    name: str
    ctx: SimContext
    initial: SimState | None
    loads: list[LoadSpec]
    targets: np.ndarray
    cfg: FitConfig
    seed: tuple[int, int]
    markers: MarkerSet | None = None
    init_markers: np.ndarray | None = None
    virtual_steps: int = 140


def run_fit_job(job: FitJob) -> FittedTrajectory:
    rng = np.random.default_rng(np.random.SeedSequence(job.seed))
    initial = job.initial
    if job.init_markers is not None:
        initial, report = fit_initial_state(
            job.ctx,
            job.init_markers,
            job.markers,
            virtual_steps=job.virtual_steps,
            cfg=job.cfg,
            gravity_on=job.loads[0].gravity_on,
        )
        logger.info("%s: initial state marker RMS %.3e m", job.name, report.marker_rms)
    fitted = fit_trajectory(job.ctx, initial, job.loads, job.targets, job.cfg, markers=job.markers, rng=rng)
    fitted.name = job.name
    return fitted


def make_jobs(data: ExperimentData, ctx: SimContext, cfg: FitConfig, seed: int) -> list[FitJob]:
    """Fit jobs for every trajectory that belongs to a split.

    Pseudo-real trajectories are registered on their rest frame, markers are
    attached to the registered rest frame and the initial state is
    reconstructed from the first recorded frame.
    """
    jobs = []
    for job_id, traj in enumerate(data.trajectories):
        if traj.split == "unused":
            continue
        if traj.raw_markers is None:
            jobs.append(
                FitJob(traj.name, ctx, traj.initial, traj.loads, traj.target.q[1:], cfg, (seed, job_id))
            )
            continue
        reg = register_markers(data, traj)
        jobs.append(
            FitJob(
                traj.name,
                ctx,
                None,
                traj.loads,
                reg.frames[1:],
                cfg,
                (seed, job_id),
                markers=reg.markers,
                init_markers=reg.frames[0],
                virtual_steps=data.spec.virtual_steps,
            )
        )
    return jobs


def run_jobs(jobs: list[FitJob], workers: int = 1) -> list[FittedTrajectory]:
    """Run fit jobs, in a process pool when ``workers`` > 1; results keep job order."""
    tracker = JobList()
    for job in jobs:
        tracker.add(job.name)
    results: list[FittedTrajectory | None] = [None] * len(jobs)

    def finish(index: int, fitted: FittedTrajectory) -> None:
        results[index] = fitted
        tracker.mark_done(index, f"mean fit loss {float(np.mean(fitted.fit_loss)):.3e}")

    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = {pool.submit(run_fit_job, job): i for i, job in enumerate(jobs)}
                for future in as_completed(futures):
                    index = futures[future]
                    try:
                        finish(index, future.result())
                    except ResPhysError as exc:
                        tracker.mark_failed(index, str(exc))
                        for other in futures:
                            other.cancel()
                        raise FitError(f"trajectory {jobs[index].name}: {exc}") from exc
        else:
            for index, job in enumerate(jobs):
                try:
                    finish(index, run_fit_job(job))
                except ResPhysError as exc:
                    tracker.mark_failed(index, str(exc))
                    raise FitError(f"trajectory {job.name}: {exc}") from exc
    finally:
        for line in tracker.summary_lines():
            logger.info("%s", line)
        failed, pending = tracker.failed(), tracker.pending()
        if failed:
            logger.warning(
                "fit jobs failed: %s (%d not finished)",
                ", ".join(tracker.items[i].name for i in failed),
                len(pending),
            )
    return results  # type: ignore[return-value]


def build_dataset(
    spec: ExperimentSpec,
    cfg: FitConfig,
    workers: int = 1,
    seed: int = 0,
    data: ExperimentData | None = None,
) -> ResidualDataset:
    """Generate (unless ``data`` is given) and fit every split trajectory of an experiment."""
    data = data if data is not None else generate(spec, seed)
    ctx = spec.context(1, data.mesh)
    fitted = run_jobs(make_jobs(data, ctx, cfg, seed), workers)
    splits = {tag: [t.name for t in data.trajectories if t.split == tag] for tag in ("train", "val", "test")}
    meta = {"kind": spec.kind, "seed": seed, "fit": cfg.model_dump()}
    return ResidualDataset(mesh=data.mesh, h=ctx.h, trajectories=fitted, splits=splits, meta=meta)


def write_dataset(directory: str | Path, dataset: ResidualDataset) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    dataset.mesh.save(directory / MESH_FILE)
    (directory / SPLITS_FILE).write_text(json.dumps(dataset.splits, indent=2))
    (directory / META_FILE).write_text(json.dumps({**dataset.meta, "h": dataset.h}, indent=2))
    for traj in dataset.trajectories:
        meta = {"name": traj.name, "gravity_on": traj.gravity_on}
        if traj.markers is not None:
            meta["markers"] = traj.markers.to_json()
        write_trajectory(directory / traj.name, traj.trajectory(dataset.h), **meta)
    logger.info("wrote dataset %s (%d trajectories)", directory, len(dataset.trajectories))
    return directory


def read_dataset(directory: str | Path) -> ResidualDataset:
    directory = Path(directory)
    for name in (MESH_FILE, SPLITS_FILE, META_FILE):
        if not (directory / name).exists():
            raise ArtifactError(str(directory / name))
    mesh = HexMesh.load(directory / MESH_FILE)
    splits = json.loads((directory / SPLITS_FILE).read_text())
    meta = json.loads((directory / META_FILE).read_text())
    h = float(meta.pop("h"))
    trajectories = []
    for name in sorted({n for members in splits.values() for n in members}):
        traj, manifest = read_trajectory(directory / name)
        if "f_res" not in traj.extra or "fit_loss" not in traj.extra:
            raise ContainerError(f"{directory / name}: missing f_res or fit_loss")
        markers = MarkerSet.from_json(manifest["markers"]) if "markers" in manifest else None
        trajectories.append(
            FittedTrajectory(
                states=traj.states(),
                f_ext=traj.f_ext,
                f_res=traj.extra["f_res"],
                fit_loss=traj.extra["fit_loss"],
                gravity_on=bool(manifest.get("gravity_on", True)),
                targets=traj.extra.get("targets"),
                markers=markers,
                name=name,
            )
        )
    return ResidualDataset(mesh=mesh, h=h, trajectories=trajectories, splits=splits, meta=meta)
