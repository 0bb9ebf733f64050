"""Target trajectory generators.

Every generator rolls out the "correct" simulator (sim2) and returns an
:class:`ExperimentData` whose trajectories carry the shared initial state, the
per-step loads and the target states. The corrected simulator (sim1) starts
from the same initial state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.spatial.transform import Rotation

from resphys.errors import ConfigError, SimulationError
from resphys.experiments.spec import ExperimentSpec
from resphys.fem.mesh import HexMesh, parse_face_tag
from resphys.markers.interpolation import MarkerAttachment, MarkerSet, attach_markers, bilinear_weights, interpolate
from resphys.markers.registration import RigidTransform, register_trajectory
from resphys.sim.container import Trajectory
from resphys.sim.implicit import rollout, settle, static_solve
from resphys.sim.state import LoadSpec, SimContext, SimState

logger = logging.getLogger(__name__)

TWIST_INCREMENTS = 50
SPLIT_TAGS = ("train", "val", "test")


@dataclass
class GeneratedTrajectory:
    name: str
    parameter: float
    initial: SimState
    loads: list[LoadSpec]
    target: Trajectory
    split: str = "train"
    raw_markers: np.ndarray | None = None

    @property
    def num_steps(self) -> int:
        return len(self.loads)


@dataclass
class ExperimentData:
    spec: ExperimentSpec
    mesh: HexMesh
    trajectories: list[GeneratedTrajectory]
    marker_layout: MarkerSet | None = None
    mocap_frame: RigidTransform | None = None
    meta: dict = field(default_factory=dict)

    def split(self, tag: str) -> list[GeneratedTrajectory]:
        return [t for t in self.trajectories if t.split == tag]


def assign_splits(count: int, splits: tuple[int, int, int], seed: int) -> list[str]:
    """Shuffle ``count`` trajectories into train/val/test; leftovers are tagged ``unused``."""
    if sum(splits) > count:
        raise ConfigError(f"splits {splits} need {sum(splits)} trajectories, only {count} generated")
    tags = [tag for tag, n in zip(SPLIT_TAGS, splits) for _ in range(n)]
    tags += ["unused"] * (count - len(tags))
    order = np.random.default_rng(seed).permutation(count)
    assigned = [""] * count
    for slot, index in enumerate(order):
        assigned[index] = tags[slot]
    return assigned


def tip_nodes(mesh: HexMesh, clamp_face: str) -> np.ndarray:
    """Free nodes on the face opposite to the clamped one."""
    axis, side = parse_face_tag(clamp_face)
    nodes = mesh.face_nodes(axis, 1 - side)
    return np.setdiff1d(nodes, mesh.dirichlet_nodes)


def tip_force_field(mesh: HexMesh, clamp_face: str, total_force: np.ndarray) -> np.ndarray:
    """Spread a total force (3,) uniformly over the tip-face nodes."""
    nodes = tip_nodes(mesh, clamp_face)
    field_ = np.zeros((mesh.num_nodes, 3))
    field_[nodes] = np.asarray(total_force, dtype=float) / nodes.size
    return field_


def _release(ctx: SimContext, initial: SimState, spec: ExperimentSpec, name: str, parameter: float) -> GeneratedTrajectory:
    loads = [LoadSpec(gravity_on=spec.gravity) for _ in range(spec.num_steps)]
    states = rollout(ctx, initial, loads)
    target = Trajectory.from_states(states, None, ctx.h)
    return GeneratedTrajectory(name=name, parameter=parameter, initial=initial, loads=loads, target=target)


def _finish(spec: ExperimentSpec, mesh: HexMesh, trajectories: list[GeneratedTrajectory]) -> ExperimentData:
    for traj, tag in zip(trajectories, assign_splits(len(trajectories), spec.split_counts, spec.split_seed)):
        traj.split = tag
    return ExperimentData(spec=spec, mesh=mesh, trajectories=trajectories)


def gen_oscillating(spec: ExperimentSpec, seed: int = 0) -> ExperimentData:
    """Preload the tip with a weight, wait for a steady state, release."""
    if not spec.weights:
        raise ConfigError("oscillating experiment needs at least one weight")
    mesh = spec.build_mesh()
    ctx = spec.context(2, mesh)
    g = abs(ctx.gravity[2])
    trajectories = []
    for index, weight in enumerate(spec.weights):
        tip = tip_force_field(mesh, spec.clamp_face, (0.0, 0.0, -weight * g))
        preload = settle(ctx, ctx.rest_state(), LoadSpec(applied=tip, gravity_on=spec.gravity))
        trajectories.append(_release(ctx, preload, spec, f"oscillate_{index:03d}", weight))
        logger.info("oscillate: weight %.3f kg released (%d steps)", weight, spec.num_steps)
    return _finish(spec, mesh, trajectories)


def twisted_positions(mesh: HexMesh, q: np.ndarray, nodes: np.ndarray, axis: int, angle: float) -> np.ndarray:
    """Rotate ``nodes`` of ``q`` by ``angle`` about the line along ``axis`` through their centroid."""
    center = q[nodes].mean(axis=0)
    rotvec = np.zeros(3)
    rotvec[axis] = angle
    out = q.copy()
    out[nodes] = center + Rotation.from_rotvec(rotvec).apply(q[nodes] - center)
    return out


def gen_twisting(spec: ExperimentSpec, seed: int = 0) -> ExperimentData:
    """Twist the free end by each angle (ramped statically), then release."""
    mesh = spec.build_mesh()
    ctx = spec.context(2, mesh)
    axis, _ = parse_face_tag(spec.clamp_face)
    tip = tip_nodes(mesh, spec.clamp_face)
    load = LoadSpec(gravity_on=spec.gravity)
    trajectories = []
    for index, angle in enumerate(spec.angles):
        q = mesh.nodes.copy()
        for k in range(1, TWIST_INCREMENTS + 1):
            prescribed = twisted_positions(mesh, mesh.nodes, tip, axis, angle * k / TWIST_INCREMENTS)
            try:
                q = static_solve(ctx, q, fixed_nodes=tip, prescribed=prescribed, load=load)
            except SimulationError as exc:
                raise SimulationError(f"twist {angle:.4f} rad: ramp increment {k} failed ({exc})") from exc
        initial = SimState(q, np.zeros_like(q), 0)
        trajectories.append(_release(ctx, initial, spec, f"twist_{index:03d}", angle))
        logger.info("twist: angle %.4f rad released (%d steps)", angle, spec.num_steps)
    return _finish(spec, mesh, trajectories)


def smooth_force_sequence(
    rng: np.random.Generator, steps: int, kernel: float, amplitude: float
) -> np.ndarray:
    """Smooth random 3D force sequence (steps, 3) with per-axis std ``amplitude``.

    I.i.d. normals are convolved with a Gaussian of width ``kernel`` steps,
    rescaled and clipped to 3 * amplitude in norm.
    """
    noise = rng.standard_normal((steps, 3))
    if kernel > 0:
        noise = gaussian_filter1d(noise, sigma=kernel, axis=0, mode="nearest")
    std = noise.std(axis=0, keepdims=True)
    forces = amplitude * noise / np.where(std > 0, std, 1.0)
    norms = np.linalg.norm(forces, axis=1, keepdims=True)
    limit = 3.0 * amplitude
    return np.where(norms > limit, forces * limit / np.where(norms > 0, norms, 1.0), forces)


def gen_actuated_synthetic(spec: ExperimentSpec, seed: int = 0) -> ExperimentData:
    """Drive the tip face with smooth random forces from the rest (or gravity) equilibrium."""
    mesh = spec.build_mesh()
    ctx = spec.context(2, mesh)
    count = spec.actuation_trajectories or sum(spec.split_counts)
    if spec.gravity:
        initial = settle(ctx, ctx.rest_state(), LoadSpec(gravity_on=True))
    else:
        initial = ctx.rest_state()
    trajectories = []
    for index in range(count):
        rng = np.random.default_rng(np.random.SeedSequence((seed, index)))
        forces = smooth_force_sequence(rng, spec.num_steps, spec.actuation_kernel, spec.actuation_amplitude)
        f_ext = np.stack([tip_force_field(mesh, spec.clamp_face, f) for f in forces])
        loads = [LoadSpec(applied=f, gravity_on=spec.gravity) for f in f_ext]
        states = rollout(ctx, initial, loads)
        target = Trajectory.from_states(states, f_ext, ctx.h)
        trajectories.append(
            GeneratedTrajectory(
                name=f"actuated_{index:03d}", parameter=float(index), initial=initial, loads=loads, target=target
            )
        )
        logger.info("actuated: trajectory %d (%d steps)", index, spec.num_steps)
    return _finish(spec, mesh, trajectories)


@dataclass
class RegisteredMarkers:
    """Registered marker frames of states 0..T with markers attached on the registered rest frame."""

    markers: MarkerSet
    frames: np.ndarray


def register_markers(data: ExperimentData, traj: GeneratedTrajectory) -> RegisteredMarkers:
    registered = register_trajectory(traj.raw_markers, data.marker_layout.rest_points, data.mocap_frame)
    markers = attach_markers(data.mesh, data.mesh.nodes, registered[0])
    return RegisteredMarkers(markers, registered[1:])


def sample_marker_layout(mesh: HexMesh, count: int, rng: np.random.Generator) -> MarkerSet:
    """Random markers on surface faces that are not fully clamped."""
    clamped = np.isin(mesh.surface_faces, mesh.dirichlet_nodes).all(axis=1)
    candidates = np.flatnonzero(~clamped)
    faces = rng.choice(candidates, size=count, replace=count > candidates.size)
    alpha = bilinear_weights(rng.uniform(0.15, 0.85, size=(count, 2)))
    attachments = [MarkerAttachment(int(f), tuple(float(x) for x in a), 0.0) for f, a in zip(faces, alpha)]
    layout = MarkerSet(attachments)
    layout.rest_points = interpolate(layout, mesh, mesh.nodes)
    return layout


def gen_pseudo_real(spec: ExperimentSpec, seed: int = 0) -> ExperimentData:
    """Marker recordings of sim2 motion in a random mocap frame with Gaussian noise.

    Each trajectory's ``raw_markers`` has T + 2 frames: the undeformed layout
    followed by the markers of states 0..T.
    """
    base = GENERATORS[spec.pseudo_real_base](spec, seed)
    rng = np.random.default_rng(np.random.SeedSequence((seed, spec.marker_seed)))
    layout = sample_marker_layout(base.mesh, spec.marker_count, rng)
    mocap = RigidTransform.random(rng, translation_scale=0.5)
    for traj in base.trajectories:
        frames = [layout.rest_points] + [interpolate(layout, base.mesh, q) for q in traj.target.q]
        raw = mocap.apply(np.stack(frames))
        if spec.noise_sigma > 0:
            raw = raw + spec.noise_sigma * rng.standard_normal(raw.shape)
        traj.raw_markers = raw
        traj.name = traj.name.replace(spec.pseudo_real_base, "pseudo_real", 1)
    base.marker_layout = layout
    base.mocap_frame = mocap
    logger.info("pseudo-real: %d markers, noise %.1e m", spec.marker_count, spec.noise_sigma)
    return base


GENERATORS: dict[str, Callable[[ExperimentSpec, int], ExperimentData]] = {
    "oscillate": gen_oscillating,
    "twist": gen_twisting,
    "pseudo_real": gen_pseudo_real,
    "actuated_synthetic": gen_actuated_synthetic,
}


def generate(spec: ExperimentSpec, seed: int = 0) -> ExperimentData:
    return GENERATORS[spec.kind](spec, seed)
