from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from resphys.errors import ResPhysError, RolloutError, SimulationError
from resphys.learning.network import ResidualModel
from resphys.sim.implicit import step
from resphys.sim.state import LoadSpec, SimContext, SimState

logger = logging.getLogger(__name__)


def rollout_hybrid(
    ctx: SimContext, model: ResidualModel, state0: SimState, loads: Sequence[LoadSpec]
) -> list[SimState]:
    """Autoregressive simulator rollout with the network's residual force added at every step."""
    if model.kind != "residual":
        raise ResPhysError(f"hybrid rollout needs a residual model, got {model.kind!r}")
    states = [state0]
    for index, load in enumerate(loads):
        current = states[-1]
        f_ext = load.applied_forces(ctx.mesh.num_nodes)
        f_res = model.residual_force(current.q, current.v, f_ext)
        try:
            states.append(step(ctx, current, load.with_extra(f_res)))
        except SimulationError as exc:
            raise RolloutError(index, exc) from exc
    return states


def rollout_simfree(
    model: ResidualModel, state0: SimState, loads: Sequence[LoadSpec], num_nodes: int | None = None
) -> list[SimState]:
    """Pure network rollout: each next state is predicted from the previous prediction."""
    if model.kind != "simfree":
        raise ResPhysError(f"SimFree rollout needs a simfree model, got {model.kind!r}")
    n = num_nodes or model.rest.shape[0]
    states = [state0]
    for index, load in enumerate(loads):
        current = states[-1]
        q, v = model.next_state(current.q, current.v, load.applied_forces(n))
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(v))):
            raise RolloutError(index, SimulationError("non-finite SimFree prediction"))
        states.append(SimState(q, v, current.t + 1))
    return states
