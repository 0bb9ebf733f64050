import numpy as np
import pytest

from resphys.errors import SysIdError
from resphys.experiments.generators import tip_force_field
from resphys.fem.material import Material
from resphys.markers.interpolation import attach_markers, interpolate
from resphys.sim.implicit import rollout, static_solve
from resphys.sim.state import LoadSpec, SimContext, SimState, StepConfig
from resphys.sysid import SysIdConfig, SysIdData, read_grid, sysid_grid, sysid_loss, sysid_optimize, write_grid
from resphys.sysid.identification import grid_values

TRUTH = Material(youngs_modulus=264e3, poissons_ratio=0.45)


def _markers(mesh):
    centers = mesh.nodes[mesh.surface_faces].mean(axis=1)
    outer = centers[:, 0] > 0.015
    return attach_markers(mesh, mesh.nodes, centers[outer][::2])


def _observations(ctx, weights=(0.02, 0.04), steps=8):
    """Marker recordings of tip-loaded beams released under gravity."""
    markers = _markers(ctx.mesh)
    data = []
    for weight in weights:
        tip = tip_force_field(ctx.mesh, "-x", (0.0, 0.0, -9.81 * weight))
        q0 = static_solve(ctx, ctx.mesh.nodes, load=LoadSpec(applied=tip))
        initial = SimState(q0, np.zeros_like(q0))
        loads = [LoadSpec()] * steps
        states = rollout(ctx, initial, loads)
        targets = np.stack([interpolate(markers, ctx.mesh, s.q) for s in states[1:]])
        data.append(SysIdData(initial=initial, loads=loads, targets=targets, markers=markers))
    return data


@pytest.fixture(scope="module")
def truth_ctx(small_beam):
    return SimContext(small_beam, TRUTH)


@pytest.fixture(scope="module")
def observations(truth_ctx):
    return _observations(truth_ctx)


def test_loss_vanishes_at_the_generating_material(truth_ctx, observations):
    assert sysid_loss(264e3, 0.45, observations, truth_ctx) < 1e-12


def test_loss_prefers_the_generating_material(truth_ctx, observations):
    correct = sysid_loss(264e3, 0.45, observations, truth_ctx)
    wrong = sysid_loss(215e3, 0.45, observations, truth_ctx)
    assert wrong > 0
    assert correct < wrong


def test_loss_ignores_trajectory_order(truth_ctx, observations):
    forward = sysid_loss(215e3, 0.45, observations, truth_ctx)
    backward = sysid_loss(215e3, 0.45, observations[::-1], truth_ctx)
    assert backward == pytest.approx(forward, rel=1e-12)


def test_invalid_material_has_infinite_loss(truth_ctx, observations):
    assert sysid_loss(215e3, 0.5, observations, truth_ctx) == float("inf")
    assert sysid_loss(-1.0, 0.3, observations, truth_ctx) == float("inf")
    with pytest.raises(SysIdError):
        sysid_loss(215e3, 0.45, [], truth_ctx)


def test_grid_values():
    E, nu = grid_values(SysIdConfig(grid_E_bounds=(1e5, 2e5), grid_resolution_E=2.5e4, nu_grid=[0.3, 0.45]))
    np.testing.assert_allclose(E, [1e5, 1.25e5, 1.5e5, 1.75e5, 2e5])
    np.testing.assert_array_equal(nu, [0.3, 0.45])
    E, _ = grid_values(SysIdConfig(grid_E_bounds=(3e5, 3e5)))
    assert E.tolist() == [3e5]


def test_grid_finds_the_generating_material(truth_ctx, observations, tmp_path):
    cfg = SysIdConfig(grid_E_bounds=(224e3, 304e3), grid_resolution_E=4e4, nu_grid=[0.3, 0.45])
    table, argmin = sysid_grid(observations, truth_ctx, cfg)
    assert len(table) == 6
    assert list(table.columns) == ["E_pa", "nu", "loss"]
    assert argmin["E_pa"] == 264e3
    assert argmin["nu"] == 0.45
    assert argmin["loss"] == table["loss"].min()

    write_grid(tmp_path / "grid.csv", table)
    loaded = read_grid(tmp_path / "grid.csv")
    np.testing.assert_allclose(loaded.to_numpy(), table.to_numpy())


def test_optimizer_moves_toward_the_generating_material(truth_ctx, observations):
    cfg = SysIdConfig(start=(215e3, 0.45), max_iters=30)
    start_loss = sysid_loss(215e3, 0.45, observations, truth_ctx)
    E, nu, report = sysid_optimize(observations, truth_ctx, cfg)
    assert report.loss < 0.25 * start_loss
    assert E > 225e3
    assert (report.youngs_modulus, report.poissons_ratio) == (E, nu)
    assert cfg.nu_bounds[0] <= nu <= cfg.nu_bounds[1]
    assert report.history and report.evaluations > report.iterations


def test_optimum_on_a_bound_is_flagged(truth_ctx, observations, caplog):
    cfg = SysIdConfig(E_bounds=(5e4, 1e5), start=(215e3, 0.45), max_iters=20)
    with caplog.at_level("WARNING"):
        E, _, report = sysid_optimize(observations, truth_ctx, cfg)
    assert E == pytest.approx(1e5)
    assert report.bounds_active
    assert "bound" in caplog.text


def test_all_infinite_losses_raise(two_voxel_bar, soft_material):
    ctx = SimContext(two_voxel_bar, soft_material, StepConfig(newton_max_iters=1, newton_tol=1e-14))
    force = np.zeros((12, 3))
    force[two_voxel_bar.nodes[:, 0] > 0.015, 2] = -50.0
    markers = attach_markers(two_voxel_bar, two_voxel_bar.nodes, two_voxel_bar.nodes[[8, 9, 10]])
    data = [SysIdData(ctx.rest_state(), [LoadSpec(applied=force)], np.zeros((1, 3, 3)), markers)]
    with pytest.raises(SysIdError, match="infinite"):
        sysid_optimize(data, ctx, SysIdConfig(max_iters=2))


def test_config_rejects_empty_intervals():
    with pytest.raises(ValueError):
        SysIdConfig(E_bounds=(2e5, 1e5))
