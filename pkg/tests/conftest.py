import sys
import pathlib
# Ensure src/ is on sys.path so 'resphys' and 'main' are importable during test collection
_PROJECT_ROOT = pathlib.Path(__file__).resolve().parent.parent
_SRC_ROOT = _PROJECT_ROOT / "src"
if str(_SRC_ROOT) not in sys.path:
    sys.path.insert(0, str(_SRC_ROOT))

import numpy as np
import pytest

from resphys.fem.material import Material
from resphys.fem.mesh import build_voxel_beam
from resphys.sim.state import SimContext, StepConfig


def pytest_addoption(parser):
    parser.addoption(
        "--runslow",
        action="store_true",
        default=False,
        help="Run full experiment tests marked as slow (minutes to hours).",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="slow: pass --runslow to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def soft_material():
    """Simulator to be corrected (215 kPa, 0.45)."""
    return Material(youngs_modulus=215e3, poissons_ratio=0.45)


@pytest.fixture(scope="session")
def stiff_material():
    """Simulator producing targets (264 kPa, 0.499)."""
    return Material(youngs_modulus=264e3, poissons_ratio=0.499)


@pytest.fixture(scope="session")
def single_voxel():
    """Free-floating 1 cm cube: 1 element, 8 nodes, no Dirichlet nodes."""
    return build_voxel_beam((0.01, 0.01, 0.01), 0.01, clamp_face=None)


@pytest.fixture(scope="session")
def two_voxel_bar():
    """2 x 1 x 1 cm bar clamped at -x: 12 nodes, 4 of them fixed."""
    return build_voxel_beam((0.02, 0.01, 0.01), 0.01, clamp_face="-x")


@pytest.fixture(scope="session")
def beam():
    """Default 10 x 3 x 3 cm beam at 1 cm voxels, clamped at -x."""
    return build_voxel_beam((0.10, 0.03, 0.03), 0.01, clamp_face="-x")


@pytest.fixture(scope="session")
def small_beam():
    """4 x 2 x 2 cm beam clamped at -x, for fitting and training tests that must stay fast."""
    return build_voxel_beam((0.04, 0.02, 0.02), 0.01, clamp_face="-x")


@pytest.fixture
def make_ctx():
    """Factory for a SimContext with optional gravity off."""

    def _make_ctx(mesh, material, gravity=True, h=0.01):
        g = (0.0, 0.0, -9.81) if gravity else (0.0, 0.0, 0.0)
        return SimContext(mesh, material, StepConfig(h=h), g)

    return _make_ctx


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
