import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from resphys.errors import RegistrationError
from resphys.markers.registration import RigidTransform, frame_error, kabsch, register_trajectory

seeds = st.integers(min_value=0, max_value=2**32 - 1)


@pytest.fixture
def cloud(rng):
    return rng.uniform(0.0, 0.1, size=(10, 3))


def test_kabsch_identity(cloud):
    transform = kabsch(cloud, cloud)
    np.testing.assert_allclose(transform.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(transform.translation, 0.0, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=seeds)
def test_kabsch_recovers_rigid_motion(seed):
    rng = np.random.default_rng(seed)
    source = rng.uniform(0.0, 0.1, size=(10, 3))
    truth = RigidTransform.random(rng, translation_scale=0.5)
    found = kabsch(source, truth.apply(source))
    np.testing.assert_allclose(found.rotation, truth.rotation, atol=1e-10)
    np.testing.assert_allclose(found.translation, truth.translation, atol=1e-10)


def test_kabsch_never_returns_a_reflection(cloud):
    mirrored = cloud * np.array([-1.0, 1.0, 1.0])
    transform = kabsch(cloud, mirrored)
    assert np.linalg.det(transform.rotation) == pytest.approx(1.0, abs=1e-12)


def test_kabsch_rejects_degenerate_input(cloud):
    line = np.outer(np.linspace(0, 1, 5), [1.0, 2.0, 3.0])
    with pytest.raises(RegistrationError, match="collinear"):
        kabsch(line, line)
    with pytest.raises(RegistrationError, match="at least 3"):
        kabsch(cloud[:2], cloud[:2])
    with pytest.raises(RegistrationError, match="matching"):
        kabsch(cloud, cloud[:5])


def test_rigid_transform_algebra(rng):
    a = RigidTransform.random(rng)
    b = RigidTransform.random(rng)
    points = rng.standard_normal((7, 3))
    np.testing.assert_allclose(a.inverse().apply(a.apply(points)), points, atol=1e-12)
    np.testing.assert_allclose(a.compose(b).apply(points), a.apply(b.apply(points)), atol=1e-12)
    np.testing.assert_allclose(RigidTransform.identity().apply(points), points)


def test_rigid_transform_rejects_non_rotations():
    with pytest.raises(RegistrationError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(RegistrationError):
        RigidTransform(2 * np.eye(3), np.zeros(3))
    with pytest.raises(RegistrationError):
        RigidTransform(np.eye(3), np.zeros(2))


def test_register_trajectory_in_sim_frame(cloud, rng):
    frames = cloud[None] + 1e-3 * rng.standard_normal((6, 10, 3))
    frames[0] = cloud
    registered = register_trajectory(frames, cloud)
    assert registered.shape == frames.shape
    np.testing.assert_allclose(registered, frames, atol=1e-10)


def test_register_trajectory_undoes_mocap_frame(cloud, rng):
    frames = cloud[None] + 1e-3 * rng.standard_normal((8, 10, 3))
    frames[0] = cloud
    mocap = RigidTransform(Rotation.from_euler("zyx", [40, -15, 70], degrees=True).as_matrix(), np.array([1.0, -2.0, 0.5]))
    registered = register_trajectory(mocap.apply(frames), cloud)
    assert registered.shape == frames.shape
    np.testing.assert_allclose(registered, frames, atol=1e-9)


def test_frame_error_of_a_recovered_recording_frame(cloud):
    mocap = RigidTransform(Rotation.from_rotvec([0.4, -1.1, 0.2]).as_matrix(), np.array([0.3, 0.1, -0.7]))
    angle, offset = frame_error(kabsch(mocap.apply(cloud), cloud), mocap)
    assert angle < 1e-9
    assert offset < 1e-9
    # a correction that is off by a known rotation about z
    tilt = RigidTransform(Rotation.from_rotvec([0.0, 0.0, 0.05]).as_matrix(), np.zeros(3))
    angle, offset = frame_error(tilt.compose(mocap.inverse()), mocap)
    assert angle == pytest.approx(0.05, rel=1e-9)
    assert offset == pytest.approx(0.0, abs=1e-12)


def test_register_trajectory_checks_a_known_frame(cloud, rng, caplog):
    frames = cloud[None] + 1e-3 * rng.standard_normal((4, 10, 3))
    frames[0] = cloud
    mocap = RigidTransform.random(rng, translation_scale=0.5)
    with caplog.at_level("INFO", logger="resphys.markers.registration"):
        registered = register_trajectory(mocap.apply(frames), cloud, known_frame=mocap)
    np.testing.assert_allclose(registered, frames, atol=1e-9)
    assert "recording frame recovered" in caplog.text
