import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from locbench.errors import ZeroNorm
from locbench.geometry import (
    CameraIntrinsics,
    Pose,
    axis_angle_quaternion,
    blend_poses,
    blend_quaternions,
    canonical_quaternion,
    matrix_to_quaternion,
    pose_position_error,
    pose_rotation_error,
    project,
    project_points,
    quaternion_to_matrix,
    rotation_angle_deg,
    so3_exp,
)

unit = st.floats(-1.0, 1.0, allow_nan=False)
quats = st.tuples(unit, unit, unit, unit).filter(lambda q: np.linalg.norm(q) > 0.1)


@given(quats)
def test_quaternion_matrix_round_trip(q):
    q = canonical_quaternion(q)
    R = quaternion_to_matrix(q)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(R), 1.0)
    back = matrix_to_quaternion(R)
    # q and -q are the same rotation; the sign is only pinned when w is not ~0
    assert min(np.abs(back - q).max(), np.abs(back + q).max()) < 1e-9
    if q[0] > 1e-6:
        assert np.allclose(back, q, atol=1e-9)


def test_canonical_sign_and_zero_norm():
    assert np.allclose(canonical_quaternion([-1, 0, 0, 0]), [1, 0, 0, 0])
    assert np.allclose(canonical_quaternion([0, -1, 0, 0]), [0, 1, 0, 0])
    with pytest.raises(ZeroNorm):
        canonical_quaternion([0, 0, 0, 0])


def test_rotation_error_small_and_near_180():
    a = Pose.identity()
    for deg in (1e-6, 0.01, 30.0, 179.99, 180.0):
        b = Pose(np.zeros(3), axis_angle_quaternion([0, 0, 1], math.radians(deg)))
        assert pose_rotation_error(a, b) == pytest.approx(deg, rel=1e-7, abs=1e-9)


def test_rotation_angle_of_so3_exp():
    rng = np.random.default_rng(0)
    for _ in range(50):
        w = rng.normal(size=3)
        w *= rng.uniform(0, math.pi) / np.linalg.norm(w)
        assert rotation_angle_deg(so3_exp(w)) == pytest.approx(math.degrees(np.linalg.norm(w)),
                                                               abs=1e-9)


def test_from_rt_round_trip():
    rng = np.random.default_rng(1)
    R = quaternion_to_matrix(canonical_quaternion(rng.normal(size=4)))
    t = rng.normal(size=3)
    pose = Pose.from_rt(R, t)
    assert np.allclose(pose.translation, t)
    assert np.allclose(pose.rotation, R)


def test_look_at_points_axis_at_target():
    pose = Pose.look_at([10, 0, 2], [0, 0, 0])
    d = np.array([-10, 0, -2]) / np.linalg.norm([10, 0, 2])
    assert np.allclose(pose.viewing_direction, d)
    uv = project([0, 0, 0], pose, CameraIntrinsics(640, 480, 450, 450, 320, 240))
    assert np.allclose(uv, (320, 240))


def test_project_behind_camera():
    intr = CameraIntrinsics(640, 480, 450, 450, 320, 240)
    pose = Pose.identity()
    assert project([0, 0, -1], pose, intr) is None
    uv, z = project_points(np.array([[0, 0, -1.0], [1, 0, 2.0]]), pose, intr)
    assert np.all(np.isnan(uv[0]))
    assert np.allclose(uv[1], (320 + 225, 240))
    assert np.allclose(z, [-1, 2])


def test_rotation_is_read_only():
    pose = Pose.identity()
    with pytest.raises(ValueError):
        pose.rotation[0, 0] = 2.0


def test_blend_equal_weights_halfway():
    a = Pose(np.zeros(3), axis_angle_quaternion([0, 0, 1], 0.0))
    b = Pose(np.array([2.0, 0, 0]), axis_angle_quaternion([0, 0, 1], math.radians(40)))
    m = blend_poses([a, b], [0.5, 0.5])
    assert np.allclose(m.position, [1, 0, 0])
    assert pose_rotation_error(m, a) == pytest.approx(20.0, abs=1e-9)


def test_blend_hemisphere_alignment():
    q = axis_angle_quaternion([1, 0, 0], 0.3)
    assert np.allclose(blend_quaternions([q, -q], [0.5, 0.5]), q)


def test_blend_unit_weight_returns_input():
    a = Pose(np.ones(3), axis_angle_quaternion([0, 1, 0], 0.4))
    b = Pose.identity()
    assert blend_poses([a, b], [1.0, 0.0]) is a


def test_blend_rejects_bad_weights():
    with pytest.raises(ValueError):
        blend_poses([Pose.identity()] * 2, [0.5, 0.6])
    with pytest.raises(ZeroNorm):
        q = axis_angle_quaternion([0, 0, 1], 0.0)
        blend_quaternions([q, q], [1.0, -1.0])


@settings(max_examples=50)
@given(st.floats(0.0, 1.0))
def test_blend_position_is_affine(t):
    a = Pose(np.array([0.0, 1, 2]), [1, 0, 0, 0])
    b = Pose(np.array([4.0, -1, 0]), [1, 0, 0, 0])
    m = blend_poses([a, b], [1 - t, t])
    assert pose_position_error(m, Pose((1 - t) * a.position + t * b.position, [1, 0, 0, 0])) < 1e-12


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(640, 480, -1, 450, 320, 240)
    with pytest.raises(ValueError):
        CameraIntrinsics(640, 480, 450, 450, 700, 240)


def test_position_error_examples():
    a = Pose(np.array([3.0, 4.0, 0.0]), [1, 0, 0, 0])
    b = Pose(np.zeros(3), axis_angle_quaternion([1, 0, 0], 1.0))
    assert pose_position_error(a, a) == 0.0
    assert pose_position_error(Pose(np.array([1.0, 0, 0]), [1, 0, 0, 0]), b) == 1.0
    assert pose_position_error(a, b) == 5.0


def test_rotation_error_examples():
    ident = Pose.identity()
    rz = Pose(np.zeros(3), axis_angle_quaternion([0, 0, 1], math.pi / 2))
    assert pose_rotation_error(rz, ident) == pytest.approx(90.0, abs=1e-12)
    assert pose_rotation_error(ident, ident) == 0.0
    q = axis_angle_quaternion([1, 2, 3], 0.7)
    assert pose_rotation_error(Pose(np.zeros(3), q), Pose(np.zeros(3), -q)) == 0.0


def test_rotation_error_symmetric():
    rng = np.random.default_rng(7)
    for _ in range(100):
        a = Pose(np.zeros(3), rng.normal(size=4))
        b = Pose(np.zeros(3), rng.normal(size=4))
        assert pose_rotation_error(a, b) == pytest.approx(pose_rotation_error(b, a), abs=1e-10)


def test_blend_identity_and_half_turn():
    half_turn = axis_angle_quaternion([0, 0, 1], math.pi)
    out = blend_quaternions([[1, 0, 0, 0], half_turn], [0.5, 0.5])
    assert np.allclose(out, axis_angle_quaternion([0, 0, 1], math.pi / 2))


def test_project_examples():
    intr = CameraIntrinsics(640, 480, 500, 500, 320, 240)
    assert project([0, 0, 5], Pose.identity(), intr) == (320.0, 240.0)
    assert project([1, 0, 5], Pose.identity(), intr)[0] == pytest.approx(420.0)
