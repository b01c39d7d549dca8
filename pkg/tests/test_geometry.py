import math

import numpy as np
import pytest

from egomotion.errors import ContractError, GimbalLockError
from egomotion.geometry import (
    PoseVector6,
    RigidTransform,
    accumulate,
    compose,
    conjugate_mirror,
    invert,
    se3_to_vec,
    vec_to_se3,
)


def random_pose(rng, max_angle=1.4):
    t = rng.uniform(-10, 10, size=3)
    r = rng.uniform(-max_angle, max_angle, size=3)
    return PoseVector6(*t, *r)


def test_zero_motion_is_identity():
    T = vec_to_se3(PoseVector6(0, 0, 0, 0, 0, 0))
    np.testing.assert_array_equal(T.mat, np.eye(4))


def test_pure_translation():
    T = vec_to_se3(PoseVector6(1, 0, 0, 0, 0, 0))
    np.testing.assert_array_equal(T.rotation, np.eye(3))
    np.testing.assert_array_equal(T.translation, [1, 0, 0])


def test_single_axis_rotation_about_y():
    T = vec_to_se3(PoseVector6(0, 0, 0, 0, math.pi / 2, 0))
    c, s = math.cos(math.pi / 2), math.sin(math.pi / 2)
    expected = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    np.testing.assert_allclose(T.rotation, expected, atol=1e-15)


def test_nonfinite_input_rejected():
    with pytest.raises(ContractError):
        PoseVector6(float("nan"), 0, 0, 0, 0, 0)
    with pytest.raises(ContractError):
        PoseVector6(0, 0, 0, 4.0, 0, 0)  # angle outside (-pi, pi]


def test_se3_to_vec_identity():
    p = se3_to_vec(RigidTransform.identity())
    assert p.to_array().tolist() == [0, 0, 0, 0, 0, 0]


def test_se3_to_vec_translation_only():
    T = vec_to_se3(PoseVector6(3, -2, 5, 0, 0, 0))
    p = se3_to_vec(T)
    np.testing.assert_array_equal(p.to_array(), [3, -2, 5, 0, 0, 0])


def test_round_trip_random_poses():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        p = random_pose(rng)
        q = se3_to_vec(vec_to_se3(p))
        np.testing.assert_allclose(q.to_array(), p.to_array(), atol=1e-9)


def test_round_trip_matrix_side():
    rng = np.random.default_rng(8)
    for _ in range(200):
        T = vec_to_se3(random_pose(rng))
        T2 = vec_to_se3(se3_to_vec(T))
        np.testing.assert_allclose(T2.mat, T.mat, atol=1e-9)


def test_gimbal_guard_raises():
    T = vec_to_se3(PoseVector6(0, 0, 0, 0.3, math.pi / 2, 0.2))
    with pytest.raises(GimbalLockError):
        se3_to_vec(T)


def test_compose_identity_neutral():
    rng = np.random.default_rng(9)
    T = vec_to_se3(random_pose(rng))
    np.testing.assert_allclose(compose(T, RigidTransform.identity()).mat, T.mat, atol=1e-12)
    np.testing.assert_allclose(compose(RigidTransform.identity(), T).mat, T.mat, atol=1e-12)


def test_compose_with_inverse_is_identity():
    rng = np.random.default_rng(10)
    for _ in range(50):
        T = vec_to_se3(random_pose(rng))
        np.testing.assert_allclose(compose(T, invert(T)).mat, np.eye(4), atol=1e-9)


def test_compose_associative():
    rng = np.random.default_rng(11)
    for _ in range(50):
        a, b, c = (vec_to_se3(random_pose(rng)) for _ in range(3))
        left = compose(compose(a, b), c)
        right = compose(a, compose(b, c))
        np.testing.assert_allclose(left.mat, right.mat, atol=1e-9)


def test_three_z_steps_add_up():
    step = vec_to_se3(PoseVector6(0, 0, 1, 0, 0, 0))
    T = compose(compose(step, step), step)
    np.testing.assert_allclose(T.translation, [0, 0, 3], atol=1e-15)


def test_invert_identity_and_translation():
    np.testing.assert_array_equal(invert(RigidTransform.identity()).mat, np.eye(4))
    T = invert(vec_to_se3(PoseVector6(1, 2, 3, 0, 0, 0)))
    np.testing.assert_array_equal(T.translation, [-1, -2, -3])


def test_invert_is_involution():
    rng = np.random.default_rng(12)
    for _ in range(100):
        T = vec_to_se3(random_pose(rng))
        np.testing.assert_allclose(invert(invert(T)).mat, T.mat, atol=1e-9)


def test_accumulate_identities():
    traj = accumulate([RigidTransform.identity(), RigidTransform.identity()])
    assert len(traj) == 3
    for _, pose in traj.frames:
        np.testing.assert_array_equal(pose.mat, np.eye(4))


def test_accumulate_z_steps():
    step = vec_to_se3(PoseVector6(0, 0, 1, 0, 0, 0))
    traj = accumulate([step, step])
    np.testing.assert_allclose(traj.positions()[:, 2], [0, 1, 2], atol=1e-15)


def test_accumulate_empty_rejected():
    with pytest.raises(ContractError):
        accumulate([])


def test_conjugate_mirror_translation():
    T = conjugate_mirror(vec_to_se3(PoseVector6(1, 2, 3, 0, 0, 0)))
    np.testing.assert_array_equal(T.translation, [-1, 2, 3])
    np.testing.assert_array_equal(T.rotation, np.eye(3))


def test_conjugate_mirror_identity():
    np.testing.assert_array_equal(conjugate_mirror(RigidTransform.identity()).mat, np.eye(4))


def test_conjugate_mirror_yaw_flips_sign():
    # Oracle: conjugate the matrix explicitly with F = diag(-1,1,1,1).
    F = np.diag([-1.0, 1.0, 1.0, 1.0])
    rng = np.random.default_rng(13)
    for _ in range(50):
        theta = rng.uniform(-1.0, 1.0)
        T = vec_to_se3(PoseVector6(0, 0, 0, 0, theta, 0))
        M = conjugate_mirror(T)
        np.testing.assert_allclose(M.mat, F @ T.mat @ F, atol=1e-15)
        v = se3_to_vec(M)
        assert v.ry == pytest.approx(-theta, abs=1e-12)


def test_conjugate_mirror_involution():
    rng = np.random.default_rng(14)
    for _ in range(100):
        T = vec_to_se3(random_pose(rng))
        np.testing.assert_allclose(conjugate_mirror(conjugate_mirror(T)).mat, T.mat, atol=1e-12)


def test_outputs_satisfy_invariants():
    # Every operation's result re-validates on construction; chain a long
    # product to confirm drift stays controlled.
    rng = np.random.default_rng(15)
    T = RigidTransform.identity()
    step = vec_to_se3(PoseVector6(0.01, 0, 0.5, 0.001, 0.002, -0.001))
    for _ in range(5000):
        T = compose(T, step)
    R = T.rotation
    assert np.abs(R.T @ R - np.eye(3)).max() <= 1e-9
    # Constructing from the raw matrix revalidates everything.
    RigidTransform(T.mat)
