import numpy as np
import pytest

from exogs.geometry import rotation_angle
from exogs.kinematics import (
    CycleError,
    DimensionMismatch,
    JointLimitViolation,
    OutOfRange,
    ParseError,
    Trajectory,
    TrajectoryError,
    UnsupportedJoint,
    forward_kinematics,
    parse_robot,
    replay_link_poses,
    serialize_robot,
)
from exogs.synthetic import arm_urdf
from oracles import fk_oracle

URDF = arm_urdf()


def test_parse_fixture_arm():
    m = parse_robot(URDF)
    assert m.n == 7
    assert m.L == 11
    assert m.link_names[0] == "base"
    assert m.end_effector_link == "flange"
    assert m.finger_joints == ("finger_left_joint", "finger_right_joint")


def test_serialize_round_trip():
    m = parse_robot(URDF)
    assert parse_robot(serialize_robot(m)) == m


def test_fk_matches_matrix_chain():
    m = parse_robot(URDF)
    rng = np.random.default_rng(3)
    for _ in range(20):
        q = rng.uniform(-2.8, 2.8, size=7)
        g = rng.uniform()
        ours = forward_kinematics(m, q, g)
        ref = fk_oracle(URDF, q, 0.045 + 0.07 * g)
        for name, T in zip(m.link_names, ours):
            assert np.allclose(T.as_matrix(), ref[name], atol=1e-12)


def test_finger_offset_is_half_width():
    m = parse_robot(URDF)
    q = np.zeros(7)
    poses = dict(zip(m.link_names, forward_kinematics(m, q, 1.0)))
    d = poses["finger_left"].translation - poses["finger_right"].translation
    assert np.isclose(np.linalg.norm(d), 0.115)


def test_base_pose_applies_to_every_link():
    text = URDF.replace('<end_effector link="flange"/>', '<end_effector link="flange"/><base_pose xyz="1 2 3" rpy="0 0 0.5"/>')
    m, m0 = parse_robot(text), parse_robot(URDF)
    q = np.full(7, 0.3)
    base = m.base_pose
    for a, b in zip(forward_kinematics(m, q), forward_kinematics(m0, q)):
        assert np.allclose(a.as_matrix(), base.as_matrix() @ b.as_matrix())


def test_zero_config_identity_rotations():
    m = parse_robot(URDF)
    for T in forward_kinematics(m, np.zeros(7)):
        assert rotation_angle(T) < 1e-12


def test_dimension_and_limits():
    m = parse_robot(URDF)
    with pytest.raises(DimensionMismatch):
        forward_kinematics(m, np.zeros(6))
    q = np.zeros(7)
    q[2] = 3.5
    with pytest.raises(JointLimitViolation):
        forward_kinematics(m, q)
    clamped = forward_kinematics(m, q, on_limit="clamp")
    q[2] = 2.9
    assert np.allclose(clamped[3].as_matrix(), forward_kinematics(m, q)[3].as_matrix())
    with pytest.raises(OutOfRange):
        forward_kinematics(m, np.zeros(7), 1.5)


def test_parse_errors():
    with pytest.raises(ParseError):
        parse_robot("<robot")
    bad = '<robot name="r"><link name="a"/><link name="b"/><joint name="j" type="floating"><parent link="a"/><child link="b"/></joint></robot>'
    with pytest.raises(UnsupportedJoint):
        parse_robot(bad)
    cyc = ('<robot name="r"><link name="a"/><link name="b"/>'
           '<joint name="j1" type="fixed"><parent link="a"/><child link="b"/></joint>'
           '<joint name="j2" type="fixed"><parent link="b"/><child link="a"/></joint></robot>')
    with pytest.raises(CycleError):
        parse_robot(cyc)


def test_trajectory_validation_and_replay():
    m = parse_robot(URDF)
    with pytest.raises(TrajectoryError):
        Trajectory.from_arrays([0.0, 0.0], np.zeros((2, 7)), [0.5, 0.5])
    traj = Trajectory.from_arrays([0.0, 0.1], np.zeros((2, 7)), [0.5, 0.5])
    rows = replay_link_poses(m, traj)
    assert len(rows) == 2 and len(rows[0]) == m.L
    q = np.zeros((2, 7))
    q[1, 0] = 9.0
    with pytest.raises(JointLimitViolation, match="timestep 1"):
        replay_link_poses(m, Trajectory.from_arrays([0.0, 0.1], q, [0.5, 0.5]))
