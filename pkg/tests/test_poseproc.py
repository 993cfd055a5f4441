import numpy as np
import pytest

from exogs.demo import Demonstration, GraspWindow
from exogs.geometry import CameraModel, RigidTransform, compose, invert
from exogs.kinematics import Trajectory
from exogs.poseproc import (
    NoGraspDetected,
    UnknownAsset,
    detect_grasp_window,
    fix_object,
    perturb_poses,
    substitute_object,
)


def make_demo(g, seed=0, ee=None):
    rng = np.random.default_rng(seed)
    H = len(g)
    traj = Trajectory.from_arrays(np.arange(H) * 0.1, np.zeros((H, 2)), g)
    if ee is None:
        ee = tuple(RigidTransform.from_rpy(rng.normal(size=3), rng.normal(size=3)) for _ in range(H))
    obj = tuple(RigidTransform.from_rpy(rng.normal(size=3), rng.normal(size=3)) for _ in range(H))
    cam = CameraModel(100, 100, 50, 50, 100, 100, RigidTransform())
    return Demonstration(traj, {"cube": obj}, {"c": cam}, "c", "d", ee)


def test_window_example():
    w = detect_grasp_window(make_demo([1, 1, 0.1, 0.1, 1]))
    assert (w.start_step, w.end_step) == (3, 5)
    w = detect_grasp_window(make_demo([1, 0.1, 0.5, 0.1]))
    assert (w.start_step, w.end_step) == (2, 4)
    with pytest.raises(NoGraspDetected):
        detect_grasp_window(make_demo([1, 0.5, 0.9]))


def test_fix_contract():
    demo = make_demo([1, 1, 0.1, 0.2, 0.1, 1, 1])
    w = detect_grasp_window(demo)
    out = fix_object(demo, "cube", w)
    for t in w.steps():
        rel = compose(invert(demo.ee_poses[t]), out.object_tracks["cube"][t])
        assert np.allclose(rel.as_matrix(), w.relative_pose.as_matrix(), atol=1e-9)
    for t in set(range(demo.H)) - set(w.steps()):
        assert out.object_tracks["cube"][t] == demo.object_tracks["cube"][t]
    assert out.trajectory is demo.trajectory


def test_fix_identity_and_static():
    demo = make_demo([1, 0.1, 0.1, 1])
    w = GraspWindow(2, 3, RigidTransform())
    out = fix_object(demo, "cube", w)
    assert out.object_tracks["cube"][1] == demo.ee_poses[1]
    still = RigidTransform.from_rpy((0.1, 0.2, 0.3), (1, 2, 3))
    demo = make_demo([1, 0.1, 0.1, 0.1], ee=(still,) * 4)
    w = detect_grasp_window(demo)
    out = fix_object(demo, "cube", w)
    assert len({out.object_tracks["cube"][t] for t in w.steps()}) == 1


def test_fix_rejects_bad_window():
    demo = make_demo([1, 0.1, 1])
    with pytest.raises(ValueError):
        fix_object(demo, "cube", GraspWindow(2, 9, RigidTransform()))


def test_substitute_identity_relabel():
    demo = make_demo([1, 0.1, 0.1, 1])
    out = substitute_object(demo, "cube", "mug", known_assets={"mug"})
    assert out.object_assets == {"cube": "mug"}
    assert out.object_tracks["cube"] == demo.object_tracks["cube"]
    with pytest.raises(UnknownAsset):
        substitute_object(demo, "cube", "nope", known_assets={"mug"})


def test_substitute_offset_shifts_in_ee_frame():
    demo = make_demo([1, 0.1, 0.1, 0.1, 1])
    fixed = fix_object(demo, "cube", detect_grasp_window(demo))
    off = RigidTransform(translation=(0, 0, 0.02))
    out = substitute_object(fixed, "cube", "mug", off)
    w = fixed.grasps["cube"]
    for t in w.steps():
        expect = compose(compose(demo.ee_poses[t], w.relative_pose), off)
        assert np.allclose(out.object_tracks["cube"][t].as_matrix(), expect.as_matrix(), atol=1e-12)
    assert out.object_tracks["cube"][0] == fixed.object_tracks["cube"][0]


def test_perturb_contract():
    demo = make_demo([1, 1, 1, 0.1, 0.1, 1])
    fixed = fix_object(demo, "cube", detect_grasp_window(demo))
    out = perturb_poses(fixed, "cube", 42, 0.05, 0.2, (0.9, 1.1))
    a, b = fixed.object_tracks["cube"], out.object_tracks["cube"]
    # one rigid delta over the whole pre-grasp segment
    deltas = [compose(b[t], invert(a[t])).as_matrix() for t in range(3)]
    assert all(np.allclose(d, deltas[0], atol=1e-12) for d in deltas)
    moved = b[0].translation - a[0].translation
    assert np.linalg.norm(moved) <= 0.05 + 1e-12
    for t in range(3, 6):
        assert b[t] == a[t]
    assert 0.9 <= out.scale_for("cube") <= 1.1
    again = perturb_poses(fixed, "cube", 42, 0.05, 0.2, (0.9, 1.1))
    assert again.object_tracks["cube"] == b
    assert np.array_equal(out.trajectory.q, demo.trajectory.q)


def test_perturb_zero_is_identity_and_warns(caplog):
    demo = make_demo([1, 0.1, 1])
    assert perturb_poses(demo, "cube", 0, 0.0, 0.0) is demo
    perturb_poses(demo, "cube", 0, 0.5, 0.0)
    assert any("exceed" in r.message for r in caplog.records)
