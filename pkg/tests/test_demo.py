import json
import shutil

import numpy as np
import pytest

from exogs.demo import (
    Demonstration,
    MissingFile,
    NonMonotonicTimestamps,
    NoValidView,
    PoseSample,
    PoseTrack,
    SchemaError,
    align_time,
    build_demonstration,
    fuse_views,
    load_demo,
)
from exogs.geometry import CameraModel, RigidTransform, compose, invert, look_at, rotation_angle
from exogs.kinematics import forward_kinematics, load_robot
from exogs.synthetic import GRASP_OFFSET, demo_trajectory


def test_load_and_fuse_fixture(fixture_dir):
    raw = load_demo(fixture_dir["manifest"])
    assert raw.primary_camera == "cam_front"
    assert raw.trajectory.H == 10 and len(raw.tracks) == 3
    demo = build_demonstration(raw)
    # tracks are exact observations, so every view agrees on the base-frame pose
    model = load_robot(fixture_dir["robot"])
    ee = demo.ee_poses
    start = int(np.flatnonzero(demo.trajectory.g < 0.3)[0])
    rel = compose(invert(ee[start]), demo.object_tracks["cube"][start])
    assert np.allclose(rel.translation, GRASP_OFFSET, atol=1e-9)
    idx = model.link_index("flange")
    for t, s in enumerate(demo.trajectory.states):
        assert forward_kinematics(model, s.q, s.g)[idx] == ee[t]


def test_demo_file_round_trip(fixture_dir, tmp_path):
    demo = build_demonstration(load_demo(fixture_dir["manifest"]))
    demo.save(tmp_path / "d.json")
    back = Demonstration.load(tmp_path / "d.json")
    assert back.digest() == demo.digest()
    for a, b in zip(back.object_tracks["cube"], demo.object_tracks["cube"]):
        assert a == b


def _track(ts, poses, cam="c0", valid=None):
    valid = valid or [True] * len(ts)
    return PoseTrack("o", cam, tuple(PoseSample(t, p if v else None, v) for t, p, v in zip(ts, poses, valid)))


def test_align_passthrough_and_interpolation():
    a = RigidTransform(translation=(0, 0, 0))
    b = RigidTransform.from_axis_angle((0, 0, 1), 1.0, (1, 0, 0))
    tr = _track([0.0, 1.0], [a, b])
    out = align_time([tr], [0.0, 0.25, 1.0, 1.5])[0]
    assert out.samples[0].pose == a and out.samples[2].pose == b
    assert np.allclose(out.samples[1].pose.translation, [0.25, 0, 0])
    assert np.isclose(rotation_angle(out.samples[1].pose), 0.25)
    assert not out.samples[3].valid


def test_align_gap_is_invalid():
    p = RigidTransform()
    tr = _track([0.0, 1.0, 2.0], [p, p, p], valid=[True, False, True])
    out = align_time([tr], [0.5, 2.0])[0]
    assert not out.samples[0].valid and out.samples[1].valid


def test_nonmonotonic_track():
    p = RigidTransform()
    with pytest.raises(NonMonotonicTimestamps):
        _track([0.0, 0.0], [p, p])


def _cams():
    return {
        "a": CameraModel(100, 100, 50, 50, 100, 100, look_at((2, 0, 1), (0, 0, 0))),
        "b": CameraModel(100, 100, 50, 50, 100, 100, look_at((0, 2, 1), (0, 0, 0))),
        "c": CameraModel(100, 100, 50, 50, 100, 100, look_at((-2, 0, 1), (0, 0, 0))),
    }


def test_fuse_primary_rotation_and_mean():
    cams = _cams()
    obj = RigidTransform.from_rpy((0.1, 0.2, 0.3), (0.1, 0.2, 0.3))
    noise = {"a": (0.01, 0, 0), "b": (0, 0.02, 0), "c": (0, 0, -0.03)}
    views = []
    for cid, cam in cams.items():
        # each camera sees a slightly different translation and rotation
        seen = RigidTransform.from_axis_angle((1, 0, 0), 0.01 * len(views), obj.translation + noise[cid])
        views.append(_track([0.0], [compose(cam.extrinsics, seen)], cam=cid))
    fused = fuse_views(views, "b", cams)[0]
    primary_base = compose(invert(cams["b"].extrinsics), views[1].samples[0].pose)
    assert np.array_equal(fused.rotation, primary_base.rotation)
    assert np.allclose(fused.translation, obj.translation + np.mean(list(noise.values()), axis=0), atol=1e-12)


def test_fuse_falls_back_and_fails():
    cams = _cams()
    p = RigidTransform(translation=(0, 0, 1))
    views = [_track([0.0, 1.0], [p, p], cam=c, valid=[c != "a", False]) for c in cams]
    with pytest.raises(NoValidView) as err:
        fuse_views(views, "a", cams)
    assert err.value.step == 2
    fused = fuse_views([_track([0.0], [p], cam=c, valid=[c != "a"]) for c in cams], "a", cams)[0]
    expect = compose(invert(cams["b"].extrinsics), p)
    assert np.array_equal(fused.rotation, expect.rotation)


def test_manifest_errors(fixture_dir, tmp_path):
    with pytest.raises(MissingFile):
        load_demo(tmp_path / "nope.json")
    root = tmp_path / "copy"
    shutil.copytree(fixture_dir["root"], root, ignore=shutil.ignore_patterns("assets", "backgrounds"))
    (root / "tracks.jsonl").unlink()
    with pytest.raises(MissingFile):
        load_demo(root / "manifest.json")
    shutil.copy(fixture_dir["root"] / "tracks.jsonl", root / "tracks.jsonl")
    lines = (root / "joints.csv").read_text().splitlines()
    lines[2], lines[3] = lines[3], lines[2]
    (root / "joints.csv").write_text("\n".join(lines))
    with pytest.raises(NonMonotonicTimestamps):
        load_demo(root / "manifest.json")
    (root / "joints.csv").write_text("t,q_1\n0.0,1.0\n")
    with pytest.raises(SchemaError):
        load_demo(root / "manifest.json")


def test_joints_jsonl(fixture_dir, tmp_path):
    root = tmp_path / "j"
    shutil.copytree(fixture_dir["root"], root, ignore=shutil.ignore_patterns("assets", "backgrounds"))
    model = load_robot(root / "robot.urdf")
    t, q, g = demo_trajectory(model, 10)
    with (root / "joints.jsonl").open("w") as fh:
        for i in range(10):
            fh.write(json.dumps({"t": t[i], "q": q[i].tolist(), "g": g[i]}) + "\n")
    doc = json.loads((root / "manifest.json").read_text())
    doc["joints"] = "joints.jsonl"
    (root / "manifest.json").write_text(json.dumps(doc))
    a = load_demo(root / "manifest.json").trajectory
    assert np.array_equal(a.q, q) and np.array_equal(a.g, g)
