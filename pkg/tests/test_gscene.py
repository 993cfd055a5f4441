import json
import logging

import numpy as np
import pytest
from plyfile import PlyData, PlyElement

from exogs import sh
from exogs.demo import Demonstration
from exogs.geometry import CameraModel, RigidTransform, quat_to_matrix
from exogs.gscene import (
    ENVIRONMENT,
    AssetLibrary,
    FrameScene,
    MissingBinding,
    ParseError,
    Placement,
    SceneError,
    UnsupportedLayout,
    compose_frame,
    load_splat,
    make_asset,
    save_splat,
    scale_colors,
    transform_asset,
)
from exogs.kinematics import Trajectory
from exogs.synthetic import random_asset


def _asset(degree=0, n=20, seed=0):
    return random_asset(np.random.default_rng(seed), n, sh_degree=degree, asset_id="a")


@pytest.mark.parametrize("degree", [0, 1, 2, 3])
def test_ply_round_trip(tmp_path, degree):
    a = _asset(degree)
    save_splat(a, tmp_path / "a.ply")
    b = load_splat(tmp_path / "a.ply", asset_id="a")
    assert b.sh_degree == degree
    for f in ("positions", "log_scales", "rotations", "opacity_logits", "sh_coeffs"):
        assert np.allclose(getattr(a, f), getattr(b, f), atol=1e-6)


def _write_raw(path, fields, rows):
    data = np.array([tuple(r) for r in rows], dtype=[(f, "<f4") for f in fields])
    PlyData([PlyElement.describe(data, "vertex")]).write(str(path))


BASE = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
        "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]


def test_bad_files(tmp_path, caplog):
    good = [0, 0, 0, 0, 0, 0, 0, -3, -3, -3, 1, 0, 0, 0]
    _write_raw(tmp_path / "nan.ply", BASE, [good, good[:1] + [np.nan] + good[2:]])
    with pytest.raises(ParseError, match=r"rows \[1\]"):
        load_splat(tmp_path / "nan.ply")
    _write_raw(tmp_path / "rest.ply", BASE + [f"f_rest_{i}" for i in range(5)], [good + [0] * 5])
    with pytest.raises(UnsupportedLayout):
        load_splat(tmp_path / "rest.ply")
    _write_raw(tmp_path / "miss.ply", BASE[:-1], [good[:-1]])
    with pytest.raises(UnsupportedLayout):
        load_splat(tmp_path / "miss.ply")
    (tmp_path / "junk.ply").write_bytes(b"not a ply")
    with pytest.raises(ParseError):
        load_splat(tmp_path / "junk.ply")
    big = good[:7] + [10, -30, -3] + good[10:]
    _write_raw(tmp_path / "big.ply", BASE, [big])
    with caplog.at_level(logging.WARNING):
        a = load_splat(tmp_path / "big.ply")
    assert a.scales.max() <= 10.0 + 1e-9 and a.scales.min() >= 1e-7 * (1 - 1e-9)
    assert "clamped 2" in caplog.text


def test_transform_covariance_and_positions():
    a = _asset(0)
    T = RigidTransform.from_rpy((0.3, -0.2, 0.9), (1, 2, 3))
    b = transform_asset(a, T, 1.5)
    r = T.rotation_matrix
    c = a.centroid
    assert np.allclose(b.positions, (c + 1.5 * (a.positions - c)) @ r.T + T.translation)
    assert np.allclose(b.covariances, 2.25 * r @ a.covariances @ r.T)
    assert transform_asset(a) is a


def test_sh_rotation_preserves_radiance():
    rng = np.random.default_rng(5)
    for degree in (1, 2, 3):
        a = _asset(degree, n=5, seed=degree)
        T = RigidTransform(rng.normal(size=4))
        b = transform_asset(a, T, rotate_sh=True)
        d = rng.normal(size=(5, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        before = sh.evaluate(a.sh_coeffs, d)
        after = sh.evaluate(b.sh_coeffs, d @ T.rotation_matrix.T)
        assert np.allclose(before, after, atol=1e-9)
        dropped = transform_asset(a, T)
        assert dropped.sh_degree == 0


def test_scale_colors_is_linear_in_decoded_color():
    a = _asset(2)
    d = np.tile([0.0, 0.0, 1.0], (len(a), 1))
    b = scale_colors(a, (0.5, 1.0, 1.3))
    assert np.allclose(sh.evaluate(b.sh_coeffs, d), sh.evaluate(a.sh_coeffs, d) * [0.5, 1.0, 1.3])


def test_library_cache(tmp_path):
    a = _asset(1)
    save_splat(a, tmp_path / "a.ply")
    (tmp_path / "lib.json").write_text(json.dumps({"a": {"path": "a.ply", "instance_label": 2, "binding": "cube"}}))
    one = AssetLibrary.load(tmp_path / "lib.json", tmp_path / "cache")
    assert len(list((tmp_path / "cache").glob("*.npz"))) == 1
    two = AssetLibrary.load(tmp_path / "lib.json", tmp_path / "cache")
    assert one.digest() == two.digest() == AssetLibrary.load(tmp_path / "lib.json").digest()
    assert one.bound_to("cube") == ["a"]


def _demo(H=2):
    traj = Trajectory.from_arrays(np.arange(H) * 0.1, np.zeros((H, 1)), np.ones(H))
    obj = tuple(RigidTransform(translation=(t, 0, 1)) for t in range(H))
    cam = CameraModel(50, 50, 16, 16, 32, 32, RigidTransform())
    return Demonstration(traj, {"cube": obj}, {"c": cam}, "c", "d", ())


def test_compose_frame_places_everything():
    lib = AssetLibrary()
    lib.add(make_asset(np.zeros((1, 3)), 0.01, (1, 1, 1), 0.5, instance_label=0, asset_id="table"), ENVIRONMENT)
    lib.add(make_asset(np.zeros((1, 3)), 0.01, (1, 1, 1), 0.5, instance_label=1, asset_id="l0"), "link0")
    lib.add(make_asset(np.zeros((3, 3)), 0.01, (1, 1, 1), 0.5, instance_label=2, asset_id="cube"), "cube")
    lib.add(make_asset(np.zeros((1, 3)), 0.01, (1, 1, 1), 0.5, instance_label=2, asset_id="mug"), None)
    demo = _demo()
    link = RigidTransform(translation=(0, 1, 0))
    scene = compose_frame(lib, demo, 1, {"link0": link})
    ids = [p.asset_id for p in scene.placements]
    assert ids == ["table", "l0", "cube"]
    assert scene.placements[1].pose == link
    assert np.allclose(scene.placements[2].pose.translation, [1, 0, 1])
    sub = demo.replace(object_assets={"cube": "mug"}, object_scales={"cube": 2.0})
    scene = compose_frame(lib, sub, 0, {})
    assert [p.asset_id for p in scene.placements] == ["table", "mug"]
    with pytest.raises(MissingBinding):
        compose_frame(lib, demo.replace(object_assets={"cube": "ghost"}), 0, {})
    with pytest.raises(IndexError):
        compose_frame(lib, demo, 5, {})


def test_scene_rejects_duplicates():
    a = make_asset(np.zeros((1, 3)), 0.01, (1, 1, 1), 0.5)
    cam = CameraModel(50, 50, 16, 16, 32, 32, RigidTransform())
    with pytest.raises(SceneError):
        FrameScene((Placement("x", a, RigidTransform()), Placement("x", a, RigidTransform())), cam)
