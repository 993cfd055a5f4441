"""Procedural fixtures: a 7-joint arm with a parallel gripper, Gaussian assets
for a tabletop scene, and complete on-disk demonstrations.

Nothing here is captured data; it exists so the pipeline can be exercised
end to end without hardware.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import CameraModel, RigidTransform, compose, invert, look_at
from .gscene import BACKGROUND, OBJECT, ROBOT, ENVIRONMENT, GaussianAsset, make_asset, save_splat
from .kinematics import RobotModel, forward_kinematics, parse_robot
from . import sh

# (xyz offset from parent, axis) for the seven arm joints
ARM_JOINTS = [
    ((0.0, 0.0, 0.10), (0, 0, 1)),
    ((0.0, 0.0, 0.15), (0, 1, 0)),
    ((0.0, 0.0, 0.20), (0, 0, 1)),
    ((0.0, 0.0, 0.15), (0, 1, 0)),
    ((0.0, 0.0, 0.15), (0, 0, 1)),
    ((0.0, 0.0, 0.12), (0, 1, 0)),
    ((0.0, 0.0, 0.08), (0, 0, 1)),
]
GRIPPER_RANGE = (0.045, 0.115)
# grasp point in the flange frame; fingers closed at g=0.1 straddle a 4 cm cube
GRASP_OFFSET = (0.0, 0.0, 0.08)
# cameras aim at the middle of the cube's path
LOOK_AT = (0.5, 0.1, 0.2)


def arm_urdf(name: str = "exo_arm") -> str:
    """URDF text of the fixture arm: 7 revolute joints, flange, two fingers."""
    parts = [f'<robot name="{name}">', '  <end_effector link="flange"/>',
             f'  <gripper min_open="{GRIPPER_RANGE[0]}" max_open="{GRIPPER_RANGE[1]}">',
             '    <finger joint="finger_left_joint"/>', '    <finger joint="finger_right_joint"/>',
             '  </gripper>', '  <link name="base"/>']
    parts += [f'  <link name="link{i + 1}"/>' for i in range(7)]
    parts += ['  <link name="flange"/>', '  <link name="finger_left"/>', '  <link name="finger_right"/>']
    parent = "base"
    for i, (xyz, axis) in enumerate(ARM_JOINTS):
        child = f"link{i + 1}"
        parts.append(
            f'  <joint name="joint{i + 1}" type="revolute"><parent link="{parent}"/><child link="{child}"/>'
            f'<origin xyz="{xyz[0]} {xyz[1]} {xyz[2]}" rpy="0 0 0"/><axis xyz="{axis[0]} {axis[1]} {axis[2]}"/>'
            f'<limit lower="-2.9" upper="2.9"/></joint>'
        )
        parent = child
    parts.append(
        '  <joint name="flange_joint" type="fixed"><parent link="link7"/><child link="flange"/>'
        '<origin xyz="0 0 0.10" rpy="0 0 0"/></joint>'
    )
    for side, sign in (("left", 1), ("right", -1)):
        parts.append(
            f'  <joint name="finger_{side}_joint" type="prismatic"><parent link="flange"/>'
            f'<child link="finger_{side}"/><origin xyz="0 0 0.03" rpy="0 0 0"/>'
            f'<axis xyz="0 {sign} 0"/><limit lower="0" upper="0.06"/></joint>'
        )
    parts.append("</robot>")
    return "\n".join(parts)


def arm_model() -> RobotModel:
    return parse_robot(arm_urdf())


def random_asset(
    rng: np.random.Generator,
    n: int,
    center=(0.0, 0.0, 0.0),
    extent=(0.05, 0.05, 0.05),
    color=(0.8, 0.2, 0.2),
    scale=(0.004, 0.012),
    label: int = OBJECT,
    asset_id: str = "asset",
    sh_degree: int = 0,
    opacity=(0.5, 0.99),
) -> GaussianAsset:
    """Anisotropic Gaussians uniformly filling a box, with color jitter."""
    pos = np.asarray(center) + rng.uniform(-1, 1, size=(n, 3)) * np.asarray(extent)
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    col = np.clip(np.asarray(color) + rng.normal(0, 0.05, size=(n, 3)), 0.02, 0.98)
    a = make_asset(
        pos, rng.uniform(*scale, size=(n, 3)), col, rng.uniform(*opacity, size=n), q, label, asset_id
    )
    if sh_degree:
        B = sh.BASIS_SIZES[sh_degree]
        coeffs = np.zeros((n, 3, B))
        coeffs[:, :, 0] = a.sh_coeffs[:, :, 0]
        coeffs[:, :, 1:] = rng.normal(0, 0.05, size=(n, 3, B - 1))
        a = a.replace(sh_coeffs=coeffs)
    return a


def link_assets(model: RobotModel, rng: np.random.Generator, per_link: int) -> list[GaussianAsset]:
    """One blob per link spanning the segment towards its child joint."""
    offsets = {j.parent: np.asarray(j.origin_xyz) for j in model.joints if j.name not in model.finger_joints}
    out = []
    for lk in model.links:
        if lk.name.startswith("finger"):
            a = random_asset(rng, max(per_link // 4, 4), (0, 0, 0.045), (0.01, 0.003, 0.045),
                             (0.3, 0.3, 0.3), (0.002, 0.004), ROBOT, lk.name)
        elif lk.name == model.end_effector_link:
            a = random_asset(rng, per_link, (0, 0, 0.01), (0.03, 0.03, 0.012), (0.9, 0.9, 0.92),
                             (0.003, 0.008), ROBOT, lk.name)
        else:
            seg = offsets.get(lk.name, np.array([0.0, 0.0, 0.03]))
            a = random_asset(rng, per_link, seg / 2, np.abs(seg) / 2 + 0.025, (0.9, 0.9, 0.92),
                             (0.004, 0.012), ROBOT, lk.name)
        out.append(a)
    return out


def tabletop_assets(model: RobotModel, n_gaussians: int = 5000, seed: int = 0) -> tuple[list, dict]:
    """Assets and bindings for environment (table), robot links and one cube."""
    rng = np.random.default_rng(seed)
    n_obj = max(n_gaussians // 12, 8)
    n_links = max((n_gaussians * 3) // 10 // model.L, 8)
    n_env = max(n_gaussians - n_obj - n_links * model.L, 8)
    table = random_asset(rng, n_env, (0.45, 0.05, 0.03), (0.35, 0.45, 0.006), (0.55, 0.4, 0.25),
                         (0.008, 0.02), BACKGROUND, "table", opacity=(0.8, 0.99))
    cube = random_asset(rng, n_obj, (0, 0, 0), (0.02, 0.02, 0.02), (0.1, 0.7, 0.2),
                        (0.003, 0.008), OBJECT, "cube", opacity=(0.8, 0.99))
    mug = random_asset(rng, n_obj, (0, 0, 0), (0.025, 0.025, 0.03), (0.2, 0.3, 0.85),
                       (0.003, 0.008), OBJECT, "mug", opacity=(0.8, 0.99))
    links = link_assets(model, rng, n_links)
    bindings = {"table": ENVIRONMENT, "cube": "cube", "mug": None}
    bindings.update({a.asset_id: a.asset_id for a in links})
    return [table, cube, mug] + links, bindings


def demo_trajectory(model: RobotModel, H: int = 10) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reach, grasp, lift and release: timestamps, joint vectors and gripper."""
    home = np.array([0.0, 0.5, 0.0, 1.0, 0.0, 0.9, 0.0])
    grasp = np.array([0.2, 0.9, 0.0, 1.2, 0.0, 0.9, 0.0])
    lift = np.array([0.5, 0.6, 0.0, 1.0, 0.0, 0.9, 0.3])
    s = np.linspace(0.0, 1.0, H)
    q = np.empty((H, model.n))
    g = np.ones(H)
    for i, si in enumerate(s):
        if si <= 0.4:
            q[i] = home + (grasp - home) * (si / 0.4)
        else:
            q[i] = grasp + (lift - grasp) * ((si - 0.4) / 0.6)
    g[(s > 0.4) & (s < 0.85)] = 0.1
    return 0.1 * np.arange(H), q, g


def fixture_cameras(width: int = 320, height: int = 240, target=LOOK_AT) -> dict[str, CameraModel]:
    f = 0.9 * width
    eyes = {"cam_front": (1.3, 0.0, 0.8), "cam_left": (0.6, 0.9, 0.7), "cam_right": (0.6, -0.9, 0.7)}
    return {
        cid: CameraModel(f, f, (width - 1) / 2, (height - 1) / 2, width, height, look_at(eye, target))
        for cid, eye in eyes.items()
    }


def write_fixture(
    out_dir: str | Path,
    H: int = 10,
    n_gaussians: int = 5000,
    width: int = 320,
    height: int = 240,
    seed: int = 0,
    demo_id: str = "fixture_demo",
) -> dict[str, Path]:
    """Write robot, logs, calibration, assets, plans and background images.

    Returns a dict of the main paths.  Object tracks are exact (noise-free)
    camera-frame observations of a cube that is picked up at the first
    gripper closure, so fused poses can be checked analytically.
    """
    out = Path(out_dir)
    (out / "assets").mkdir(parents=True, exist_ok=True)
    (out / "backgrounds").mkdir(exist_ok=True)
    model = arm_model()
    (out / "robot.urdf").write_text(arm_urdf(), encoding="utf-8")

    t, q, g = demo_trajectory(model, H)
    with (out / "joints.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"q_{i + 1}" for i in range(model.n)] + ["g"])
        for i in range(H):
            w.writerow([repr(float(t[i]))] + [repr(float(v)) for v in q[i]] + [repr(float(g[i]))])

    ee_idx = model.link_index("flange")
    ee = [forward_kinematics(model, q[i], g[i])[ee_idx] for i in range(H)]
    grasp_rel = RigidTransform(translation=GRASP_OFFSET)
    start = int(np.flatnonzero(g < 0.3)[0])
    stop = int(np.flatnonzero((np.arange(H) > start) & (g > 0.7))[0]) if np.any((np.arange(H) > start) & (g > 0.7)) else H
    obj = []
    for i in range(H):
        if i < start:
            obj.append(compose(ee[start], grasp_rel))
        elif i < stop:
            obj.append(compose(ee[i], grasp_rel))
        else:
            obj.append(obj[-1])

    cams = fixture_cameras(width, height)
    with (out / "tracks.jsonl").open("w", encoding="utf-8") as fh:
        for cid, cam in cams.items():
            for i in range(H):
                p = compose(cam.extrinsics, obj[i])
                fh.write(json.dumps({
                    "t": float(t[i]), "object_id": "cube", "camera_id": cid,
                    "quaternion": p.rotation.tolist(), "translation": p.translation.tolist(),
                    "valid": True,
                }) + "\n")
    cam_doc = {"cameras": [dict(cam.to_dict(), id=cid, primary=(cid == "cam_front")) for cid, cam in cams.items()]}
    (out / "cameras.json").write_text(json.dumps(cam_doc, indent=1), encoding="utf-8")
    manifest = {"id": demo_id, "robot": "robot.urdf", "joints": "joints.csv",
                "tracks": ["tracks.jsonl"], "cameras": "cameras.json"}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")

    assets, bindings = tabletop_assets(model, n_gaussians, seed)
    lib_doc = {}
    for a in assets:
        save_splat(a, out / "assets" / f"{a.asset_id}.ply")
        lib_doc[a.asset_id] = {"path": f"assets/{a.asset_id}.ply", "instance_label": a.instance_label,
                               "binding": bindings[a.asset_id]}
    (out / "assets.json").write_text(json.dumps(lib_doc, indent=1), encoding="utf-8")

    rng = np.random.default_rng(seed + 1)
    for k in range(3):
        img = rng.integers(0, 256, size=(60 + 20 * k, 80 + 10 * k, 3), dtype=np.uint8)
        Image.fromarray(img, "RGB").save(out / "backgrounds" / f"bg_{k}.png")

    plans = {
        "plan_replay.json": {"seed": seed, "multiplier": 1},
        "plan_dataset_a.json": {"seed": seed, "multiplier": 10,
                                "viewpoint": {"count": 10, "max_rot_deg": 10.0, "max_trans_m": 0.10,
                                              "look_at_point": list(LOOK_AT)}},
        "plan_combined.json": {
            "seed": seed, "multiplier": 20, "mixing": "split",
            "viewpoint": {"max_rot_deg": 10.0, "max_trans_m": 0.10, "look_at_point": list(LOOK_AT)},
            "color": {"rgb_scale_range": [0.6, 1.4], "global_brightness_range": [0.7, 1.3],
                      "local_brightness": {"count": 2, "radius_m": 0.15, "strength_range": [0.6, 1.4]}},
            "background": {"image_directory": "backgrounds", "per_episode_count": 1},
            "object": {"max_translation": 0.05, "max_rotation": 0.26, "scale_range": [0.9, 1.1],
                       "substitutions": [{"object_id": "cube", "asset_id": "mug"}]},
        },
    }
    for name, doc in plans.items():
        (out / name).write_text(json.dumps(doc, indent=1), encoding="utf-8")

    return {
        "root": out,
        "manifest": out / "manifest.json",
        "robot": out / "robot.urdf",
        "assets": out / "assets.json",
        "plan_replay": out / "plan_replay.json",
        "plan_dataset_a": out / "plan_dataset_a.json",
        "plan_combined": out / "plan_combined.json",
        "backgrounds": out / "backgrounds",
    }
