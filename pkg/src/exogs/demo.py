"""Demonstration ingestion: joint logs, per-camera object pose tracks, calibrations.

A manifest is a JSON document::

    {
      "id": "pick_place_000",          # optional, defaults to the file stem
      "robot": "robot.urdf",
      "joints": "joints.csv",           # or .jsonl with {"t", "q", "g"}
      "tracks": ["tracks.jsonl"],       # one or more JSON-lines files
      "cameras": "cameras.json"
    }

Relative paths resolve against the manifest's directory.  Camera extrinsics
map world points into the camera frame, and the world frame is the robot base
frame the URDF ``base_pose`` is expressed in.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import CameraModel, RigidTransform, compose, invert, pose_interpolate
from .kinematics import (
    JointState,
    RobotModel,
    Trajectory,
    forward_kinematics,
    load_robot,
)

log = logging.getLogger(__name__)

TIME_TOL = 1e-4


class DemoError(Exception):
    pass


class MissingFile(DemoError):
    pass


class SchemaError(DemoError):
    pass


class NonMonotonicTimestamps(DemoError):
    pass


class NoValidView(DemoError):
    """No camera observed the object at ``step`` (1-based)."""

    def __init__(self, step: int, object_id: str | None = None):
        self.step = step
        self.object_id = object_id
        who = f" for object {object_id!r}" if object_id else ""
        super().__init__(f"no valid view at step {step}{who}")


@dataclass(frozen=True)
class PoseSample:
    t: float
    pose: RigidTransform | None
    valid: bool = True

    def __post_init__(self) -> None:
        if self.valid and self.pose is None:
            raise ValueError("valid sample needs a pose")
        if not self.valid and self.pose is not None:
            object.__setattr__(self, "pose", None)


@dataclass(frozen=True)
class PoseTrack:
    object_id: str
    camera_id: str
    samples: tuple[PoseSample, ...]

    def __post_init__(self) -> None:
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        t = [s.t for s in samples]
        if any(b <= a for a, b in zip(t, t[1:])):
            raise NonMonotonicTimestamps(
                f"track {self.object_id}@{self.camera_id}: timestamps not strictly increasing"
            )

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])


@dataclass
class RawLogs:
    demo_id: str
    robot: RobotModel
    robot_path: str
    trajectory: Trajectory
    tracks: list[PoseTrack]
    cameras: dict[str, CameraModel]
    primary_camera: str

    @property
    def K(self) -> int:
        return len(self.cameras)

    @property
    def H(self) -> int:
        return self.trajectory.H


@dataclass(frozen=True)
class GraspWindow:
    """Steps ``start_step..end_step`` (1-based, inclusive) of a rigid grasp."""

    start_step: int
    end_step: int
    relative_pose: RigidTransform

    def steps(self) -> range:
        return range(self.start_step - 1, self.end_step)

    def to_dict(self) -> dict:
        return {"start_step": self.start_step, "end_step": self.end_step,
                "relative_pose": self.relative_pose.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> GraspWindow:
        return cls(int(d["start_step"]), int(d["end_step"]), RigidTransform.from_dict(d["relative_pose"]))


@dataclass(frozen=True)
class Demonstration:
    """Fused, time-aligned demonstration in the robot base frame.

    ``object_assets`` holds asset substitutions for tracked objects,
    ``object_scales`` carries per-object scale edits, and ``grasps`` records
    the windows where an object is rigidly fixed to the end effector.
    """

    trajectory: Trajectory
    object_tracks: Mapping[str, tuple[RigidTransform, ...]]
    cameras: Mapping[str, CameraModel]
    primary_camera: str
    demo_id: str = "demo"
    ee_poses: tuple[RigidTransform, ...] = ()
    object_assets: Mapping[str, str] = field(default_factory=dict)
    object_scales: Mapping[str, float] = field(default_factory=dict)
    grasps: Mapping[str, GraspWindow] = field(default_factory=dict)
    robot_path: str | None = None

    def __post_init__(self) -> None:
        if self.primary_camera not in self.cameras:
            raise SchemaError(f"primary camera {self.primary_camera!r} not among cameras")
        H = self.trajectory.H
        for oid, seq in self.object_tracks.items():
            if len(seq) != H:
                raise SchemaError(f"object {oid!r} has {len(seq)} poses, trajectory has {H}")
        if self.ee_poses and len(self.ee_poses) != H:
            raise SchemaError("end-effector poses must match the trajectory length")
        object.__setattr__(self, "object_tracks", {k: tuple(v) for k, v in self.object_tracks.items()})

    @property
    def H(self) -> int:
        return self.trajectory.H

    def scale_for(self, object_id: str) -> float:
        return float(self.object_scales.get(object_id, 1.0))

    def replace(self, **changes) -> Demonstration:
        return replace(self, **changes)

    # serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        traj = self.trajectory
        return {
            "demo_id": self.demo_id,
            "robot_path": self.robot_path,
            "primary_camera": self.primary_camera,
            "cameras": {k: c.to_dict() for k, c in self.cameras.items()},
            "trajectory": {
                "t": traj.timestamps.tolist(),
                "q": traj.q.tolist(),
                "g": traj.g.tolist(),
            },
            "ee_poses": [p.to_dict() for p in self.ee_poses],
            "object_tracks": {k: [p.to_dict() for p in v] for k, v in self.object_tracks.items()},
            "object_assets": dict(self.object_assets),
            "object_scales": {k: float(v) for k, v in self.object_scales.items()},
            "grasps": {k: w.to_dict() for k, w in self.grasps.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> Demonstration:
        tr = d["trajectory"]
        return cls(
            trajectory=Trajectory.from_arrays(tr["t"], np.asarray(tr["q"], dtype=np.float64).reshape(len(tr["t"]), -1), tr["g"]),
            object_tracks={k: tuple(RigidTransform.from_dict(p) for p in v) for k, v in d["object_tracks"].items()},
            cameras={k: CameraModel.from_dict(c) for k, c in d["cameras"].items()},
            primary_camera=d["primary_camera"],
            demo_id=d.get("demo_id", "demo"),
            ee_poses=tuple(RigidTransform.from_dict(p) for p in d.get("ee_poses", [])),
            object_assets=d.get("object_assets", {}),
            object_scales=d.get("object_scales", {}),
            grasps={k: GraspWindow.from_dict(w) for k, w in d.get("grasps", {}).items()},
            robot_path=d.get("robot_path"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> Demonstration:
        path = Path(path)
        if not path.is_file():
            raise MissingFile(f"demonstration file not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


# loading -----------------------------------------------------------------


def _resolve(base: Path, ref: str, what: str) -> Path:
    p = Path(ref)
    if not p.is_absolute():
        p = base / p
    if not p.is_file():
        raise MissingFile(f"{what} file not found: {p}")
    return p


def _read_joints(path: Path) -> Trajectory:
    rows: list[tuple[float, list[float], float]] = []
    try:
        if path.suffix == ".csv":
            with path.open(newline="", encoding="utf-8") as fh:
                reader = csv.DictReader(fh)
                fields = reader.fieldnames or []
                qcols = sorted(
                    (f for f in fields if f.startswith("q_")), key=lambda f: int(f[2:])
                )
                if "t" not in fields or "g" not in fields:
                    raise SchemaError(f"{path}: joint CSV needs columns t, q_1..q_n, g")
                for r in reader:
                    rows.append((float(r["t"]), [float(r[c]) for c in qcols], float(r["g"])))
        else:
            for line in path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    r = json.loads(line)
                    rows.append((float(r["t"]), [float(v) for v in r["q"]], float(r["g"])))
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        if isinstance(exc, DemoError):
            raise
        raise SchemaError(f"{path}: {exc}") from exc
    if not rows:
        raise SchemaError(f"{path}: no joint samples")
    t = [r[0] for r in rows]
    if any(b <= a for a, b in zip(t, t[1:])):
        raise NonMonotonicTimestamps(f"{path}: joint timestamps not strictly increasing")
    for i, r in enumerate(rows):
        if not 0.0 <= r[2] <= 1.0:
            raise SchemaError(f"{path}: row {i} gripper {r[2]} outside [0, 1]")
        if len(r[1]) != len(rows[0][1]):
            raise SchemaError(f"{path}: row {i} has inconsistent joint count")
    return Trajectory(tuple(JointState(r[1], r[2], r[0]) for r in rows))


def _read_tracks(paths: Iterable[Path]) -> list[PoseTrack]:
    grouped: dict[tuple[str, str], list[PoseSample]] = {}
    for path in paths:
        for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                valid = bool(r.get("valid", True))
                pose = RigidTransform(r["quaternion"], r["translation"]) if valid else None
                key = (str(r["object_id"]), str(r["camera_id"]))
                grouped.setdefault(key, []).append(PoseSample(float(r["t"]), pose, valid))
            except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
                raise SchemaError(f"{path}:{n}: {exc}") from exc
    return [PoseTrack(o, c, tuple(s)) for (o, c), s in sorted(grouped.items())]


def _read_cameras(path: Path) -> tuple[dict[str, CameraModel], str]:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        entries = doc["cameras"] if isinstance(doc, dict) else doc
        cams: dict[str, CameraModel] = {}
        primary = None
        for e in entries:
            cams[str(e["id"])] = CameraModel.from_dict(e)
            if e.get("primary"):
                if primary is not None:
                    raise SchemaError(f"{path}: more than one primary camera")
                primary = str(e["id"])
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        if isinstance(exc, DemoError):
            raise
        raise SchemaError(f"{path}: {exc}") from exc
    if not cams:
        raise SchemaError(f"{path}: no cameras")
    return cams, primary if primary is not None else next(iter(cams))


def load_demo(manifest: str | Path, robot: str | Path | None = None) -> RawLogs:
    """Parse every stream a demonstration manifest references."""
    manifest = Path(manifest)
    if not manifest.is_file():
        raise MissingFile(f"manifest not found: {manifest}")
    try:
        doc = json.loads(manifest.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{manifest}: {exc}") from exc
    base = manifest.parent
    for key in ("joints", "tracks", "cameras"):
        if key not in doc:
            raise MissingFile(f"{manifest}: manifest does not reference {key!r}")
    if robot is None:
        if "robot" not in doc:
            raise MissingFile(f"{manifest}: manifest does not reference 'robot'")
        robot_path = _resolve(base, doc["robot"], "robot")
    else:
        robot_path = Path(robot)
        if not robot_path.is_file():
            raise MissingFile(f"robot file not found: {robot_path}")
    track_refs = doc["tracks"] if isinstance(doc["tracks"], list) else [doc["tracks"]]

    model = load_robot(robot_path)
    traj = _read_joints(_resolve(base, doc["joints"], "joints"))
    if traj.states[0].q.shape[0] != model.n:
        raise SchemaError(
            f"joint log has {traj.states[0].q.shape[0]} joints, robot has {model.n}"
        )
    tracks = _read_tracks(_resolve(base, r, "tracks") for r in track_refs)
    cams, primary = _read_cameras(_resolve(base, doc["cameras"], "cameras"))
    for tr in tracks:
        if tr.camera_id not in cams:
            raise SchemaError(f"track {tr.object_id} references unknown camera {tr.camera_id!r}")
    return RawLogs(
        demo_id=str(doc.get("id", manifest.stem)),
        robot=model,
        robot_path=str(robot_path),
        trajectory=traj,
        tracks=tracks,
        cameras=cams,
        primary_camera=primary,
    )


# alignment and fusion ----------------------------------------------------


def _resample(track: PoseTrack, targets: np.ndarray) -> PoseTrack:
    ts = track.timestamps
    out: list[PoseSample] = []
    for t in targets:
        t = float(t)
        if ts.size == 0 or t < ts[0] - TIME_TOL or t > ts[-1] + TIME_TOL:
            out.append(PoseSample(t, None, False))
            continue
        k = int(np.argmin(np.abs(ts - t)))
        if abs(ts[k] - t) <= TIME_TOL:
            s = track.samples[k]
            out.append(PoseSample(t, s.pose, s.valid))
            continue
        hi = int(np.searchsorted(ts, t))
        a, b = track.samples[hi - 1], track.samples[hi]
        if not (a.valid and b.valid):
            out.append(PoseSample(t, None, False))
            continue
        s = (t - a.t) / (b.t - a.t)
        out.append(PoseSample(t, pose_interpolate(a.pose, b.pose, s), True))
    return PoseTrack(track.object_id, track.camera_id, tuple(out))


def align_time(tracks: Sequence[PoseTrack], target_timestamps: Sequence[float]) -> list[PoseTrack]:
    """Resample tracks onto ``target_timestamps``; gaps become invalid samples."""
    targets = np.asarray(target_timestamps, dtype=np.float64)
    return [_resample(tr, targets) for tr in tracks]


def fuse_views(
    per_view: Sequence[PoseTrack],
    primary: str,
    cameras: Mapping[str, CameraModel],
    object_id: str | None = None,
) -> list[RigidTransform]:
    """Fuse aligned per-camera tracks of one object into base-frame poses.

    Rotation comes from the primary camera (falling back to the first valid
    camera in calibration order); translation is the plain mean over every
    valid view after each has been mapped into the base frame.
    """
    if not per_view:
        raise ValueError("fuse_views needs at least one view")
    H = len(per_view[0].samples)
    if any(len(v.samples) != H for v in per_view):
        raise ValueError("views must be aligned to the same timestamps")
    order = {cid: i for i, cid in enumerate(cameras)}
    views = sorted(per_view, key=lambda v: order[v.camera_id])
    cam_to_base = {v.camera_id: invert(cameras[v.camera_id].extrinsics) for v in views}

    fused: list[RigidTransform] = []
    for t in range(H):
        base_poses = [
            (v.camera_id, compose(cam_to_base[v.camera_id], v.samples[t].pose))
            for v in views
            if v.samples[t].valid
        ]
        if not base_poses:
            raise NoValidView(t + 1, object_id)
        rot = next((p for cid, p in base_poses if cid == primary), base_poses[0][1]).rotation
        trans = np.mean(np.stack([p.translation for _, p in base_poses]), axis=0)
        fused.append(RigidTransform(rot, trans))
    return fused


def end_effector_poses(model: RobotModel, traj: Trajectory) -> tuple[RigidTransform, ...]:
    idx = model.link_index(model.end_effector_link)
    return tuple(forward_kinematics(model, s.q, s.g)[idx] for s in traj.states)


def build_demonstration(raw: RawLogs) -> Demonstration:
    """Align every track to the joint timestamps and fuse views per object."""
    targets = raw.trajectory.timestamps
    by_object: dict[str, list[PoseTrack]] = {}
    for tr in raw.tracks:
        by_object.setdefault(tr.object_id, []).append(tr)
    fused: dict[str, tuple[RigidTransform, ...]] = {}
    for oid in sorted(by_object):
        aligned = align_time(by_object[oid], targets)
        fused[oid] = tuple(fuse_views(aligned, raw.primary_camera, raw.cameras, oid))
    return Demonstration(
        trajectory=raw.trajectory,
        object_tracks=fused,
        cameras=raw.cameras,
        primary_camera=raw.primary_camera,
        demo_id=raw.demo_id,
        ee_poses=end_effector_poses(raw.robot, raw.trajectory),
        robot_path=raw.robot_path,
    )
