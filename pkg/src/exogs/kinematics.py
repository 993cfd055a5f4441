"""URDF-subset robot models, trajectories and forward kinematics.

Only ``revolute``, ``prismatic`` and ``fixed`` joints are understood; visual,
collision and inertial elements are ignored since Gaussian assets replace the
meshes.  Three optional non-standard children of ``<robot>`` carry what plain
URDF cannot express::

    <base_pose xyz="0 0 0" rpy="0 0 0"/>
    <end_effector link="flange"/>
    <gripper min_open="0.0" max_open="0.08">
      <finger joint="finger_left_joint"/>
      <finger joint="finger_right_joint"/>
    </gripper>

Finger joints are prismatic joints excluded from the actuated vector ``q``; each
is driven by half the gripper width so the two fingers open symmetrically.
"""

from __future__ import annotations

import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import RigidTransform, compose

log = logging.getLogger(__name__)

JOINT_TYPES = ("revolute", "prismatic", "fixed")
LIMIT_EPS = 1e-6


class KinematicsError(Exception):
    pass


class ParseError(KinematicsError):
    pass


class UnsupportedJoint(KinematicsError):
    pass


class CycleError(KinematicsError):
    pass


class DimensionMismatch(KinematicsError):
    pass


class JointLimitViolation(KinematicsError):
    pass


class OutOfRange(KinematicsError):
    pass


class TrajectoryError(KinematicsError):
    pass


def _floats(text: str | None, n: int, default: float = 0.0) -> tuple[float, ...]:
    if text is None:
        return (default,) * n
    vals = tuple(float(v) for v in text.split())
    if len(vals) != n:
        raise ParseError(f"expected {n} numbers, got {text!r}")
    return vals


def _fmt(vals: Iterable[float]) -> str:
    return " ".join(repr(float(v)) for v in vals)


@dataclass(frozen=True)
class Joint:
    name: str
    type: str
    parent: str
    child: str
    origin_xyz: tuple[float, float, float] = (0.0, 0.0, 0.0)
    origin_rpy: tuple[float, float, float] = (0.0, 0.0, 0.0)
    axis: tuple[float, float, float] = (1.0, 0.0, 0.0)
    lower: float = 0.0
    upper: float = 0.0

    @property
    def origin(self) -> RigidTransform:
        return RigidTransform.from_rpy(self.origin_rpy, self.origin_xyz)

    def motion(self, value: float) -> RigidTransform:
        if self.type == "revolute":
            return RigidTransform.from_axis_angle(self.axis, value)
        if self.type == "prismatic":
            return RigidTransform(translation=np.asarray(self.axis) * value)
        return RigidTransform()


@dataclass(frozen=True)
class Link:
    name: str
    parent_joint: str | None


@dataclass(frozen=True)
class RobotModel:
    """Kinematic tree. ``links`` is in topological order (root first)."""

    name: str
    links: tuple[Link, ...]
    joints: tuple[Joint, ...]
    base_xyz: tuple[float, float, float] = (0.0, 0.0, 0.0)
    base_rpy: tuple[float, float, float] = (0.0, 0.0, 0.0)
    end_effector_link: str | None = None
    gripper_range: tuple[float, float] = (0.0, 0.0)
    finger_joints: tuple[str, ...] = ()
    base_override: RigidTransform | None = field(default=None, compare=False)

    @property
    def base_pose(self) -> RigidTransform:
        if self.base_override is not None:
            return self.base_override
        return RigidTransform.from_rpy(self.base_rpy, self.base_xyz)

    def with_base_pose(self, pose: RigidTransform) -> RobotModel:
        from dataclasses import replace

        return replace(self, base_override=pose)

    @property
    def actuated_joints(self) -> tuple[Joint, ...]:
        return tuple(
            j for j in self.joints if j.type != "fixed" and j.name not in self.finger_joints
        )

    @property
    def n(self) -> int:
        return len(self.actuated_joints)

    @property
    def L(self) -> int:
        return len(self.links)

    @property
    def link_names(self) -> list[str]:
        return [lk.name for lk in self.links]

    def link_index(self, name: str) -> int:
        for i, lk in enumerate(self.links):
            if lk.name == name:
                return i
        raise KeyError(name)

    @property
    def limits(self) -> np.ndarray:
        return np.array([[j.lower, j.upper] for j in self.actuated_joints]).reshape(-1, 2)


def parse_robot(description: str) -> RobotModel:
    """Parse URDF text into a validated :class:`RobotModel`."""
    try:
        root = ET.fromstring(description)
    except ET.ParseError as exc:
        raise ParseError(f"malformed XML: {exc}") from exc
    if root.tag != "robot":
        raise ParseError(f"root element is <{root.tag}>, expected <robot>")

    link_names = [el.get("name") for el in root.findall("link")]
    if not link_names or any(n is None for n in link_names):
        raise ParseError("every <link> needs a name and at least one link is required")
    if len(set(link_names)) != len(link_names):
        raise ParseError("duplicate link names")

    joints: list[Joint] = []
    for el in root.findall("joint"):
        name, jtype = el.get("name"), el.get("type")
        if name is None or jtype is None:
            raise ParseError("joint without name or type")
        if jtype not in JOINT_TYPES:
            raise UnsupportedJoint(f"joint {name!r} has unsupported type {jtype!r}")
        p, c = el.find("parent"), el.find("child")
        if p is None or c is None:
            raise ParseError(f"joint {name!r} lacks parent or child")
        parent, child = p.get("link"), c.get("link")
        for ref in (parent, child):
            if ref not in link_names:
                raise ParseError(f"joint {name!r} references missing link {ref!r}")
        org = el.find("origin")
        xyz = _floats(org.get("xyz") if org is not None else None, 3)
        rpy = _floats(org.get("rpy") if org is not None else None, 3)
        ax_el = el.find("axis")
        axis = np.array(_floats(ax_el.get("xyz") if ax_el is not None else "1 0 0", 3))
        lower = upper = 0.0
        if jtype != "fixed":
            norm = np.linalg.norm(axis)
            if norm == 0.0:
                raise ParseError(f"joint {name!r} has a zero axis")
            if abs(norm - 1.0) > 1e-12:
                axis = axis / norm
            lim = el.find("limit")
            if lim is None or lim.get("lower") is None or lim.get("upper") is None:
                raise ParseError(f"joint {name!r} needs <limit lower= upper=>")
            lower, upper = float(lim.get("lower")), float(lim.get("upper"))
            if lower > upper:
                raise ParseError(f"joint {name!r} limits reversed")
        joints.append(
            Joint(name, jtype, parent, child, xyz, rpy, tuple(float(a) for a in axis), lower, upper)
        )
    if len({j.name for j in joints}) != len(joints):
        raise ParseError("duplicate joint names")

    links, ordered_joints = _topological(link_names, joints)

    base_el = root.find("base_pose")
    base_xyz = _floats(base_el.get("xyz") if base_el is not None else None, 3)
    base_rpy = _floats(base_el.get("rpy") if base_el is not None else None, 3)
    ee_el = root.find("end_effector")
    ee = ee_el.get("link") if ee_el is not None else links[-1].name
    if ee not in link_names:
        raise ParseError(f"end effector {ee!r} is not a link")
    g_el = root.find("gripper")
    g_range = (0.0, 0.0)
    fingers: tuple[str, ...] = ()
    if g_el is not None:
        g_range = (float(g_el.get("min_open", 0.0)), float(g_el.get("max_open", 0.0)))
        if g_range[0] > g_range[1]:
            raise ParseError("gripper min_open exceeds max_open")
        fingers = tuple(f.get("joint") for f in g_el.findall("finger"))
        jmap = {j.name: j for j in joints}
        for f in fingers:
            if f not in jmap or jmap[f].type != "prismatic":
                raise ParseError(f"finger {f!r} must name a prismatic joint")

    return RobotModel(
        name=root.get("name", "robot"),
        links=links,
        joints=ordered_joints,
        base_xyz=base_xyz,
        base_rpy=base_rpy,
        end_effector_link=ee,
        gripper_range=g_range,
        finger_joints=fingers,
    )


def _topological(link_names: list[str], joints: list[Joint]) -> tuple[tuple[Link, ...], tuple[Joint, ...]]:
    parent_of: dict[str, Joint] = {}
    for j in joints:
        if j.child in parent_of:
            raise CycleError(f"link {j.child!r} has more than one parent joint")
        parent_of[j.child] = j
    roots = [n for n in link_names if n not in parent_of]
    if len(roots) != 1:
        raise CycleError(f"kinematic graph must have exactly one root, found {roots}")
    children: dict[str, list[Joint]] = {n: [] for n in link_names}
    for j in joints:
        children[j.parent].append(j)
    # depth-first preorder, siblings in declaration order
    links: list[Link] = [Link(roots[0], None)]
    ordered: list[Joint] = []

    def visit(name: str) -> None:
        for j in children[name]:
            ordered.append(j)
            links.append(Link(j.child, j.name))
            visit(j.child)

    visit(roots[0])
    if len(links) != len(link_names):
        raise CycleError("kinematic graph contains a cycle or disconnected links")
    return tuple(links), tuple(ordered)


def load_robot(path: str | Path) -> RobotModel:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"robot description not found: {path}")
    return parse_robot(path.read_text(encoding="utf-8"))


def serialize_robot(model: RobotModel) -> str:
    """URDF text that :func:`parse_robot` maps back to an equal model."""
    root = ET.Element("robot", name=model.name)
    ET.SubElement(root, "base_pose", xyz=_fmt(model.base_xyz), rpy=_fmt(model.base_rpy))
    if model.end_effector_link is not None:
        ET.SubElement(root, "end_effector", link=model.end_effector_link)
    if model.finger_joints or model.gripper_range != (0.0, 0.0):
        g = ET.SubElement(
            root, "gripper",
            min_open=repr(float(model.gripper_range[0])),
            max_open=repr(float(model.gripper_range[1])),
        )
        for f in model.finger_joints:
            ET.SubElement(g, "finger", joint=f)
    for lk in model.links:
        ET.SubElement(root, "link", name=lk.name)
    for j in model.joints:
        el = ET.SubElement(root, "joint", name=j.name, type=j.type)
        ET.SubElement(el, "parent", link=j.parent)
        ET.SubElement(el, "child", link=j.child)
        ET.SubElement(el, "origin", xyz=_fmt(j.origin_xyz), rpy=_fmt(j.origin_rpy))
        if j.type != "fixed":
            ET.SubElement(el, "axis", xyz=_fmt(j.axis))
            ET.SubElement(el, "limit", lower=repr(j.lower), upper=repr(j.upper))
    ET.indent(root)
    return ET.tostring(root, encoding="unicode")


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    g: float
    t: float

    def __post_init__(self) -> None:
        q = np.array(self.q, dtype=np.float64).reshape(-1)
        q.setflags(write=False)
        object.__setattr__(self, "q", q)
        if not 0.0 <= self.g <= 1.0:
            raise OutOfRange(f"gripper opening {self.g} outside [0, 1]")


@dataclass(frozen=True)
class Trajectory:
    states: tuple[JointState, ...]

    def __post_init__(self) -> None:
        states = tuple(self.states)
        object.__setattr__(self, "states", states)
        if not states:
            raise TrajectoryError("trajectory is empty")
        n = states[0].q.shape[0]
        for i, s in enumerate(states):
            if s.q.shape[0] != n:
                raise TrajectoryError(f"state {i} has dimension {s.q.shape[0]}, expected {n}")
        t = np.array([s.t for s in states])
        if np.any(np.diff(t) <= 0):
            raise TrajectoryError("timestamps must be strictly increasing")

    @classmethod
    def from_arrays(cls, t: Sequence[float], q: np.ndarray, g: Sequence[float]) -> Trajectory:
        q = np.asarray(q, dtype=np.float64)
        return cls(tuple(JointState(q[i], float(g[i]), float(t[i])) for i in range(len(t))))

    def __len__(self) -> int:
        return len(self.states)

    @property
    def H(self) -> int:
        return len(self.states)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def q(self) -> np.ndarray:
        return np.stack([s.q for s in self.states])

    @property
    def g(self) -> np.ndarray:
        return np.array([s.g for s in self.states])


def check_limits(model: RobotModel, q: np.ndarray, on_limit: str = "error") -> np.ndarray:
    lim = model.limits
    lo, hi = lim[:, 0] - LIMIT_EPS, lim[:, 1] + LIMIT_EPS
    bad = (q < lo) | (q > hi)
    if not bad.any():
        return q
    names = [model.actuated_joints[i].name for i in np.flatnonzero(bad)]
    if on_limit == "error":
        raise JointLimitViolation(f"joints {names} outside limits")
    if on_limit != "clamp":
        raise ValueError(f"on_limit must be 'error' or 'clamp', got {on_limit!r}")
    log.warning("clamping joints %s to their limits", names)
    return np.clip(q, lim[:, 0], lim[:, 1])


def forward_kinematics(
    model: RobotModel,
    q: Sequence[float],
    g: float | None = None,
    on_limit: str = "error",
) -> list[RigidTransform]:
    """World pose of every link, in ``model.links`` order.

    ``g`` drives the finger joints (if any); when omitted the fingers sit at
    ``min_open``.
    """
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.shape[0] != model.n:
        raise DimensionMismatch(f"q has {q.shape[0]} entries, model has {model.n} actuated joints")
    q = check_limits(model, q, on_limit)
    values = {j.name: float(q[i]) for i, j in enumerate(model.actuated_joints)}
    if model.finger_joints:
        half = 0.5 * (model.gripper_range[0] if g is None else gripper_to_width(model, g))
        for f in model.finger_joints:
            values[f] = half

    poses = {model.links[0].name: model.base_pose}
    for j in model.joints:
        poses[j.child] = compose(
            compose(poses[j.parent], j.origin), j.motion(values.get(j.name, 0.0))
        )
    return [poses[lk.name] for lk in model.links]


def replay_link_poses(
    model: RobotModel, traj: Trajectory, on_limit: str = "error"
) -> list[list[RigidTransform]]:
    """H×L link poses: row t is ``forward_kinematics(model, q_t, g_t)``."""
    rows = []
    for t, s in enumerate(traj.states):
        try:
            rows.append(forward_kinematics(model, s.q, s.g, on_limit=on_limit))
        except KinematicsError as exc:
            raise type(exc)(f"timestep {t}: {exc}") from exc
    return rows


def gripper_to_width(model: RobotModel, g: float) -> float:
    if not 0.0 <= g <= 1.0:
        raise OutOfRange(f"gripper opening {g} outside [0, 1]")
    lo, hi = model.gripper_range
    return lo + g * (hi - lo)
