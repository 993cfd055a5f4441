"""Rigid transforms, pinhole cameras and projection.

Conventions used across the package: meters, radians, seconds.  Quaternions
are stored ``(w, x, y, z)`` with ``w >= 0``.  Camera frames follow the usual
computer-vision layout (+x right, +y down, +z forward) and pixel centers sit
on integer coordinates with the origin at the top-left corner.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "BehindCamera",
    "CameraModel",
    "RigidTransform",
    "compose",
    "invert",
    "pose_interpolate",
    "project",
    "unproject",
    "quat_multiply",
    "quat_to_matrix",
    "matrix_to_quat",
    "quat_from_axis_angle",
    "quat_from_rpy",
    "rotation_angle",
    "look_at",
    "align_vectors",
]

# Quaternions whose norm is already this close to 1 are stored untouched, so
# re-wrapping the output of an operation never perturbs its bits.
_NORM_TOL = 1e-12
_MIN_DEPTH = 1e-6


class BehindCamera(ValueError):
    """Raised when projecting a point with camera-frame depth <= 1e-6."""


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of (..., 4) wxyz quaternion arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices (..., 3, 3) from unit wxyz quaternions (..., 4)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    m = np.stack(
        [
            1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy),
            2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx),
            2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Unit wxyz quaternion (w >= 0) from a single 3x3 rotation matrix.

    Uses Shepperd's method: pick the largest of the four diagonal combinations
    so the square root argument stays well away from zero.
    """
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    cands = np.array([tr, m[0, 0], m[1, 1], m[2, 2]])
    k = int(np.argmax(cands))
    if k == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif k == 1:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif k == 2:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return _canonical(np.array(q))


def quat_from_axis_angle(axis: Sequence[float], angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * float(angle)
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / n])


def quat_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Fixed-axis roll/pitch/yaw as used by URDF: R = Rz(yaw) Ry(pitch) Rx(roll)."""
    qx = quat_from_axis_angle((1, 0, 0), roll)
    qy = quat_from_axis_angle((0, 1, 0), pitch)
    qz = quat_from_axis_angle((0, 0, 1), yaw)
    return quat_multiply(qz, quat_multiply(qy, qx))


def _canonical(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).copy()
    n = np.sqrt(q @ q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError(f"invalid quaternion {q!r}")
    if abs(n - 1.0) > _NORM_TOL:
        q /= n
    if q[0] < 0.0:
        q = -q
    return q + 0.0  # collapse -0.0 entries


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """An SE(3) pose: unit quaternion rotation (wxyz) plus translation.

    ``RigidTransform(rotation, translation)`` maps a point ``p`` in the child
    frame to ``R @ p + t`` in the parent frame.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        q = _canonical(self.rotation)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError(f"non-finite translation {t!r}")
        object.__setattr__(self, "rotation", _frozen(q))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> RigidTransform:
        m = np.asarray(m, dtype=np.float64)
        return cls(matrix_to_quat(m[:3, :3]), m[:3, 3])

    @classmethod
    def from_rotation_matrix(cls, r: np.ndarray, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        return cls(matrix_to_quat(r), translation)

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        return cls(quat_from_axis_angle(axis, angle), translation)

    @classmethod
    def from_rpy(cls, rpy, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        return cls(quat_from_rpy(*rpy), translation)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map (..., 3) points from the child frame into the parent frame."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation_matrix.T + self.translation

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    def __hash__(self) -> int:
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __repr__(self) -> str:
        q = ", ".join(f"{v:.6g}" for v in self.rotation)
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        return f"RigidTransform(q=[{q}], t=[{t}])"

    def to_dict(self) -> dict:
        return {"quaternion": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> RigidTransform:
        return cls(d["quaternion"], d["translation"])


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Return ``a ∘ b`` (the homogeneous product ``A @ B``)."""
    q = quat_multiply(a.rotation, b.rotation)
    t = a.rotation_matrix @ b.translation + a.translation
    return RigidTransform(q, t)


def invert(a: RigidTransform) -> RigidTransform:
    qi = a.rotation * np.array([1.0, -1.0, -1.0, -1.0])
    return RigidTransform(qi, -(quat_to_matrix(qi) @ a.translation))


def rotation_angle(a: RigidTransform, b: RigidTransform | None = None) -> float:
    """Geodesic angle of ``a`` (or of ``a⁻¹ b``) in radians, in [0, π]."""
    q = a.rotation if b is None else quat_multiply(a.rotation * [1, -1, -1, -1], b.rotation)
    v = np.linalg.norm(q[1:])
    return float(2.0 * np.arctan2(v, abs(q[0])))


def pose_interpolate(a: RigidTransform, b: RigidTransform, s: float) -> RigidTransform:
    """Linear translation, shortest-arc slerp rotation; s=0 → a, s=1 → b."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"interpolation fraction {s} outside [0, 1]")
    if s == 0.0:
        return a
    if s == 1.0:
        return b
    qa, qb = a.rotation, b.rotation
    d = float(qa @ qb)
    if d < 0.0:
        qb, d = -qb, -d
    if d > 1.0 - 1e-12:
        q = qa + s * (qb - qa)
    else:
        theta = np.arccos(min(d, 1.0))
        sin_t = np.sin(theta)
        q = (np.sin((1.0 - s) * theta) * qa + np.sin(s * theta) * qb) / sin_t
    t = a.translation + s * (b.translation - a.translation)
    return RigidTransform(q, t)


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Ideal pinhole camera; ``extrinsics`` maps world points into the camera frame."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsics: RigidTransform = field(default_factory=RigidTransform)

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("resolution must be at least 1x1")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def camera_to_world(self) -> RigidTransform:
        return invert(self.extrinsics)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return self.camera_to_world.translation

    def with_extrinsics(self, extrinsics: RigidTransform) -> CameraModel:
        return CameraModel(self.fx, self.fy, self.cx, self.cy, self.width, self.height, extrinsics)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CameraModel):
            return NotImplemented
        return (
            (self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            == (other.fx, other.fy, other.cx, other.cy, other.width, other.height)
            and self.extrinsics == other.extrinsics
        )

    def to_dict(self) -> dict:
        return {
            "intrinsics": {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy},
            "resolution": {"width": self.width, "height": self.height},
            "extrinsics": self.extrinsics.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> CameraModel:
        k, r = d["intrinsics"], d["resolution"]
        return cls(
            float(k["fx"]), float(k["fy"]), float(k["cx"]), float(k["cy"]),
            int(r["width"]), int(r["height"]),
            RigidTransform.from_dict(d["extrinsics"]),
        )


def project(cam: CameraModel, point: Sequence[float]) -> tuple[np.ndarray, float]:
    """Project a world point; returns ``(pixel_xy, depth)``."""
    pc = cam.extrinsics.apply(np.asarray(point, dtype=np.float64))
    z = float(pc[2])
    if z <= _MIN_DEPTH:
        raise BehindCamera(f"camera-frame depth {z:.3g} <= {_MIN_DEPTH}")
    return np.array([cam.fx * pc[0] / z + cam.cx, cam.fy * pc[1] / z + cam.cy]), z


def unproject(cam: CameraModel, pixel: Sequence[float], depth: float) -> np.ndarray:
    """World point seen at ``pixel`` with camera-frame depth ``depth``."""
    u, v = pixel
    pc = np.array([(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth])
    return cam.camera_to_world.apply(pc)


def align_vectors(a: Sequence[float], b: Sequence[float]) -> np.ndarray:
    """Smallest rotation matrix taking direction ``a`` onto direction ``b``."""
    a = np.asarray(a, dtype=np.float64) / np.linalg.norm(a)
    b = np.asarray(b, dtype=np.float64) / np.linalg.norm(b)
    v = np.cross(a, b)
    c = float(a @ b)
    s = np.linalg.norm(v)
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        # antiparallel: half turn about any axis orthogonal to a
        perp = np.cross(a, [1.0, 0.0, 0.0] if abs(a[0]) < 0.9 else [0.0, 1.0, 0.0])
        return quat_to_matrix(quat_from_axis_angle(perp, np.pi))
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx * ((1.0 - c) / (s * s))


def look_at(eye: Sequence[float], target: Sequence[float], up: Sequence[float] = (0.0, 0.0, 1.0)) -> RigidTransform:
    """World→camera extrinsics for a camera at ``eye`` whose +z axis points at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(x) < 1e-9:
        raise ValueError("viewing direction parallel to up vector")
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    r_c2w = np.stack([x, y, z], axis=1)
    return invert(RigidTransform.from_rotation_matrix(r_c2w, eye))
