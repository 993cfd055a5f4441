"""Object pose processing: grasp windows, rigid attachment, substitution, perturbation."""

from __future__ import annotations

import logging
from typing import Collection, Sequence

import numpy as np

from .demo import Demonstration, GraspWindow
from .geometry import RigidTransform, compose, invert, quat_from_axis_angle
from .rng import key_rng

log = logging.getLogger(__name__)

__all__ = [
    "GraspWindow",
    "NoGraspDetected",
    "UnknownAsset",
    "detect_grasp_window",
    "fix_object",
    "apply_fix",
    "substitute_object",
    "perturb_poses",
    "sample_perturbation",
]

CLOSE_THRESHOLD = 0.3
OPEN_THRESHOLD = 0.7
# Beyond these the recorded arm motion is unlikely to still reach the object.
PLAUSIBLE_TRANSLATION = 0.10
PLAUSIBLE_ROTATION = np.deg2rad(30.0)


class NoGraspDetected(Exception):
    pass


class UnknownAsset(KeyError):
    pass


def detect_grasp_window(
    demo: Demonstration,
    close_threshold: float = CLOSE_THRESHOLD,
    open_threshold: float = OPEN_THRESHOLD,
    object_id: str | None = None,
) -> GraspWindow:
    """Find the first gripper close/open cycle.

    ``start`` is the first step with ``g < close_threshold``; ``end`` the first
    later step with ``g > open_threshold`` (or ``H``).  Steps are 1-based.  The
    relative pose is measured at ``start`` for ``object_id`` (default: the
    only tracked object).
    """
    if not open_threshold > close_threshold:
        raise ValueError("open_threshold must exceed close_threshold")
    g = demo.trajectory.g
    closed = np.flatnonzero(g < close_threshold)
    if closed.size == 0:
        raise NoGraspDetected(f"gripper never drops below {close_threshold}")
    start = int(closed[0])
    reopen = np.flatnonzero(g[start + 1:] > open_threshold)
    end = start + 1 + int(reopen[0]) if reopen.size else demo.H - 1

    if object_id is None:
        if len(demo.object_tracks) != 1:
            raise ValueError("object_id is required when several objects are tracked")
        object_id = next(iter(demo.object_tracks))
    if not demo.ee_poses:
        raise ValueError("demonstration carries no end-effector poses")
    rel = compose(invert(demo.ee_poses[start]), demo.object_tracks[object_id][start])
    return GraspWindow(start + 1, end + 1, rel)


def apply_fix(
    poses: Sequence[RigidTransform],
    window: GraspWindow,
    ee_poses: Sequence[RigidTransform],
    relative_pose: RigidTransform | None = None,
) -> tuple[RigidTransform, ...]:
    rel = window.relative_pose if relative_pose is None else relative_pose
    out = list(poses)
    for t in window.steps():
        out[t] = compose(ee_poses[t], rel)
    return tuple(out)


def fix_object(
    demo: Demonstration,
    object_id: str,
    window: GraspWindow,
    ee_poses: Sequence[RigidTransform] | None = None,
) -> Demonstration:
    """Rigidly attach ``object_id`` to the end effector inside ``window``.

    In-window poses become ``T_ee,t ∘ relative_pose``; the rest of the track is
    kept as recorded.  The window is stored on the returned demonstration so
    later substitutions can re-derive the attached poses.
    """
    ee = tuple(demo.ee_poses if ee_poses is None else ee_poses)
    if len(ee) != demo.H:
        raise ValueError("need one end-effector pose per step")
    if not 1 <= window.start_step <= window.end_step <= demo.H:
        raise ValueError(f"window [{window.start_step}, {window.end_step}] outside 1..{demo.H}")
    tracks = dict(demo.object_tracks)
    tracks[object_id] = apply_fix(tracks[object_id], window, ee)
    grasps = dict(demo.grasps)
    grasps[object_id] = window
    return demo.replace(object_tracks=tracks, grasps=grasps, ee_poses=ee)


def substitute_object(
    demo: Demonstration,
    object_id: str,
    new_asset_id: str,
    grasp_offset: RigidTransform | None = None,
    known_assets: Collection[str] | None = None,
) -> Demonstration:
    """Render ``object_id`` with ``new_asset_id`` while reusing its pose sequence.

    A non-identity ``grasp_offset`` re-attaches the new object at
    ``relative_pose ∘ grasp_offset`` for every in-window step.
    """
    if known_assets is not None and new_asset_id not in known_assets:
        raise UnknownAsset(new_asset_id)
    if object_id not in demo.object_tracks:
        raise KeyError(f"unknown object {object_id!r}")
    assets = dict(demo.object_assets)
    assets[object_id] = new_asset_id
    changes: dict = {"object_assets": assets}
    if grasp_offset is not None and grasp_offset != RigidTransform():
        window = demo.grasps.get(object_id)
        if window is None:
            raise ValueError(f"object {object_id!r} has no grasp window to offset")
        new_window = GraspWindow(
            window.start_step, window.end_step, compose(window.relative_pose, grasp_offset)
        )
        tracks = dict(demo.object_tracks)
        tracks[object_id] = apply_fix(tracks[object_id], new_window, demo.ee_poses)
        grasps = dict(demo.grasps)
        grasps[object_id] = new_window
        changes.update(object_tracks=tracks, grasps=grasps)
    return demo.replace(**changes)


def _unit_vector(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def sample_perturbation(
    rng: np.random.Generator,
    max_translation: float,
    max_rotation: float,
    scale_range: tuple[float, float] = (1.0, 1.0),
) -> tuple[np.ndarray, np.ndarray, float]:
    """Draw ``(translation, quaternion, scale)`` with uniform directions and magnitudes."""
    lo, hi = scale_range
    if max_translation < 0 or max_rotation < 0 or lo > hi or lo <= 0:
        raise ValueError("perturbation bounds must be non-negative and ordered")
    d_t = _unit_vector(rng) * rng.uniform(0.0, max_translation)
    axis = _unit_vector(rng)
    angle = rng.uniform(0.0, max_rotation)
    scale = rng.uniform(lo, hi)
    return d_t, quat_from_axis_angle(axis, angle), float(scale)


def perturb_poses(
    demo: Demonstration,
    object_id: str,
    seed: int | Sequence[int],
    max_translation: float,
    max_rotation: float,
    scale_range: tuple[float, float] = (1.0, 1.0),
) -> Demonstration:
    """Apply one rigid perturbation (and a scale factor) to the pre-grasp segment.

    The rotation pivots about the object's first recorded position so the
    whole segment moves as one rigid body.  Objects without a grasp window are
    perturbed over the full sequence.
    """
    if max_translation > PLAUSIBLE_TRANSLATION or max_rotation > PLAUSIBLE_ROTATION:
        log.warning(
            "perturbation bounds (%.3f m, %.3f rad) may exceed what the recorded arm motion reaches",
            max_translation, max_rotation,
        )
    lo, hi = scale_range
    if max_translation == 0 and max_rotation == 0 and lo == hi == 1.0:
        return demo
    rng = key_rng(seed)
    d_t, d_q, scale = sample_perturbation(rng, max_translation, max_rotation, scale_range)

    poses = list(demo.object_tracks[object_id])
    window = demo.grasps.get(object_id)
    stop = window.start_step - 1 if window is not None else len(poses)
    if stop > 0:
        pivot = poses[0].translation
        delta = compose(
            RigidTransform(translation=pivot + d_t),
            compose(RigidTransform(d_q), RigidTransform(translation=-pivot)),
        )
        for t in range(stop):
            poses[t] = compose(delta, poses[t])
    tracks = dict(demo.object_tracks)
    tracks[object_id] = tuple(poses)
    scales = dict(demo.object_scales)
    scales[object_id] = demo.scale_for(object_id) * scale
    return demo.replace(object_tracks=tracks, object_scales=scales)
