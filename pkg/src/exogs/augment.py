"""Augmentation plans and the four scene-level augmentation strategies.

Every random quantity is drawn from a stream keyed by
``(seed, episode, strategy, draw)`` (see :mod:`exogs.rng`), so an episode
can be regenerated on its own and the output never depends on scheduling.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageOps, UnidentifiedImageError

from .demo import Demonstration
from .geometry import (
    CameraModel,
    RigidTransform,
    align_vectors,
    invert,
    quat_from_axis_angle,
    quat_to_matrix,
)
from .gscene import ENVIRONMENT, AssetLibrary, apply_color_gain, scale_colors
from .poseproc import UnknownAsset, perturb_poses, substitute_object
from .render import RenderOutput, composite_background
from .rng import key_rng

log = logging.getLogger(__name__)

STRATEGIES = ("viewpoint", "color", "background", "object")
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


class PlanError(ValueError):
    pass


class ImageLoadError(OSError):
    pass


def _ordered(name: str, rng: Sequence[float], lo_bound: float | None = None, hi_bound: float | None = None):
    lo, hi = float(rng[0]), float(rng[1])
    if lo > hi:
        raise PlanError(f"{name}: range [{lo}, {hi}] is not ordered")
    if lo_bound is not None and lo < lo_bound or hi_bound is not None and hi > hi_bound:
        raise PlanError(f"{name}: range [{lo}, {hi}] outside [{lo_bound}, {hi_bound}]")
    return (lo, hi)


@dataclass(frozen=True)
class ViewpointPlan:
    count: int | None = None
    max_rot_deg: float = 10.0
    max_trans_m: float = 0.10
    look_at_point: tuple[float, float, float] | None = None

    def __post_init__(self) -> None:
        if self.max_rot_deg < 0 or self.max_trans_m < 0:
            raise PlanError("viewpoint bounds must be non-negative")
        if self.count is not None and self.count < 1:
            raise PlanError("viewpoint count must be >= 1")


@dataclass(frozen=True)
class LocalBrightness:
    count: int = 0
    radius_m: float = 0.15
    strength_range: tuple[float, float] = (0.6, 1.4)

    def __post_init__(self) -> None:
        object.__setattr__(self, "strength_range", _ordered("local strength", self.strength_range, 0.0, 4.0))


@dataclass(frozen=True)
class ColorPlan:
    rgb_scale_range: tuple[float, float] = (0.6, 1.4)
    global_brightness_range: tuple[float, float] = (0.7, 1.3)
    local_brightness: LocalBrightness = field(default_factory=LocalBrightness)

    def __post_init__(self) -> None:
        object.__setattr__(self, "rgb_scale_range", _ordered("rgb_scale_range", self.rgb_scale_range, 0.0, 4.0))
        object.__setattr__(
            self, "global_brightness_range",
            _ordered("global_brightness_range", self.global_brightness_range, 0.0, 4.0),
        )


@dataclass(frozen=True)
class BackgroundPlan:
    image_directory: str = "backgrounds"
    per_episode_count: int = 1


@dataclass(frozen=True)
class Substitution:
    object_id: str
    asset_id: str
    grasp_offset: RigidTransform | None = None


@dataclass(frozen=True)
class ObjectPlan:
    max_translation: float = 0.05
    max_rotation: float = float(np.deg2rad(15.0))
    scale_range: tuple[float, float] = (0.9, 1.1)
    substitutions: tuple[Substitution, ...] = ()
    objects: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.max_translation < 0 or self.max_rotation < 0:
            raise PlanError("object perturbation bounds must be non-negative")
        object.__setattr__(self, "scale_range", _ordered("scale_range", self.scale_range, 1e-6))


@dataclass(frozen=True)
class AugmentPlan:
    """What to generate per input demonstration.

    ``mixing="split"`` gives each episode exactly one strategy, dividing the
    ``multiplier`` episodes by ``ratios`` (even by default);
    ``mixing="combined"`` applies every enabled strategy to every episode.
    """

    seed: int = 0
    multiplier: int = 1
    viewpoint: ViewpointPlan | None = None
    color: ColorPlan | None = None
    background: BackgroundPlan | None = None
    object: ObjectPlan | None = None
    mixing: str = "split"
    ratios: dict[str, float] | None = None

    def __post_init__(self) -> None:
        if self.multiplier < 1:
            raise PlanError("multiplier must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise PlanError("seed must fit in 64 bits")
        if self.mixing not in ("split", "combined"):
            raise PlanError(f"unknown mixing mode {self.mixing!r}")
        if self.ratios:
            for k, v in self.ratios.items():
                if k not in STRATEGIES or v < 0:
                    raise PlanError(f"bad ratio {k}={v}")

    @property
    def enabled(self) -> list[str]:
        return [s for s in STRATEGIES if getattr(self, s) is not None]

    def to_dict(self) -> dict:
        def conv(o):
            if isinstance(o, RigidTransform):
                return o.to_dict()
            if hasattr(o, "__dataclass_fields__"):
                return conv(_shallow(o))
            if isinstance(o, dict):
                return {k: conv(v) for k, v in o.items()}
            if isinstance(o, (list, tuple)):
                return [conv(v) for v in o]
            return o

        d = {"seed": self.seed, "multiplier": self.multiplier, "mixing": self.mixing, "ratios": self.ratios}
        for s in STRATEGIES:
            sub = getattr(self, s)
            d[s] = None if sub is None else conv(_shallow(sub))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> AugmentPlan:
        def build(name, klass):
            v = d.get(name)
            if v is None or v is False or (isinstance(v, dict) and v.get("enabled") is False):
                return None
            v = {k: val for k, val in (v if isinstance(v, dict) else {}).items() if k != "enabled"}
            if name == "color" and "local_brightness" in v:
                v["local_brightness"] = LocalBrightness(**_tuples(v["local_brightness"]))
            if name == "object" and "substitutions" in v:
                v["substitutions"] = tuple(
                    Substitution(
                        s["object_id"], s["asset_id"],
                        RigidTransform.from_dict(s["grasp_offset"]) if s.get("grasp_offset") else None,
                    )
                    for s in v["substitutions"]
                )
            if name == "object" and v.get("objects") is not None:
                v["objects"] = tuple(v["objects"])
            return klass(**_tuples(v))

        try:
            return cls(
                seed=int(d.get("seed", 0)),
                multiplier=int(d.get("multiplier", 1)),
                viewpoint=build("viewpoint", ViewpointPlan),
                color=build("color", ColorPlan),
                background=build("background", BackgroundPlan),
                object=build("object", ObjectPlan),
                mixing=d.get("mixing", "split"),
                ratios=d.get("ratios"),
            )
        except TypeError as exc:
            raise PlanError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> AugmentPlan:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _shallow(obj) -> dict:
    return {k: getattr(obj, k) for k in obj.__dataclass_fields__}


def _tuples(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


# strategies ------------------------------------------------------------------


def _uniform_ball(rng: np.random.Generator, radius: float) -> np.ndarray:
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    return d * radius * rng.uniform() ** (1.0 / 3.0)


def augment_viewpoint(cam: CameraModel, plan: ViewpointPlan, rng: np.random.Generator) -> CameraModel:
    """Move the camera inside a ball, re-aim it at the look-at point, then jitter it.

    The re-aim uses the smallest rotation that keeps the look-at point on the
    same viewing ray, so zero bounds leave the camera untouched.  Intrinsics
    never change.
    """
    if plan.max_trans_m == 0 and plan.max_rot_deg == 0:
        return cam
    c2w = invert(cam.extrinsics)
    r = c2w.rotation_matrix
    center = c2w.translation
    target = (
        center + r[:, 2] if plan.look_at_point is None else np.asarray(plan.look_at_point, dtype=np.float64)
    )
    new_center = center + _uniform_ball(rng, plan.max_trans_m)
    r_aimed = align_vectors(target - center, target - new_center) @ r
    axis = rng.normal(size=3)
    angle = rng.uniform(0.0, np.deg2rad(plan.max_rot_deg))
    r_new = r_aimed @ quat_to_matrix(quat_from_axis_angle(axis, angle))
    return cam.with_extrinsics(invert(RigidTransform.from_rotation_matrix(r_new, new_center)))


def augment_color(library: AssetLibrary, plan: ColorPlan, rng: np.random.Generator) -> tuple[AssetLibrary, dict]:
    """Per-asset RGB scaling, a global brightness factor and local light spots.

    Returns the edited library and a record of the drawn factors.
    """
    lo, hi = plan.rgb_scale_range
    glo, ghi = plan.global_brightness_range
    brightness = float(rng.uniform(glo, ghi))
    draws: dict = {"global_brightness": brightness, "rgb_scale": {}, "local": []}
    edited = {}
    for aid in sorted(library.assets):
        k = rng.uniform(lo, hi, size=3)
        draws["rgb_scale"][aid] = k.tolist()
        edited[aid] = scale_colors(library.assets[aid], k * brightness)

    lb = plan.local_brightness
    env_ids = [a for a in sorted(library.assets) if library.bindings.get(a) == ENVIRONMENT]
    if lb.count > 0 and env_ids:
        pts = np.concatenate([library.assets[a].positions for a in env_ids])
        centers = pts[rng.integers(0, len(pts), size=lb.count)]
        strengths = rng.uniform(*lb.strength_range, size=lb.count)
        draws["local"] = [{"center": c.tolist(), "strength": float(s)} for c, s in zip(centers, strengths)]
        for aid in env_ids:
            p = edited[aid].positions
            gain = np.ones(len(p))
            for c, s in zip(centers, strengths):
                gain = np.where(np.linalg.norm(p - c, axis=1) <= lb.radius_m, gain * s, gain)
            edited[aid] = apply_color_gain(edited[aid], gain[:, None])
    return library.replace_assets(edited), draws


def list_background_images(directory: str | Path) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise ImageLoadError(f"background directory not found: {d}")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ImageLoadError(f"no images in {d}")
    return files


def load_background(path: str | Path, width: int, height: int) -> np.ndarray:
    """Center-crop to the target aspect ratio, resize, and return float RGB in [0, 1]."""
    try:
        with Image.open(path) as im:
            im = ImageOps.fit(im.convert("RGB"), (width, height), Image.Resampling.BILINEAR)
            return np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageLoadError(f"cannot load background {path}: {exc}") from exc


def augment_background(output: RenderOutput, image: np.ndarray) -> RenderOutput:
    """Residual-transmittance compositing; instance and depth are untouched."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != output.rgb.shape:
        raise ImageLoadError(f"background {image.shape} does not match render {output.rgb.shape}")
    return composite_background(output, image)


def augment_objects(
    demo: Demonstration,
    plan: ObjectPlan,
    key: Sequence[int],
    known_assets=None,
) -> tuple[Demonstration, dict]:
    """Substitute and perturb tracked objects; actions are never touched."""
    draws: dict = {}
    objects = sorted(demo.object_tracks) if plan.objects is None else list(plan.objects)
    for k, oid in enumerate(objects):
        rng = key_rng(list(key) + [k])
        subs = [s for s in plan.substitutions if s.object_id == oid]
        choice = int(rng.integers(0, len(subs) + 1)) if subs else 0
        if choice:
            s = subs[choice - 1]
            if known_assets is not None and s.asset_id not in known_assets:
                raise UnknownAsset(s.asset_id)
            demo = substitute_object(demo, oid, s.asset_id, s.grasp_offset)
            draws[f"{oid}.substitute"] = s.asset_id
        demo = perturb_poses(
            demo, oid, list(key) + [k, 1_000_000], plan.max_translation, plan.max_rotation, plan.scale_range
        )
        draws[f"{oid}.scale"] = demo.scale_for(oid)
    return demo, draws


# planning ----------------------------------------------------------------------


@dataclass
class EpisodeSpec:
    """Everything needed to render one output episode."""

    episode_id: str
    index: int
    strategies: tuple[str, ...]
    demo: Demonstration
    library: AssetLibrary
    camera: CameraModel
    backgrounds: tuple[str, ...] = ()
    draws: dict = field(default_factory=dict)
    seed: int = 0

    def background_for(self, step: int, H: int) -> str | None:
        if not self.backgrounds:
            return None
        return self.backgrounds[step * len(self.backgrounds) // H]


def allocate(multiplier: int, strategies: Sequence[str], ratios: dict[str, float] | None) -> list[tuple[str, ...]]:
    """Strategy tuple for each episode index, largest-remainder split in block order."""
    if not strategies:
        return [()] * multiplier
    w = np.array([float((ratios or {}).get(s, 1.0)) for s in strategies])
    if w.sum() <= 0:
        raise PlanError("strategy ratios sum to zero")
    exact = multiplier * w / w.sum()
    counts = np.floor(exact).astype(int)
    rem = multiplier - counts.sum()
    order = sorted(range(len(strategies)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:rem]:
        counts[i] += 1
    out: list[tuple[str, ...]] = []
    for s, c in zip(strategies, counts):
        out += [(s,)] * int(c)
    return out


def run_plan(
    demo: Demonstration,
    library: AssetLibrary,
    plan: AugmentPlan,
    plan_root: str | Path | None = None,
) -> list[EpisodeSpec]:
    """Expand one demonstration into ``plan.multiplier`` episode descriptors."""
    enabled = plan.enabled
    if plan.mixing == "combined" or not enabled:
        assignment = [tuple(enabled)] * plan.multiplier
    else:
        assignment = allocate(plan.multiplier, enabled, plan.ratios)
    base_cam = demo.cameras[demo.primary_camera]
    images: list[Path] = []
    if plan.background is not None:
        bg_dir = Path(plan.background.image_directory)
        if not bg_dir.is_absolute() and plan_root is not None:
            bg_dir = Path(plan_root) / bg_dir
        images = list_background_images(bg_dir)

    episodes = []
    ordinal = {s: 0 for s in STRATEGIES}
    for i, strategies in enumerate(assignment):
        try:
            episodes.append(_plan_episode(demo, library, plan, i, strategies, ordinal, base_cam, images))
        except Exception as exc:
            raise type(exc)(f"episode {i}: {exc}") from exc
        for s in strategies:
            ordinal[s] += 1
    return episodes


def _plan_episode(demo, library, plan, i, strategies, ordinal, cam, images) -> EpisodeSpec:
    draws: dict = {}
    ep_demo, ep_lib, ep_cam, bgs = demo, library, cam, ()
    if "viewpoint" in strategies:
        vp = plan.viewpoint
        k = ordinal["viewpoint"] % vp.count if vp.count else ordinal["viewpoint"]
        # keyed by viewpoint ordinal so `count` distinct cameras repeat exactly
        ep_cam = augment_viewpoint(cam, vp, key_rng(plan.seed, 0, "viewpoint", k))
        draws["viewpoint"] = {"draw": k, "extrinsics": ep_cam.extrinsics.to_dict()}
    if "color" in strategies:
        ep_lib, draws["color"] = augment_color(library, plan.color, key_rng(plan.seed, i, "color", 0))
    if "background" in strategies:
        rng = key_rng(plan.seed, i, "background", 0)
        picks = rng.integers(0, len(images), size=max(1, plan.background.per_episode_count))
        bgs = tuple(str(images[j]) for j in picks)
        draws["background"] = [Path(b).name for b in bgs]
    if "object" in strategies:
        ep_demo, draws["object"] = augment_objects(
            demo, plan.object, [plan.seed, i, 4], known_assets=set(library.assets)
        )
    tag = "-".join(strategies) if strategies else "replay"
    return EpisodeSpec(
        episode_id=f"{demo.demo_id}_{i:04d}_{tag}",
        index=i,
        strategies=tuple(strategies),
        demo=ep_demo,
        library=ep_lib,
        camera=ep_cam,
        backgrounds=bgs,
        draws=draws,
        seed=plan.seed,
    )
